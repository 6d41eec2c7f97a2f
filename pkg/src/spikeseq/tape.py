"""Saved forward activations for backpropagation through time."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Tape:
    """Stacked per-step activations, time on the leading axis.

    ``x`` is ``(N, batch, m)``; ``I``, ``V``, ``Y`` (and ``F``, ``C``, ``Ac``
    for gated layers) are ``(N, batch, n)``. ``drives`` holds the input weight
    sums that entered the recurrence (``A`` or ``Af``/``Ac``).
    """

    kind: str
    x: np.ndarray | None = None
    I: np.ndarray | None = None
    V: np.ndarray | None = None
    Y: np.ndarray | None = None
    F: np.ndarray | None = None
    C: np.ndarray | None = None
    Ac: np.ndarray | None = None
    drives: dict = field(default_factory=dict)
    b: float = 1.0
    smooth: bool = False
    mask: np.ndarray | None = None
    pin_forget: float | None = None

    def __len__(self) -> int:
        return 0 if self.V is None else self.V.shape[0]

    @property
    def complete(self) -> bool:
        need = [self.x, self.I, self.V, self.Y]
        if self.kind != "lif":
            need += [self.F, self.C, self.Ac]
        return all(a is not None for a in need) and all(len(a) == len(self) for a in need)

    def record(self, n: int) -> dict:
        """Activations of step ``n`` (0-based) as a dict of ``(batch, .)`` arrays."""
        out = {"x": self.x[n], "I": self.I[n], "V": self.V[n], "y": self.Y[n]}
        if self.kind != "lif":
            out.update(F=self.F[n], C=self.C[n])
        return out
