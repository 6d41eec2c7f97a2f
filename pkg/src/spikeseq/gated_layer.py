"""Gated synaptic-current layers.

The synaptic current becomes a convex blend of its previous value and a
non-negative candidate::

    F = sigmoid(x @ W_fi [+ y_scale * Y_prev @ W_fr])
    C = relu(x @ W_ci [+ y_scale * Y_prev @ W_cr])
    I <- F * I + (1 - F) * C

``v1`` gates on the input only, ``v2`` also on the layer's previous output
codes (bracketed terms). Membrane and output updates are the LIF ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from spikeseq import kernels
from spikeseq.activation import QuantConfig, RangeTracker
from spikeseq.lif_layer import (
    LayerState,
    LifParams,
    _check_state,
    input_drive,
    membrane_update,
    stack_inputs,
)
from spikeseq.numerics import DimensionError, as_matrix, matmul
from spikeseq.tape import Tape

Variant = Literal["v1", "v2"]


@dataclass
class GatedParams:
    variant: Variant
    W_fi: np.ndarray
    W_ci: np.ndarray
    W_fr: np.ndarray | None = None
    W_cr: np.ndarray | None = None
    alpha: float = 0.95
    quant: QuantConfig = field(default_factory=QuantConfig)
    tracker: RangeTracker = field(default_factory=RangeTracker)
    y_scale: float = 1.0
    # test hook: force every forget gate to this constant
    pin_forget: float | None = None

    def __post_init__(self):
        self.W_fi = as_matrix(self.W_fi)
        self.W_ci = as_matrix(self.W_ci)
        if self.W_fi.shape != self.W_ci.shape:
            raise DimensionError(f"W_fi {self.W_fi.shape} and W_ci {self.W_ci.shape} differ")
        n = self.W_fi.shape[1]
        if self.variant == "v1":
            if self.W_fr is not None or self.W_cr is not None:
                raise ValueError("v1 layers take no recurrent gate weights")
        elif self.variant == "v2":
            if self.W_fr is None or self.W_cr is None:
                raise ValueError("v2 layers need W_fr and W_cr")
            self.W_fr = as_matrix(self.W_fr)
            self.W_cr = as_matrix(self.W_cr)
            for name in ("W_fr", "W_cr"):
                if getattr(self, name).shape != (n, n):
                    raise DimensionError(f"{name} must be {(n, n)}, got {getattr(self, name).shape}")
        else:
            raise ValueError(f"unknown gated variant {self.variant!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.pin_forget is not None and not 0.0 <= self.pin_forget <= 1.0:
            raise ValueError("pin_forget must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.W_fi.shape

    @property
    def recurrent(self) -> bool:
        return self.variant == "v2"

    def weights(self) -> dict[str, np.ndarray]:
        w = {"W_fi": self.W_fi, "W_ci": self.W_ci}
        if self.recurrent:
            w.update(W_fr=self.W_fr, W_cr=self.W_cr)
        return w


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def gated_step(p: GatedParams, s: LayerState, x, smooth: bool = False,
               mask=None) -> tuple[LayerState, np.ndarray]:
    x = as_matrix(x)
    m, n = p.shape
    if x.shape[1] != m:
        raise DimensionError(f"input has {x.shape[1]} features, layer expects {m}")
    _check_state(s, x.shape[0], n)
    b = p.tracker.b
    af = matmul(x, p.W_fi)
    ac = matmul(x, p.W_ci)
    if p.recurrent:
        ys = p.y_scale * s.Y_prev
        af = af + matmul(ys, p.W_fr)
        ac = ac + matmul(ys, p.W_cr)
    f = np.full_like(af, p.pin_forget) if p.pin_forget is not None else _sigmoid(af)
    c = np.maximum(ac, 0.0)
    if mask is not None:
        c = c * mask
    i_new = f * s.I + (1.0 - f) * c
    v_new, y = membrane_update(p.alpha, s.V, i_new, s.Y_prev, p.quant, b, smooth)
    return LayerState(i_new, v_new, y), y


def gated_scan(p: GatedParams, Af: np.ndarray, Ac: np.ndarray, b: float,
               smooth: bool = False, mask: np.ndarray | None = None):
    """Run the gated recurrence on precomputed input drives (N x batch x n).

    Returns ``(I, V, Y, F, C, Ac_total)``.
    """
    q = p.quant
    _, B, n = Af.shape
    if mask is None:
        mask = np.ones((B, n))
    if p.recurrent:
        Wfr, Wcr = p.W_fr, p.W_cr
    else:
        Wfr = Wcr = np.zeros((1, 1))
    pin = np.nan if p.pin_forget is None else float(p.pin_forget)
    return kernels.gated_scan(Af, Ac, Wfr, Wcr, mask, p.alpha, b, q.levels, q.threshold(b),
                              q.reset_scale(b), float(p.y_scale), smooth, pin, p.recurrent)


def gated_forward(p: GatedParams, x_seq, tape: Tape | None = None, smooth: bool = False,
                  mask: np.ndarray | None = None) -> np.ndarray:
    x = stack_inputs(x_seq, p.shape[0])
    b = p.tracker.b
    Af = input_drive(x, p.W_fi)
    Ac = input_drive(x, p.W_ci)
    I, V, Y, F, C, AcT = gated_scan(p, Af, Ac, b, smooth, mask)
    if tape is not None:
        tape.kind = "gated_" + p.variant
        tape.x, tape.I, tape.V, tape.Y, tape.F, tape.C, tape.Ac = x, I, V, Y, F, C, AcT
        tape.drives = {"Af": Af, "Ac": Ac}
        tape.b, tape.smooth, tape.mask, tape.pin_forget = b, smooth, mask, p.pin_forget
    return Y


def param_count(p) -> int:
    """Synaptic weight count of a layer (no normalisation parameters)."""
    from spikeseq.baselines import GruParams, LstmParams

    if isinstance(p, LifParams):
        m, n = p.shape
        return m * n
    if isinstance(p, GatedParams):
        m, n = p.shape
        return 2 * m * n if p.variant == "v1" else 2 * (m * n + n * n)
    if isinstance(p, (GruParams, LstmParams)):
        return p.param_count()
    raise TypeError(f"no parameter count for {type(p).__name__}")


def arch_param_count(arch: str, m: int, n: int) -> int:
    """Closed-form parameter count per architecture name."""
    counts = {
        "lif": m * n,
        "gated_v1": 2 * m * n,
        "gated_v2": 2 * (m * n + n * n),
        "gru": 3 * (m * n + n * n),
        "lstm": 4 * (m * n + n * n),
    }
    try:
        return counts[arch]
    except KeyError:
        raise ValueError(f"unknown architecture {arch!r}") from None
