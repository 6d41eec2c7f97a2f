"""Discrete-time leaky integrate-and-fire layer.

Per step, with row-vector inputs ``x`` (batch x m) and weights ``W`` (m x n)::

    I <- beta * I + x @ W
    V <- alpha * V + I - reset_scale * Y_prev
    Y <- quantize(V)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from spikeseq import kernels
from spikeseq.activation import QuantConfig, RangeTracker, quantize, smooth_quantize
from spikeseq.numerics import DimensionError, NonFiniteError, as_matrix, matmul
from spikeseq.tape import Tape


@dataclass
class LifParams:
    W: np.ndarray
    alpha: float = 0.95
    beta: float = 0.9
    quant: QuantConfig = field(default_factory=QuantConfig)
    tracker: RangeTracker = field(default_factory=RangeTracker)

    def __post_init__(self):
        self.W = as_matrix(self.W)
        for name in ("alpha", "beta"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {val}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.W.shape

    def weights(self) -> dict[str, np.ndarray]:
        return {"W": self.W}


@dataclass
class LayerState:
    I: np.ndarray
    V: np.ndarray
    Y_prev: np.ndarray


def reset_state(batch: int, n: int) -> LayerState:
    if batch < 1 or n < 1:
        raise ValueError(f"batch and n must be >= 1, got {batch}, {n}")
    return LayerState(np.zeros((batch, n)), np.zeros((batch, n)), np.zeros((batch, n)))


def _emit(v, b, quant, smooth):
    return smooth_quantize(v, b, quant) if smooth else quantize(v, b, quant)


def _check_state(s: LayerState, batch: int, n: int) -> None:
    for name in ("I", "V", "Y_prev"):
        a = getattr(s, name)
        if a.shape != (batch, n):
            raise DimensionError(f"state {name} has shape {a.shape}, expected {(batch, n)}")
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(f"state {name} is not finite")


def membrane_update(alpha, v, i, y_prev, quant: QuantConfig, b: float, smooth: bool = False):
    """Shared membrane/output step; returns ``(V', Y)``."""
    v_new = alpha * v + i - quant.reset_scale(b) * y_prev
    return v_new, _emit(v_new, b, quant, smooth)


def lif_step(p: LifParams, s: LayerState, x, smooth: bool = False) -> tuple[LayerState, np.ndarray]:
    x = as_matrix(x)
    m, n = p.shape
    if x.shape[1] != m:
        raise DimensionError(f"input has {x.shape[1]} features, layer expects {m}")
    _check_state(s, x.shape[0], n)
    b = p.tracker.b
    i_new = p.beta * s.I + matmul(x, p.W)
    v_new, y = membrane_update(p.alpha, s.V, i_new, s.Y_prev, p.quant, b, smooth)
    return LayerState(i_new, v_new, y), y


def stack_inputs(x_seq, m: int) -> np.ndarray:
    """Sequence of ``(batch, m)`` matrices -> ``(N, batch, m)`` array."""
    if isinstance(x_seq, np.ndarray) and x_seq.ndim == 3:
        x = np.ascontiguousarray(x_seq, dtype=np.float64)
    else:
        x_seq = list(x_seq)
        if not x_seq:
            raise ValueError("input sequence is empty")
        mats = [as_matrix(xi) for xi in x_seq]
        if len({mi.shape for mi in mats}) != 1:
            raise DimensionError("inconsistent input shapes across time-steps")
        x = np.stack(mats)
    if x.shape[0] == 0:
        raise ValueError("input sequence is empty")
    if x.shape[2] != m:
        raise DimensionError(f"input has {x.shape[2]} features, layer expects {m}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("input sequence is not finite")
    return x


def input_drive(x: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``x[t] @ W`` for every step with the fixed-order product."""
    N, B, m = x.shape
    return matmul(x.reshape(N * B, m), W).reshape(N, B, W.shape[1])


def lif_scan(p: LifParams, A: np.ndarray, b: float, smooth: bool = False):
    """Run the recurrence on precomputed input drives ``A`` (N x batch x n)."""
    q = p.quant
    return kernels.lif_scan(A, p.alpha, p.beta, b, q.levels, q.threshold(b),
                            q.reset_scale(b), smooth)


def lif_forward(p: LifParams, x_seq, tape: Tape | None = None, smooth: bool = False) -> np.ndarray:
    """Apply :func:`lif_step` for every step from a zero state.

    Returns the outputs as an ``(N, batch, n)`` array.
    """
    x = stack_inputs(x_seq, p.shape[0])
    b = p.tracker.b
    A = input_drive(x, p.W)
    I, V, Y = lif_scan(p, A, b, smooth)
    if tape is not None:
        tape.kind = "lif"
        tape.x, tape.I, tape.V, tape.Y = x, I, V, Y
        tape.drives = {"A": A}
        tape.b, tape.smooth = b, smooth
    return Y
