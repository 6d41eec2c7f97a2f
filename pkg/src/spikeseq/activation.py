"""Spiking output generation: unit step, multi-bit quantizer, surrogate slope.

Outputs are integer codes in ``[0, 2**n_bits - 1]`` stored as float64. The
threshold is always a whole multiple ``k`` of the code width ``b / 2**n_bits``
where ``b`` is a running estimate of the largest membrane potential.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from spikeseq import kernels
from spikeseq.numerics import as_matrix

ResetMode = Literal["code", "dequantized"]


class TrackerStateError(RuntimeError):
    """Attempt to update a frozen range tracker."""


@dataclass(frozen=True)
class QuantConfig:
    n_bits: int = 6
    k_threshold: int = 4
    reset_mode: ResetMode = "dequantized"

    def __post_init__(self):
        if not 1 <= self.n_bits <= 16:
            raise ValueError(f"n_bits must be in [1, 16], got {self.n_bits}")
        if not 0 <= self.k_threshold < 2 ** self.n_bits:
            raise ValueError(
                f"k_threshold must be in [0, {2 ** self.n_bits - 1}] for {self.n_bits} bits, "
                f"got {self.k_threshold}")
        if self.reset_mode not in ("code", "dequantized"):
            raise ValueError(f"unknown reset_mode {self.reset_mode!r}")

    @property
    def levels(self) -> float:
        return float(2 ** self.n_bits)

    def threshold(self, b: float) -> float:
        return self.k_threshold * b / self.levels

    def reset_scale(self, b: float) -> float:
        """Potential removed per unit of emitted code."""
        if self.reset_mode == "code":
            return self.threshold(b)
        return b / self.levels


@dataclass(frozen=True)
class SurrogateConfig:
    kind: Literal["clipped-linear"] = "clipped-linear"


@dataclass
class RangeTracker:
    """EMA of the per-batch maximum membrane potential."""

    b_ema: float | None = None
    momentum: float = 0.99
    frozen: bool = False

    def __post_init__(self):
        if not 0.0 < self.momentum < 1.0:
            raise ValueError(f"momentum must be in (0, 1), got {self.momentum}")

    @property
    def b(self) -> float:
        if self.b_ema is None:
            raise TrackerStateError("range tracker has not seen any batch yet")
        return self.b_ema


def ema_update(t: RangeTracker, batch_max: float) -> RangeTracker:
    if t.frozen:
        raise TrackerStateError("cannot update a frozen range tracker")
    if not np.isfinite(batch_max):
        raise ValueError(f"batch_max must be finite, got {batch_max}")
    if batch_max <= 0.0:
        # keeps b > 0; a batch with no positive potential carries no range information
        if t.b_ema is None:
            raise ValueError("first range update needs a positive batch maximum")
        return t
    if t.b_ema is None:
        t.b_ema = float(batch_max)
    else:
        t.b_ema = t.momentum * t.b_ema + (1.0 - t.momentum) * float(batch_max)
    return t


def unit_step(v, gamma: float) -> np.ndarray:
    v = as_matrix(v)
    return (v > gamma).astype(np.float64)


def _check_b(b: float) -> None:
    if not b > 0.0:
        raise ValueError(f"range b must be positive, got {b}")


def quantize(v, b: float, cfg: QuantConfig) -> np.ndarray:
    """Integer code per entry: 0 at or below the threshold, else
    ``floor(v / b * 2**n_bits)`` clamped to the top code."""
    _check_b(b)
    v = np.ascontiguousarray(v, dtype=np.float64)
    return kernels.quantize_codes(v, float(b), cfg.levels, cfg.threshold(b))


def smooth_quantize(v, b: float, cfg: QuantConfig) -> np.ndarray:
    """Differentiable ramp ``clip(v, 0, b) * 2**n_bits / b`` used in smooth mode."""
    _check_b(b)
    v = np.ascontiguousarray(v, dtype=np.float64)
    return kernels.smooth_codes(v, float(b), cfg.levels)


def surrogate_grad(v, b: float, cfg: QuantConfig,
                   s: SurrogateConfig = SurrogateConfig()) -> np.ndarray:
    """Straight-through slope: ``2**n_bits / b`` on the open interval (0, b), else 0.

    The slope ignores the threshold so sub-threshold potentials still receive
    gradient.
    """
    _check_b(b)
    if s.kind != "clipped-linear":
        raise ValueError(f"unsupported surrogate {s.kind!r}")
    v = np.ascontiguousarray(v, dtype=np.float64)
    return kernels.surrogate(v, float(b), cfg.levels)
