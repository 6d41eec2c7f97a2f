"""Dense float64 matrices, deterministic kernels and seeded random streams.

A "matrix" throughout the package is a C-contiguous 2-D ``numpy.ndarray`` of
``float64``. :func:`as_matrix` is the single entry point that enforces this.
"""

from __future__ import annotations

import os
from typing import Any

import numpy as np

from spikeseq import kernels

DEBUG = os.environ.get("SPIKESEQ_DEBUG", "0") not in ("", "0")


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """A NaN or infinity appeared where only finite values are allowed."""


def check_finite(x: np.ndarray, what: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        bad = int(np.size(x) - np.count_nonzero(np.isfinite(x)))
        raise NonFiniteError(f"{what} has {bad} non-finite entries")
    return x


def as_matrix(data: Any, *, finite: bool = True) -> np.ndarray:
    """Copy-free conversion to a contiguous 2-D float64 array.

    Scalars and 1-D input are promoted to a single row.
    """
    a = np.ascontiguousarray(data, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {a.shape}")
    if finite:
        check_finite(a, "matrix")
    return a


def matmul(a: Any, b: Any) -> np.ndarray:
    """Matrix product with a fixed left-to-right summation order.

    Both kernel backends accumulate ``a[i, k] * b[k, j]`` for k = 0, 1, ...
    in that order, so results are bitwise identical across runs and backends.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = kernels.matmul_fixed(a, b)
    if DEBUG:
        check_finite(out, "matmul result")
    return out


_EWISE = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def ewise(a: Any, b: Any, kind: str) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise DimensionError(f"ewise {kind} shape mismatch: {a.shape} vs {b.shape}")
    try:
        op = _EWISE[kind]
    except KeyError:
        raise ValueError(f"unknown element-wise op {kind!r}; expected add, sub or mul") from None
    out = op(a, b)
    if DEBUG:
        check_finite(out, f"ewise {kind} result")
    return out


class Rng:
    """Seeded PCG64 stream.

    ``(seed, stream_id)`` fully determines the sequence of draws; PCG64 output
    is specified bit-for-bit, so draws agree across platforms.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def spawn(self, stream_id: int) -> "Rng":
        return Rng(self.seed, self.stream_id * 1_000_003 + stream_id + 1)

    def uniform(self, rows: int, cols: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        return rng_uniform(self, rows, cols, lo, hi)

    def normal(self, rows: int, cols: int, scale: float = 1.0) -> np.ndarray:
        return self.gen.normal(0.0, scale, size=(rows, cols))

    def integers(self, lo: int, hi: int, size=None):
        return self.gen.integers(lo, hi, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def random(self, size=None):
        return self.gen.random(size)

    def get_state(self) -> dict:
        return {"seed": self.seed, "stream_id": self.stream_id,
                "bit_generator": self.gen.bit_generator.state}

    def set_state(self, state: dict) -> None:
        self.seed = int(state["seed"])
        self.stream_id = int(state["stream_id"])
        self.gen.bit_generator.state = state["bit_generator"]


def rng_uniform(rng: Rng, rows: int, cols: int, lo: float, hi: float) -> np.ndarray:
    if not lo < hi:
        raise ValueError(f"rng_uniform needs lo < hi, got lo={lo}, hi={hi}")
    return rng.gen.uniform(lo, hi, size=(rows, cols))


def glorot_uniform(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    # variance 2 / (fan_in + fan_out)
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng_uniform(rng, fan_in, fan_out, -limit, limit)


def orthogonal(rng: Rng, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(n, n))
    # sign fix makes the draw Haar-distributed
    return np.ascontiguousarray(q * np.sign(np.diag(r)))
