"""Per-feature batch normalisation of weight sums."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS = 1e-5


@dataclass
class BnState:
    scale: np.ndarray
    shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    mode: str = "train"

    @classmethod
    def create(cls, n: int, momentum: float = 0.1) -> "BnState":
        return cls(np.ones(n), np.zeros(n), np.zeros(n), np.ones(n), momentum)


@dataclass
class BnCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    scale: np.ndarray
    train: bool = True
    shape: tuple = field(default=())


def batchnorm_forward(x: np.ndarray, bn: BnState) -> tuple[np.ndarray, BnCache]:
    """Normalise the last axis of ``x`` over all leading axes."""
    shape = x.shape
    x2 = x.reshape(-1, shape[-1])
    train = bn.mode == "train"
    if train:
        rows = x2.shape[0]
        if rows < 2:
            raise ValueError("batch normalisation in train mode needs at least 2 rows")
        # column sums through BLAS are several times faster than ndarray.sum(axis=0)
        ones = np.ones(rows)
        mean = (ones @ x2) / rows
        xhat = x2 - mean
        var = (ones @ (xhat * xhat)) / rows
        bn.running_mean = (1.0 - bn.momentum) * bn.running_mean + bn.momentum * mean
        bn.running_var = (1.0 - bn.momentum) * bn.running_var + bn.momentum * var
    else:
        mean, var = bn.running_mean, bn.running_var
        xhat = x2 - mean
    inv_std = 1.0 / np.sqrt(var + EPS)
    xhat *= inv_std
    out = xhat * bn.scale
    out += bn.shift
    return out.reshape(shape), BnCache(xhat, inv_std, bn.scale.copy(), train, shape)


def batchnorm(x: np.ndarray, bn: BnState) -> np.ndarray:
    return batchnorm_forward(x, bn)[0]


def batchnorm_backward(dout: np.ndarray, cache: BnCache):
    """Returns ``(dx, dscale, dshift)``."""
    d2 = dout.reshape(-1, dout.shape[-1])
    xhat = cache.xhat
    rows = d2.shape[0]
    ones = np.ones(rows)
    dshift = ones @ d2
    dscale = ones @ (d2 * xhat)
    gain = cache.scale * cache.inv_std
    if cache.train:
        dx = xhat * (dscale / rows)
        dx += dshift / rows
        np.subtract(d2, dx, out=dx)
        dx *= gain
    else:
        dx = d2 * gain
    return dx.reshape(cache.shape), dscale, dshift


def fold(bn: BnState) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode affine map as ``(gain, offset)`` per feature."""
    gain = bn.scale / np.sqrt(bn.running_var + EPS)
    return gain, bn.shift - bn.running_mean * gain
