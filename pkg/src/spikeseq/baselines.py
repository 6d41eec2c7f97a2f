"""Bias-free unidirectional GRU and LSTM cells.

Gate weights are stored per gate: input matrices ``W_*`` (m x n) and
recurrent matrices ``U_*`` (n x n), which gives exactly 3(mn + n^2) and
4(mn + n^2) weights. The sequence scans take precomputed input drives so the
network wrapper can normalise them first.
"""

from __future__ import annotations

import numpy as np

from spikeseq.numerics import DimensionError, Rng, as_matrix, glorot_uniform, matmul, orthogonal

GRU_GATES = ("z", "r", "h")
LSTM_GATES = ("i", "f", "o", "g")


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


class _CellParams:
    GATES: tuple = ()

    def __init__(self, W: dict, U: dict):
        self.W = {g: as_matrix(W[g]) for g in self.GATES}
        self.U = {g: as_matrix(U[g]) for g in self.GATES}
        m, n = self.W[self.GATES[0]].shape
        for g in self.GATES:
            if self.W[g].shape != (m, n):
                raise DimensionError(f"W_{g} must be {(m, n)}, got {self.W[g].shape}")
            if self.U[g].shape != (n, n):
                raise DimensionError(f"U_{g} must be {(n, n)}, got {self.U[g].shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.W[self.GATES[0]].shape

    def param_count(self) -> int:
        m, n = self.shape
        return len(self.GATES) * (m * n + n * n)

    def weights(self) -> dict[str, np.ndarray]:
        out = {f"W_{g}": self.W[g] for g in self.GATES}
        out.update({f"U_{g}": self.U[g] for g in self.GATES})
        return out

    @classmethod
    def init(cls, rng: Rng, m: int, n: int):
        W = {g: glorot_uniform(rng, m, n) for g in cls.GATES}
        U = {g: orthogonal(rng, n) for g in cls.GATES}
        return cls(W, U)


class GruParams(_CellParams):
    GATES = GRU_GATES


class LstmParams(_CellParams):
    GATES = LSTM_GATES


def _check_x(p, x):
    x = as_matrix(x)
    if x.shape[1] != p.shape[0]:
        raise DimensionError(f"input has {x.shape[1]} features, cell expects {p.shape[0]}")
    return x


def gru_step(p: GruParams, h, x) -> np.ndarray:
    x = _check_x(p, x)
    h = as_matrix(h)
    z = _sigmoid(matmul(x, p.W["z"]) + matmul(h, p.U["z"]))
    r = _sigmoid(matmul(x, p.W["r"]) + matmul(h, p.U["r"]))
    hh = np.tanh(matmul(x, p.W["h"]) + matmul(r * h, p.U["h"]))
    return z * h + (1.0 - z) * hh


def lstm_step(p: LstmParams, state, x) -> tuple[np.ndarray, np.ndarray]:
    x = _check_x(p, x)
    h, c = (as_matrix(a) for a in state)
    i = _sigmoid(matmul(x, p.W["i"]) + matmul(h, p.U["i"]))
    f = _sigmoid(matmul(x, p.W["f"]) + matmul(h, p.U["f"]))
    o = _sigmoid(matmul(x, p.W["o"]) + matmul(h, p.U["o"]))
    g = np.tanh(matmul(x, p.W["g"]) + matmul(h, p.U["g"]))
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


# Sequence scans on precomputed drives ------------------------------------

def gru_scan(p: GruParams, A: dict, mask: np.ndarray):
    """``A[g]`` is the (N, batch, n) input drive of gate g; mask drops candidates."""
    N, B, n = A["z"].shape
    H = np.empty((N, B, n))
    cache = {k: np.empty((N, B, n)) for k in ("z", "r", "hh")}
    h = np.zeros((B, n))
    for t in range(N):
        z = _sigmoid(A["z"][t] + h @ p.U["z"])
        r = _sigmoid(A["r"][t] + h @ p.U["r"])
        hh = np.tanh(A["h"][t] + (r * h) @ p.U["h"])
        h = z * h + (1.0 - z) * (hh * mask)
        H[t] = h
        cache["z"][t], cache["r"][t], cache["hh"][t] = z, r, hh
    return H, cache


def gru_scan_grad(p: GruParams, H, cache, gH, mask):
    N, B, n = H.shape
    gA = {g: np.empty((N, B, n)) for g in GRU_GATES}
    gU = {g: np.zeros((n, n)) for g in GRU_GATES}
    carry = np.zeros((B, n))
    zeros = np.zeros((B, n))
    for t in range(N - 1, -1, -1):
        h_prev = H[t - 1] if t > 0 else zeros
        z, r, hh = cache["z"][t], cache["r"][t], cache["hh"][t]
        gh = gH[t] + carry
        dz = gh * (h_prev - hh * mask)
        dah = gh * (1.0 - z) * mask * (1.0 - hh * hh)
        gh_prev = gh * z
        gU["h"] += (r * h_prev).T @ dah
        drh = dah @ p.U["h"].T
        dar = drh * h_prev * r * (1.0 - r)
        gh_prev += drh * r
        daz = dz * z * (1.0 - z)
        gU["z"] += h_prev.T @ daz
        gU["r"] += h_prev.T @ dar
        gh_prev += daz @ p.U["z"].T + dar @ p.U["r"].T
        gA["z"][t], gA["r"][t], gA["h"][t] = daz, dar, dah
        carry = gh_prev
    return gA, gU


def lstm_scan(p: LstmParams, A: dict, mask: np.ndarray):
    N, B, n = A["i"].shape
    H = np.empty((N, B, n))
    Cs = np.empty((N, B, n))
    cache = {k: np.empty((N, B, n)) for k in LSTM_GATES}
    h = np.zeros((B, n))
    c = np.zeros((B, n))
    for t in range(N):
        i = _sigmoid(A["i"][t] + h @ p.U["i"])
        f = _sigmoid(A["f"][t] + h @ p.U["f"])
        o = _sigmoid(A["o"][t] + h @ p.U["o"])
        g = np.tanh(A["g"][t] + h @ p.U["g"])
        c = f * c + i * (g * mask)
        h = o * np.tanh(c)
        H[t], Cs[t] = h, c
        cache["i"][t], cache["f"][t], cache["o"][t], cache["g"][t] = i, f, o, g
    cache["c"] = Cs
    return H, cache


def lstm_scan_grad(p: LstmParams, H, cache, gH, mask):
    N, B, n = H.shape
    gA = {g: np.empty((N, B, n)) for g in LSTM_GATES}
    gU = {g: np.zeros((n, n)) for g in LSTM_GATES}
    gh_carry = np.zeros((B, n))
    gc_carry = np.zeros((B, n))
    zeros = np.zeros((B, n))
    Cs = cache["c"]
    for t in range(N - 1, -1, -1):
        h_prev = H[t - 1] if t > 0 else zeros
        c_prev = Cs[t - 1] if t > 0 else zeros
        i, f, o, g = (cache[k][t] for k in LSTM_GATES)
        tc = np.tanh(Cs[t])
        gh = gH[t] + gh_carry
        go = gh * tc
        gc = gh * o * (1.0 - tc * tc) + gc_carry
        gi = gc * g * mask
        gf = gc * c_prev
        gg = gc * i * mask
        da = {
            "i": gi * i * (1.0 - i),
            "f": gf * f * (1.0 - f),
            "o": go * o * (1.0 - o),
            "g": gg * (1.0 - g * g),
        }
        gh_prev = np.zeros((B, n))
        for k in LSTM_GATES:
            gU[k] += h_prev.T @ da[k]
            gh_prev += da[k] @ p.U[k].T
            gA[k][t] = da[k]
        gh_carry = gh_prev
        gc_carry = gc * f
    return gA, gU
