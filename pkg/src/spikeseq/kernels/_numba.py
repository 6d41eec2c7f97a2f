"""``@njit`` versions of the time-scan kernels.

Same signatures and semantics as ``_numpy``; loops are explicit so the
recurrent products can skip zero output codes.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_opts = dict(cache=True, nogil=True)


@njit(**_opts)
def _code(v, b, levels, gamma):
    if v > gamma:
        c = np.floor(v / b * levels)
        if c > levels - 1.0:
            c = levels - 1.0
        if c < 0.0:
            c = 0.0
        return c
    return 0.0


@njit(**_opts)
def _smooth(v, b, levels):
    if v <= 0.0:
        return 0.0
    if v >= b:
        return b * (levels / b)
    return v * (levels / b)


@njit(**_opts)
def _surr(v, b, levels):
    if v > 0.0 and v < b:
        return levels / b
    return 0.0


@njit(**_opts)
def _emit(v, b, levels, gamma, smooth):
    if smooth:
        return _smooth(v, b, levels)
    return _code(v, b, levels, gamma)


@njit(**_opts)
def quantize_codes(v, b, levels, gamma):
    out = np.empty_like(v)
    fv = v.reshape(v.size)
    fo = out.reshape(out.size)
    for i in range(fv.size):
        fo[i] = _code(fv[i], b, levels, gamma)
    return out


@njit(**_opts)
def smooth_codes(v, b, levels):
    out = np.empty_like(v)
    fv = v.reshape(v.size)
    fo = out.reshape(out.size)
    for i in range(fv.size):
        fo[i] = _smooth(fv[i], b, levels)
    return out


@njit(**_opts)
def surrogate(v, b, levels):
    out = np.empty_like(v)
    fv = v.reshape(v.size)
    fo = out.reshape(out.size)
    for i in range(fv.size):
        fo[i] = _surr(fv[i], b, levels)
    return out


@njit(**_opts)
def lif_scan(A, alpha, beta, b, levels, gamma, reset, smooth):
    T, B, n = A.shape
    I = np.empty_like(A)
    V = np.empty_like(A)
    Y = np.empty_like(A)
    for r in range(B):
        for j in range(n):
            i = 0.0
            v = 0.0
            y = 0.0
            for t in range(T):
                i = beta * i + A[t, r, j]
                v = alpha * v + i - reset * y
                y = _emit(v, b, levels, gamma, smooth)
                I[t, r, j] = i
                V[t, r, j] = v
                Y[t, r, j] = y
    return I, V, Y


@njit(**_opts)
def lif_scan_grad(V, gY, alpha, beta, b, levels, reset, gI_last, gV_last):
    T, B, n = V.shape
    gA = np.empty_like(V)
    for r in range(B):
        for j in range(n):
            gv_next = 0.0
            gi_next = 0.0
            for t in range(T - 1, -1, -1):
                gy = gY[t, r, j] - reset * gv_next
                gv = gy * _surr(V[t, r, j], b, levels) + alpha * gv_next
                gi = gv + beta * gi_next
                if t == T - 1:
                    gv = gv + gV_last[r, j]
                    gi = gi + gV_last[r, j] + gI_last[r, j]
                gA[t, r, j] = gi
                gv_next = gv
                gi_next = gi
    return gA


@njit(**_opts)
def gated_scan(Af, Ac, Wfr, Wcr, mask, alpha, b, levels, gamma, reset, yscale,
               smooth, pin, recurrent):
    T, B, n = Af.shape
    I = np.empty_like(Af)
    V = np.empty_like(Af)
    Y = np.empty_like(Af)
    F = np.empty_like(Af)
    C = np.empty_like(Af)
    AcT = np.empty_like(Af)
    i_prev = np.zeros((B, n))
    v_prev = np.zeros((B, n))
    y_prev = np.zeros((B, n))
    af = np.empty((B, n))
    ac = np.empty((B, n))
    pinned = not math.isnan(pin)
    for t in range(T):
        if recurrent:
            af[:, :] = 0.0
            ac[:, :] = 0.0
            for r in range(B):
                for k in range(n):
                    yk = y_prev[r, k]
                    if yk != 0.0:
                        ys = yscale * yk
                        for j in range(n):
                            af[r, j] += ys * Wfr[k, j]
                            ac[r, j] += ys * Wcr[k, j]
            for r in range(B):
                for j in range(n):
                    af[r, j] = Af[t, r, j] + af[r, j]
                    ac[r, j] = Ac[t, r, j] + ac[r, j]
        else:
            af[:, :] = Af[t]
            ac[:, :] = Ac[t]
        for r in range(B):
            for j in range(n):
                if pinned:
                    f = pin
                else:
                    f = 1.0 / (1.0 + math.exp(-af[r, j]))
                c = max(ac[r, j], 0.0) * mask[r, j]
                i = f * i_prev[r, j] + (1.0 - f) * c
                v = alpha * v_prev[r, j] + i - reset * y_prev[r, j]
                y = _emit(v, b, levels, gamma, smooth)
                i_prev[r, j] = i
                v_prev[r, j] = v
                I[t, r, j] = i
                V[t, r, j] = v
                F[t, r, j] = f
                C[t, r, j] = c
                AcT[t, r, j] = ac[r, j]
                Y[t, r, j] = y
        # y_prev must only change after the whole step used the old codes
        for r in range(B):
            for j in range(n):
                y_prev[r, j] = Y[t, r, j]
    return I, V, Y, F, C, AcT


@njit(**_opts)
def gated_scan_grad(I, V, Y, F, C, AcT, gY, mask, Wfr, Wcr, alpha, b, levels,
                    reset, yscale, pinned, recurrent, gI_last, gV_last):
    T, B, n = V.shape
    gAf = np.empty_like(V)
    gAc = np.empty_like(V)
    gI = np.empty_like(V)
    gWfr = np.zeros_like(Wfr)
    gWcr = np.zeros_like(Wcr)
    gv_next = np.zeros((B, n))
    gi_next = np.zeros((B, n))
    gy = np.empty((B, n))
    WfrT = np.ascontiguousarray(Wfr.T)
    WcrT = np.ascontiguousarray(Wcr.T)
    for t in range(T - 1, -1, -1):
        for r in range(B):
            for j in range(n):
                gy[r, j] = gY[t, r, j] - reset * gv_next[r, j]
        if recurrent and t < T - 1:
            back = np.dot(gAf[t + 1], WfrT) + np.dot(gAc[t + 1], WcrT)
            for r in range(B):
                for j in range(n):
                    gy[r, j] += yscale * back[r, j]
        for r in range(B):
            for j in range(n):
                gv = gy[r, j] * _surr(V[t, r, j], b, levels) + alpha * gv_next[r, j]
                if t < T - 1:
                    gi = gv + F[t + 1, r, j] * gi_next[r, j]
                else:
                    gi = gv + gV_last[r, j] + gI_last[r, j]
                    gv = gv + gV_last[r, j]
                i_prev = I[t - 1, r, j] if t > 0 else 0.0
                f = F[t, r, j]
                gf = gi * (i_prev - C[t, r, j])
                gc = gi * (1.0 - f)
                if pinned:
                    gAf[t, r, j] = 0.0
                else:
                    gAf[t, r, j] = gf * f * (1.0 - f)
                if AcT[t, r, j] > 0.0:
                    gAc[t, r, j] = gc * mask[r, j]
                else:
                    gAc[t, r, j] = 0.0
                gv_next[r, j] = gv
                gi_next[r, j] = gi
                gI[t, r, j] = gi
    if recurrent and T > 1:
        Yp = np.ascontiguousarray(Y[:T - 1]).reshape((T - 1) * B, n).T.copy()
        gWfr = yscale * np.dot(Yp, np.ascontiguousarray(gAf[1:]).reshape((T - 1) * B, n))
        gWcr = yscale * np.dot(Yp, np.ascontiguousarray(gAc[1:]).reshape((T - 1) * B, n))
    return gAf, gAc, gI, gWfr, gWcr


@njit(**_opts)
def matmul_fixed(a, b):
    rows, inner = a.shape
    cols = b.shape[1]
    out = np.zeros((rows, cols))
    for k in range(inner):
        for i in range(rows):
            aik = a[i, k]
            for j in range(cols):
                out[i, j] += aik * b[k, j]
    return out
