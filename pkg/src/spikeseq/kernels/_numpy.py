"""Pure-numpy reference kernels.

Time is the leading axis of every sequence array: ``(T, batch, n)``. The
loops over time stay in Python; everything inside a step is vectorised.
"""

from __future__ import annotations

import numpy as np


def quantize_codes(v, b, levels, gamma):
    with np.errstate(invalid="ignore"):
        codes = np.floor(v / b * levels)
    codes = np.clip(codes, 0.0, levels - 1.0)
    return np.where(v > gamma, codes, 0.0)


def smooth_codes(v, b, levels):
    return np.clip(v, 0.0, b) * (levels / b)


def surrogate(v, b, levels):
    return np.where((v > 0.0) & (v < b), levels / b, 0.0)


def _emit(v, b, levels, gamma, smooth):
    if smooth:
        return smooth_codes(v, b, levels)
    return quantize_codes(v, b, levels, gamma)


def lif_scan(A, alpha, beta, b, levels, gamma, reset, smooth):
    T, B, n = A.shape
    I = np.empty_like(A)
    V = np.empty_like(A)
    Y = np.empty_like(A)
    i_prev = np.zeros((B, n))
    v_prev = np.zeros((B, n))
    y_prev = np.zeros((B, n))
    for t in range(T):
        i_prev = beta * i_prev + A[t]
        v_prev = alpha * v_prev + i_prev - reset * y_prev
        y_prev = _emit(v_prev, b, levels, gamma, smooth)
        I[t], V[t], Y[t] = i_prev, v_prev, y_prev
    return I, V, Y


def lif_scan_grad(V, gY, alpha, beta, b, levels, reset, gI_last, gV_last):
    T, B, n = V.shape
    gA = np.empty_like(V)
    gv_next = np.zeros((B, n))
    gi_next = np.zeros((B, n))
    for t in range(T - 1, -1, -1):
        gy = gY[t] - reset * gv_next
        gv = gy * surrogate(V[t], b, levels) + alpha * gv_next
        gi = gv + beta * gi_next
        if t == T - 1:
            gv = gv + gV_last
            gi = gi + gV_last + gI_last
        gA[t] = gi
        gv_next, gi_next = gv, gi
    return gA


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
    pinned = not np.isnan(pin)
    for t in range(T):
        af = Af[t]
        ac = Ac[t]
        if recurrent:
            ys = yscale * y_prev
            af = af + ys @ Wfr
            ac = ac + ys @ Wcr
        if pinned:
            f = np.full((B, n), pin)
        else:
            f = 1.0 / (1.0 + np.exp(-af))
        c = np.maximum(ac, 0.0) * mask
        i_prev = f * i_prev + (1.0 - f) * c
        v_prev = alpha * v_prev + i_prev - reset * y_prev
        y_prev = _emit(v_prev, b, levels, gamma, smooth)
        I[t], V[t], Y[t], F[t], C[t], AcT[t] = i_prev, v_prev, y_prev, f, c, ac
    return I, V, Y, F, C, AcT


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
    gaf_next = np.zeros((B, n))
    gac_next = np.zeros((B, n))
    f_next = np.zeros((B, n))
    zeros = np.zeros((B, n))
    for t in range(T - 1, -1, -1):
        gy = gY[t] - reset * gv_next
        if recurrent and t < T - 1:
            gy = gy + yscale * (gaf_next @ Wfr.T + gac_next @ Wcr.T)
        gv = gy * surrogate(V[t], b, levels) + alpha * gv_next
        gi = gv + f_next * gi_next
        if t == T - 1:
            gv = gv + gV_last
            gi = gi + gV_last + gI_last
        i_prev = I[t - 1] if t > 0 else zeros
        f = F[t]
        gf = gi * (i_prev - C[t])
        gc = gi * (1.0 - f)
        gaf = zeros if pinned else gf * f * (1.0 - f)
        gac = gc * mask * (AcT[t] > 0.0)
        if recurrent and t > 0:
            ys = yscale * Y[t - 1]
            gWfr += ys.T @ gaf
            gWcr += ys.T @ gac
        gAf[t] = gaf
        gAc[t] = gac
        gI[t] = gi
        gv_next, gi_next, gaf_next, gac_next, f_next = gv, gi, gaf, gac, f
    return gAf, gAc, gI, gWfr, gWcr


def matmul_fixed(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        out += a[:, k, None] * b[None, k, :]
    return out
