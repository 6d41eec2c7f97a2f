"""Backpropagation through time for LIF and gated layers, plus checks.

:func:`backward` is the fast hand-derived reverse sweep. :func:`oracle_backprop`
recomputes the same gradients by walking every path of an explicit scalar
computation graph, and :func:`finite_diff_check` compares the sweep with
central differences in smooth mode. :func:`vanishing_diagnostic` measures how
the weight gradient carried by the synaptic current shrinks with lag.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from spikeseq import kernels
from spikeseq.gated_layer import GatedParams, gated_forward
from spikeseq.lif_layer import LifParams, lif_forward, stack_inputs
from spikeseq.numerics import NonFiniteError
from spikeseq.tape import Tape

__all__ = [
    "GradSet",
    "InstanceTooLarge",
    "LinearQuadraticLoss",
    "Tape",
    "backward",
    "count_paths",
    "finite_diff_check",
    "max_rel_error",
    "oracle_backprop",
    "vanishing_diagnostic",
]

# oracle size bound: path counts grow exponentially in N and n
ORACLE_MAX_STEPS = 4
ORACLE_MAX_WIDTH = 3
ORACLE_MAX_BATCH = 2


class InstanceTooLarge(ValueError):
    pass


class IncompleteTapeError(ValueError):
    pass


class GradSet(dict):
    """Parameter name -> gradient matrix."""

    def check_finite(self) -> "GradSet":
        for k, g in self.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"gradient {k} is not finite")
        return self


def max_rel_error(a: dict, b: dict) -> float:
    """Largest per-parameter ``max|a - b| / max(max|a|, max|b|)``."""
    worst = 0.0
    for k in a:
        x, y = np.asarray(a[k]), np.asarray(b[k])
        scale = max(np.max(np.abs(x), initial=0.0), np.max(np.abs(y), initial=0.0))
        diff = np.max(np.abs(x - y), initial=0.0)
        if diff == 0.0:
            continue
        worst = max(worst, diff / scale if scale > 0 else math.inf)
    return worst


def _as_grad_seq(dJ_dY, tape: Tape) -> np.ndarray:
    g = np.ascontiguousarray(np.asarray(dJ_dY, dtype=np.float64))
    if g.shape != tape.Y.shape:
        raise ValueError(f"dJ_dY has shape {g.shape}, outputs have {tape.Y.shape}")
    return g


def _seed(seed, shape):
    return np.zeros(shape) if seed is None else np.ascontiguousarray(seed, dtype=np.float64)


@dataclass
class Sweep:
    """Raw reverse-sweep results on the drives (before the input products)."""

    drives: dict
    gI: np.ndarray
    recurrent: dict


def sweep(tape: Tape, params, dJ_dY, gI_last=None, gV_last=None) -> Sweep:
    if not tape.complete:
        raise IncompleteTapeError("tape is missing forward records")
    gY = _as_grad_seq(dJ_dY, tape)
    _, B, n = tape.V.shape
    gIl = _seed(gI_last, (B, n))
    gVl = _seed(gV_last, (B, n))
    q = params.quant
    b = tape.b
    levels = q.levels
    if isinstance(params, LifParams):
        gA = kernels.lif_scan_grad(tape.V, gY, params.alpha, params.beta, b, levels,
                                   q.reset_scale(b), gIl, gVl)
        return Sweep({"A": gA}, gA, {})
    if isinstance(params, GatedParams):
        mask = tape.mask if tape.mask is not None else np.ones((B, n))
        if params.recurrent:
            Wfr, Wcr = params.W_fr, params.W_cr
        else:
            Wfr = Wcr = np.zeros((1, 1))
        gAf, gAc, gI, gWfr, gWcr = kernels.gated_scan_grad(
            tape.I, tape.V, tape.Y, tape.F, tape.C, tape.Ac, gY, mask, Wfr, Wcr,
            params.alpha, b, levels, q.reset_scale(b), float(params.y_scale),
            tape.pin_forget is not None, params.recurrent, gIl, gVl)
        rec = {"W_fr": gWfr, "W_cr": gWcr} if params.recurrent else {}
        return Sweep({"Af": gAf, "Ac": gAc}, gI, rec)
    raise TypeError(f"unsupported parameter type {type(params).__name__}")


def _weight_grad(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    N, B, m = x.shape
    return x.reshape(N * B, m).T @ g.reshape(N * B, g.shape[2])


def backward(tape: Tape, params, dJ_dY, gI_last=None, gV_last=None) -> GradSet:
    """Gradients of ``J`` w.r.t. every weight matrix of the layer.

    ``dJ_dY[t]`` is the loss gradient w.r.t. the output codes of step t; the
    optional seeds inject gradient at the final synaptic current / potential.
    Weight gradients are summed over time-steps and the batch.
    """
    sw = sweep(tape, params, dJ_dY, gI_last, gV_last)
    x = tape.x
    if isinstance(params, LifParams):
        grads = GradSet(W=_weight_grad(x, sw.drives["A"]))
    else:
        grads = GradSet(W_fi=_weight_grad(x, sw.drives["Af"]),
                        W_ci=_weight_grad(x, sw.drives["Ac"]))
        grads.update(sw.recurrent)
    return grads.check_finite()


def input_grad(tape: Tape, params, sw: Sweep) -> np.ndarray:
    if isinstance(params, LifParams):
        return sw.drives["A"] @ params.W.T
    return sw.drives["Af"] @ params.W_fi.T + sw.drives["Ac"] @ params.W_ci.T


# Path-enumeration oracle ---------------------------------------------------

class _Graph:
    """Scalar DAG; ``out[k]`` lists ``(child, d child / d k)``."""

    def __init__(self):
        self.value: list[float] = []
        self.out: list[list] = []
        self.label: list = []

    def node(self, value: float, label=None) -> int:
        self.value.append(value)
        self.out.append([])
        self.label.append(label)
        return len(self.value) - 1

    def edge(self, parent: int, child: int, d: float) -> None:
        self.out[parent].append((child, d))

    def path_sum(self, src: int, dst: int) -> float:
        """Sum over every src -> dst path of the product of edge derivatives."""
        if src == dst:
            return 1.0
        return sum(d * self.path_sum(c, dst) for c, d in self.out[src])

    def path_count(self, src: int, dst: int) -> int:
        if src == dst:
            return 1
        return sum(self.path_count(c, dst) for c, _ in self.out[src])


def _surr(v: float, b: float, levels: float) -> float:
    return levels / b if 0.0 < v < b else 0.0


def _emit(v: float, b: float, levels: float, gamma: float, smooth: bool) -> float:
    if smooth:
        return min(max(v, 0.0), b) * (levels / b)
    if v > gamma:
        return min(max(math.floor(v / b * levels), 0.0), levels - 1.0)
    return 0.0


def _sigmoid(z: float) -> float:
    return 1.0 / (1.0 + math.exp(-z))


def _build_graph(params, x_row: np.ndarray, b: float, smooth: bool, mask_row=None,
                 dJ_row=None):
    """Unrolled scalar graph of one sequence.

    Returns the graph, a list of ``(param_name, i, j, use_node)`` weight-use
    sources (one per weight entry per time-step), the node ids of V, I, Y per
    step, and the sink J (if ``dJ_row`` is given).
    """
    g = _Graph()
    q = params.quant
    levels, gamma, reset = q.levels, q.threshold(b), q.reset_scale(b)
    N, m = x_row.shape
    gated = isinstance(params, GatedParams)
    n = params.shape[1]
    weights = params.weights()
    if mask_row is None:
        mask_row = np.ones(n)
    sources = []
    nodes = {"I": [], "V": [], "Y": []}

    def drive(name, t, j, extra_terms=()):
        W = weights[name]
        total = 0.0
        uses = []
        for i in range(m):
            uses.append((name, i, j, x_row[t, i], W[i, j]))
            total += x_row[t, i] * W[i, j]
        for (rname, k, coef) in extra_terms:
            uses.append((rname, k, j, coef, weights[rname][k, j]))
            total += coef * weights[rname][k, j]
        a = g.node(total, (name, t, j))
        for (pname, i, jj, coef, w) in uses:
            u = g.node(w, (pname, i, jj, t))
            g.edge(u, a, coef)
            sources.append((pname, i, jj, u))
        return a

    i_prev = [None] * n
    v_prev = [None] * n
    y_prev = [None] * n
    for t in range(N):
        i_now, v_now, y_now = [], [], []
        for j in range(n):
            ip = g.value[i_prev[j]] if t else 0.0
            if gated:
                rec_f, rec_c = (), ()
                if params.recurrent and t:
                    rec_f = [("W_fr", k, params.y_scale * g.value[y_prev[k]]) for k in range(n)]
                    rec_c = [("W_cr", k, params.y_scale * g.value[y_prev[k]]) for k in range(n)]
                af = drive("W_fi", t, j, rec_f)
                ac = drive("W_ci", t, j, rec_c)
                if params.recurrent and t:
                    for k in range(n):
                        g.edge(y_prev[k], af, params.y_scale * params.W_fr[k, j])
                        g.edge(y_prev[k], ac, params.y_scale * params.W_cr[k, j])
                if params.pin_forget is not None:
                    f = g.node(float(params.pin_forget), ("F", t, j))
                else:
                    fv = _sigmoid(g.value[af])
                    f = g.node(fv, ("F", t, j))
                    g.edge(af, f, fv * (1.0 - fv))
                acv = g.value[ac]
                c = g.node(max(acv, 0.0) * mask_row[j], ("C", t, j))
                g.edge(ac, c, mask_row[j] if acv > 0.0 else 0.0)
                fv, cv = g.value[f], g.value[c]
                ival = fv * ip + (1.0 - fv) * cv
                inode = g.node(ival, ("I", t, j))
                g.edge(f, inode, ip - cv)
                g.edge(c, inode, 1.0 - fv)
                if t:
                    g.edge(i_prev[j], inode, fv)
            else:
                a = drive("W", t, j)
                ival = params.beta * ip + g.value[a]
                inode = g.node(ival, ("I", t, j))
                g.edge(a, inode, 1.0)
                if t:
                    g.edge(i_prev[j], inode, params.beta)
            vp = g.value[v_prev[j]] if t else 0.0
            yp = g.value[y_prev[j]] if t else 0.0
            vval = params.alpha * vp + ival - reset * yp
            vnode = g.node(vval, ("V", t, j))
            g.edge(inode, vnode, 1.0)
            if t:
                g.edge(v_prev[j], vnode, params.alpha)
                g.edge(y_prev[j], vnode, -reset)
            ynode = g.node(_emit(vval, b, levels, gamma, smooth), ("Y", t, j))
            g.edge(vnode, ynode, _surr(vval, b, levels))
            i_now.append(inode)
            v_now.append(vnode)
            y_now.append(ynode)
        i_prev, v_prev, y_prev = i_now, v_now, y_now
        nodes["I"].append(i_now)
        nodes["V"].append(v_now)
        nodes["Y"].append(y_now)
    sink = None
    if dJ_row is not None:
        sink = g.node(0.0, "J")
        for t in range(N):
            for j in range(n):
                g.edge(nodes["Y"][t][j], sink, float(dJ_row[t, j]))
    return g, sources, nodes, sink


def oracle_backprop(tape: Tape, params, dJ_dY) -> GradSet:
    """Gradients by explicit enumeration of every backward path.

    Works only on tiny instances (at most 4 steps, 3 inputs, 3 neurons and
    2 sequences); the cost grows exponentially with the number of steps.
    """
    if not tape.complete:
        raise IncompleteTapeError("tape is missing forward records")
    N, B, m = tape.x.shape
    n = params.shape[1]
    if N > ORACLE_MAX_STEPS or m > ORACLE_MAX_WIDTH or n > ORACLE_MAX_WIDTH or B > ORACLE_MAX_BATCH:
        raise InstanceTooLarge(
            f"oracle handles N<={ORACLE_MAX_STEPS}, m,n<={ORACLE_MAX_WIDTH}, "
            f"batch<={ORACLE_MAX_BATCH}; got N={N}, m={m}, n={n}, batch={B}")
    gY = _as_grad_seq(dJ_dY, tape)
    grads = GradSet({k: np.zeros_like(w) for k, w in params.weights().items()})
    for r in range(B):
        mask_row = tape.mask[r] if tape.mask is not None else None
        g, sources, nodes, sink = _build_graph(params, tape.x[:, r, :], tape.b, tape.smooth,
                                               mask_row, gY[:, r, :])
        v_own = np.array([[g.value[k] for k in row] for row in nodes["V"]])
        if not np.allclose(v_own, tape.V[:, r, :], rtol=1e-9, atol=1e-9):
            raise ValueError("oracle forward disagrees with the tape")
        for name, i, j, u in sources:
            grads[name][i, j] += g.path_sum(u, sink)
    return grads


def count_paths(params, N: int, from_step: int, target: str = "V") -> int:
    """Number of backward paths from ``target[N]`` to the weight copy used at
    ``from_step`` (both 1-based) for a single-input, single-neuron layer.
    """
    if not 1 <= from_step <= N:
        raise ValueError("from_step must lie in [1, N]")
    x_row = np.ones((N, params.shape[0]))
    g, sources, nodes, _ = _build_graph(params, x_row, 1.0, True)
    dst = nodes[target][N - 1][0]
    t = from_step - 1
    total = 0
    for name, i, j, u in sources:
        if g.label[u][3] == t and i == 0 and j == 0 and name in ("W", "W_ci"):
            total += g.path_count(u, dst)
    return total


# Finite differences ------------------------------------------------------

class LinearQuadraticLoss:
    """``J = sum(coef * Y) + 0.5 * quad * sum(Y**2)``."""

    def __init__(self, coef: np.ndarray, quad: float = 0.0):
        self.coef = np.asarray(coef, dtype=np.float64)
        self.quad = float(quad)

    def value(self, Y: np.ndarray) -> float:
        return float(np.sum(self.coef * Y) + 0.5 * self.quad * np.sum(Y * Y))

    def grad(self, Y: np.ndarray) -> np.ndarray:
        return self.coef + self.quad * Y


def _forward(params, x, tape=None, smooth=True, mask=None):
    if isinstance(params, LifParams):
        return lif_forward(params, x, tape, smooth=smooth)
    return gated_forward(params, x, tape, smooth=smooth, mask=mask)


def finite_diff_check(params, x_seq, loss, eps: float = 1e-5, grads: dict | None = None) -> float:
    """Max relative error between central differences and :func:`backward`.

    Runs in smooth mode (ramp instead of integer codes) so the forward map is
    differentiable almost everywhere. ``grads`` overrides the analytic
    gradients, which lets callers test the check itself.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError(f"eps must lie in [1e-7, 1e-4], got {eps}")
    x = stack_inputs(x_seq, params.shape[0])
    if grads is None:
        tape = Tape(kind="")
        Y = _forward(params, x, tape)
        j0 = loss.value(Y)
        if not math.isfinite(j0):
            raise NonFiniteError("loss is not finite")
        grads = backward(tape, params, loss.grad(Y))
    numeric = {}
    for name, W in params.weights().items():
        fd = np.zeros_like(W)
        for idx in np.ndindex(W.shape):
            orig = W[idx]
            W[idx] = orig + eps
            jp = loss.value(_forward(params, x))
            W[idx] = orig - eps
            jm = loss.value(_forward(params, x))
            W[idx] = orig
            if not (math.isfinite(jp) and math.isfinite(jm)):
                raise NonFiniteError("loss is not finite")
            fd[idx] = (jp - jm) / (2.0 * eps)
        numeric[name] = fd
    return max_rel_error(numeric, {k: grads[k] for k in numeric})


# Vanishing-gradient diagnostic -----------------------------------------------

@dataclass
class LagRow:
    lag: int
    norm: float
    analytic_norm: float
    state_jacobian: float
    full_norm: float


def vanishing_diagnostic(params, x_seq, lags, smooth: bool = False) -> list[LagRow]:
    """Lag -> gradient-norm table for the first sequence of ``x_seq``.

    For every lag L the table holds, with n = N - L:

    * ``norm``: measured ``||dI[N]/dW[n]||`` (root-mean-square over the
      neurons of I[N]), through ``W`` for LIF and ``W_ci`` for gated layers;
    * ``analytic_norm``: the closed form, ``beta**L * ||x[n]||`` for LIF and
      ``||x[n]|| * rms_j(prod_{t>n} F_j[t] * (1 - F_j[n]) * relu'_j)`` for gated;
    * ``state_jacobian``: ``||dI[N]/dI[n]||_F / sqrt(n_neurons)``;
    * ``full_norm``: measured ``||dV[N]/dW[n]||`` through every path.
    """
    x = stack_inputs(x_seq, params.shape[0])[:, :1, :]
    N = x.shape[0]
    lags = [int(L) for L in lags]
    if any(L < 0 or L >= N for L in lags):
        raise ValueError(f"every lag must lie in [0, {N - 1}]")
    n = params.shape[1]
    xr = np.ascontiguousarray(np.repeat(x, n, axis=1))
    tape = Tape(kind="")
    _forward(params, xr, tape, smooth=smooth)
    eye = np.eye(n)
    zero_dy = np.zeros_like(tape.Y)
    via_i = sweep(tape, params, zero_dy, gI_last=eye)
    via_v = sweep(tape, params, zero_dy, gV_last=eye)
    key = "A" if isinstance(params, LifParams) else "Ac"
    rows = []
    for L in lags:
        t = N - 1 - L
        xn = float(np.linalg.norm(x[t, 0]))

        def rms(g):
            return float(np.sqrt(np.mean(np.sum(g * g, axis=1))))

        norm = xn * rms(via_i.drives[key][t])
        full = xn * rms(via_v.drives[key][t])
        state = float(np.linalg.norm(via_i.gI[t])) / math.sqrt(n)
        if isinstance(params, LifParams):
            analytic = params.beta ** L * xn
        else:
            F = tape.F[:, 0, :]
            prod = np.prod(F[t + 1:], axis=0) if L else np.ones(n)
            mask = tape.mask[0] if tape.mask is not None else np.ones(n)
            local = (1.0 - F[t]) * mask * (tape.Ac[t, 0] > 0.0)
            analytic = xn * float(np.sqrt(np.mean((prod * local) ** 2)))
        rows.append(LagRow(L, norm, analytic, state, full))
    return rows


def lag_table_csv(rows: list[LagRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lag", "norm", "analytic_norm", "state_jacobian", "full_norm"])
    for r in rows:
        w.writerow([r.lag, repr(r.norm), repr(r.analytic_norm), repr(r.state_jacobian),
                    repr(r.full_norm)])
    return buf.getvalue()
