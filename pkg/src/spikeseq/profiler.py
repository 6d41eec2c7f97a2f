"""Event-driven operation counting and the closed-form multiplication model.

Spiking layers only multiply weight rows for nonzero inputs. Batch
normalisation is folded into the weights at inference, so it costs additions
only. Per step and per neuron the element-wise multiplications are:

    lif       beta*I, alpha*V, reset*Y, quantiser scale        -> n + 3n
    gated     F*I, (1-F)*C, alpha*V, reset*Y, quantiser scale  -> 5n
    gru       r*h, z*h, (1-z)*h~                               -> 3n
    lstm      f*c, i*g, o*tanh(c)                              -> 3n

``density`` is the fraction of NONZERO entries of the input vector. The
gated formulas follow the same counting rules as the lif, gru and lstm
costs.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from spikeseq.network import Network, SpikingLayer

ARCHS = ("lif", "gated_v1", "gated_v2", "gru", "lstm")

FOOTNOTE = ("density = fraction of nonzero inputs, not the fraction of zeros; "
            "gated_v1/gated_v2 costs are derived analogues")


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def closed_form_cost(arch: str, m: int, n: int, density=0, density_y=0) -> Fraction:
    """Multiplications for one step of one layer (exact rational)."""
    if arch not in ARCHS:
        raise ValueError(f"unknown architecture {arch!r}")
    if m < 1 or n < 1:
        raise ValueError("m and n must be >= 1")
    d = _frac(density)
    dy = _frac(density_y)
    if not (0 <= d <= 1 and 0 <= dy <= 1):
        raise ValueError("densities must lie in [0, 1]")
    if arch == "lif":
        return (n + d * m * n) + 3 * n
    if arch == "gated_v1":
        return 2 * d * m * n + 5 * n
    if arch == "gated_v2":
        return 2 * d * m * n + 2 * dy * n * n + 5 * n
    if arch == "gru":
        return Fraction(3 * n + 3 * (m + n) * n)
    return Fraction(3 * n + 4 * (m + n) * n)


@dataclass
class LayerCount:
    arch: str
    m: int
    n: int
    steps: int = 0  # step x sequence pairs
    matvec_mults: int = 0
    recurrent_mults: int = 0
    state_mults: int = 0
    adds: int = 0
    input_nonzero: int = 0
    outputs: int = 0
    zero_outputs: int = 0

    @property
    def mults(self) -> int:
        return self.matvec_mults + self.recurrent_mults + self.state_mults

    @property
    def input_density(self) -> float:
        return self.input_nonzero / (self.steps * self.m) if self.steps else 0.0

    @property
    def zero_fraction(self) -> float:
        return self.zero_outputs / self.outputs if self.outputs else 0.0


@dataclass
class OpCountReport:
    arch: str
    sequences: int
    layers: list = field(default_factory=list)
    readout_mults: int = 0

    def __post_init__(self):
        if self.sequences < 0:
            raise ValueError("negative sequence count")

    @property
    def mults(self) -> int:
        return sum(lc.mults for lc in self.layers)

    @property
    def adds(self) -> int:
        return sum(lc.adds for lc in self.layers)

    @property
    def zero_output_fraction(self) -> float:
        out = sum(lc.outputs for lc in self.layers)
        return sum(lc.zero_outputs for lc in self.layers) / out if out else 0.0

    @property
    def mults_per_inference(self) -> float:
        return self.mults / self.sequences if self.sequences else 0.0

    def merge(self, other: "OpCountReport") -> "OpCountReport":
        if not self.layers:
            return other
        if other.arch != self.arch or len(other.layers) != len(self.layers):
            raise ValueError("cannot merge reports of different models")
        merged = OpCountReport(self.arch, self.sequences + other.sequences,
                               readout_mults=self.readout_mults + other.readout_mults)
        for a, b in zip(self.layers, other.layers):
            lc = LayerCount(a.arch, a.m, a.n)
            for f in ("steps", "matvec_mults", "recurrent_mults", "state_mults", "adds",
                      "input_nonzero", "outputs", "zero_outputs"):
                setattr(lc, f, getattr(a, f) + getattr(b, f))
            merged.layers.append(lc)
        return merged


def _count_layer(arch: str, x: np.ndarray, y: np.ndarray, lc: LayerCount) -> None:
    """Tally one layer's operations from its input and output traces."""
    N, B, m = x.shape
    n = y.shape[2]
    nz_in = np.count_nonzero(x, axis=2)  # (N, B)
    lc.steps += N * B
    lc.input_nonzero += int(nz_in.sum())
    lc.outputs += y.size
    lc.zero_outputs += int(y.size - np.count_nonzero(y))
    events = int(nz_in.sum())
    if arch == "lif":
        lc.matvec_mults += events * n
        lc.state_mults += N * B * 4 * n
        # accumulate, bn offset, beta*I + drive, alpha*V + I - reset
        lc.adds += events * n + N * B * 4 * n
    elif arch in ("gated_v1", "gated_v2"):
        lc.matvec_mults += 2 * events * n
        lc.state_mults += N * B * 5 * n
        # two accumulations, two bn offsets, 1-F, F*I + (1-F)*C, alpha*V + I - reset
        lc.adds += 2 * events * n + N * B * 7 * n
        if arch == "gated_v2":
            prev = np.count_nonzero(y[:-1], axis=2)
            rec_events = int(prev.sum())
            lc.recurrent_mults += 2 * rec_events * n
            lc.adds += 2 * rec_events * n
    else:
        gates = 3 if arch == "gru" else 4
        lc.matvec_mults += N * B * gates * m * n
        lc.recurrent_mults += N * B * gates * n * n
        lc.state_mults += N * B * 3 * n
        lc.adds += N * B * (gates * (m + n) * n + 3 * n)


def count_inference(net: Network, x_seq: np.ndarray) -> OpCountReport:
    """Run inference on ``(N, batch, m)`` inputs and count the work an
    event-driven implementation performs."""
    x = np.asarray(x_seq, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, None, :]
    arch = net.spec.variant
    report = OpCountReport(arch, x.shape[1])
    h = x
    for layer in net.layers:
        y = layer.forward(h, train=False)
        m = h.shape[2]
        lc = LayerCount(arch, m, y.shape[2])
        _count_layer(arch, h, y, lc)
        report.layers.append(lc)
        h = y
    units, classes = net.W_out.shape
    if net.spec.label_mode == "sequence":
        feats = h[-1]
    else:
        feats = h.reshape(-1, units)
    if isinstance(net.layers[-1], SpikingLayer):
        # code scale is folded into the readout weights
        report.readout_mults = int(np.count_nonzero(feats)) * classes
    else:
        report.readout_mults = feats.shape[0] * units * classes
    return report


def predicted_cost(report_arch: str, x: np.ndarray, y: np.ndarray) -> Fraction:
    """Closed-form multiplications summed over steps with measured densities."""
    N, B, m = x.shape
    n = y.shape[2]
    total = Fraction(0)
    for t in range(N):
        for r in range(B):
            d = Fraction(int(np.count_nonzero(x[t, r])), m)
            dy = Fraction(int(np.count_nonzero(y[t - 1, r])), n) if t > 0 else Fraction(0)
            total += closed_form_cost(report_arch, m, n, d, dy)
    return total


def count_dataset(net: Network, ds, batch: int = 256) -> OpCountReport:
    from spikeseq.trainer import length_batches

    if len(ds) == 0:
        raise ValueError("cannot profile an empty dataset")
    report = OpCountReport(net.spec.variant, 0)
    for idx in length_batches(ds, batch):
        x, _ = ds.batch(idx)
        report = report.merge(count_inference(net, x))
    return report


def dense_reference(arch: str, spec, ds) -> float:
    """Mults per inference of a dense gru/lstm with the same layer sizes."""
    if arch not in ("gru", "lstm"):
        raise ValueError(f"a {arch} baseline needs a trained model; only gru/lstm are input-independent")
    total = 0
    m = spec.input_dim
    layers = []
    for _ in range(spec.layers):
        layers.append(closed_form_cost(arch, m, spec.units))
        m = spec.units
    per_step = sum(layers)
    for f in ds.frames:
        total += per_step * f.shape[0]
    return float(total / len(ds))


@dataclass
class ReportRow:
    arch: str
    mults_per_inference: float
    normalized: float
    zero_output_pct: float
    adds_per_inference: float
    readout_mults_per_inference: float


def normalized_report(models: dict, ds, normalize_to: str = "lstm") -> list[ReportRow]:
    """Average mults per inference of each model divided by the base model's.

    ``models`` maps names to networks. When no model is named ``normalize_to``
    and the base is gru or lstm, its input-independent dense cost is used.
    """
    if len(ds) == 0:
        raise ValueError("cannot report on an empty dataset")
    reports = {name: count_dataset(net, ds) for name, net in models.items()}
    if normalize_to in reports:
        base = reports[normalize_to].mults_per_inference
    else:
        spec = next(iter(models.values())).spec
        base = dense_reference(normalize_to, spec, ds)
    rows = []
    for name, rep in reports.items():
        rows.append(ReportRow(name, rep.mults_per_inference, rep.mults_per_inference / base,
                              100.0 * rep.zero_output_fraction,
                              rep.adds / rep.sequences, rep.readout_mults / rep.sequences))
    if normalize_to not in reports:
        rows.append(ReportRow(normalize_to, base, 1.0, float("nan"), float("nan"), float("nan")))
    return rows


def report_csv(rows: list[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["arch", "mults_per_inference", "normalized", "zero_output_pct",
                "adds_per_inference", "readout_mults_per_inference"])
    for r in rows:
        w.writerow([r.arch, repr(r.mults_per_inference), repr(r.normalized), repr(r.zero_output_pct),
                    repr(r.adds_per_inference), repr(r.readout_mults_per_inference)])
    return buf.getvalue()


def report_text(rows: list[ReportRow], normalize_to: str = "lstm") -> str:
    lines = [f"{'arch':<10} {'mults/inf':>14} {'norm(' + normalize_to + ')':>12} {'zeros %':>8}"]
    for r in rows:
        lines.append(f"{r.arch:<10} {r.mults_per_inference:>14.1f} {r.normalized:>12.3f} "
                     f"{r.zero_output_pct:>8.2f}")
    lines.append("")
    lines.append("note: " + FOOTNOTE)
    return "\n".join(lines) + "\n"
