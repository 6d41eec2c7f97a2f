"""Reusable experiment drivers behind the command-line tool."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from spikeseq import data as D
from spikeseq.activation import QuantConfig, RangeTracker
from spikeseq.bptt import (
    LinearQuadraticLoss,
    Tape,
    backward,
    finite_diff_check,
    lag_table_csv,
    max_rel_error,
    oracle_backprop,
    vanishing_diagnostic,
)
from spikeseq.config import ConfigError, model_spec, train_config
from spikeseq.gated_layer import GatedParams, gated_forward
from spikeseq.lif_layer import LifParams, lif_forward
from spikeseq.numerics import Rng
from spikeseq.profiler import normalized_report, report_csv, report_text
from spikeseq.trainer import evaluate, load_checkpoint, train

SPIKING = ("lif", "gated_v1", "gated_v2")


# Data ------------------------------------------------------------------------

def load_data(cfg: dict) -> tuple:
    """``(train, dev, test)`` from SEQF files or a synthetic generator."""
    if cfg["data.path"]:
        try:
            tr = D.load_seqf(cfg["data.path"])
            dv = D.load_seqf(cfg["data.dev_path"]) if cfg["data.dev_path"] else None
            te = D.load_seqf(cfg["data.test_path"]) if cfg["data.test_path"] else None
        except OSError as exc:
            raise ConfigError(f"cannot read dataset: {exc.strerror}", "data.path") from exc
        if dv is None:
            cut = max(1, len(tr) // 10)
            dv, tr = tr.subset(range(cut)), tr.subset(range(cut, len(tr)))
        return tr, dv, te if te is not None else dv
    task = cfg["data.synthetic"]
    sizes = (cfg["data.train_size"], cfg["data.dev_size"], cfg["data.test_size"])
    kw = {"T": cfg["data.T"]}
    if task == "copy":
        kw = {"T_delay": cfg["data.T_delay"], "pattern_len": cfg["data.pattern_len"]}
    elif task == "framewise":
        kw.update(classes=cfg["data.classes"], dim=cfg["data.dim"], noise=cfg["data.noise"])
    elif task != "adding":
        raise ConfigError(f"unknown synthetic task {task!r}", "data.synthetic")
    # data depend on the seed too, so seed sweeps resample the task
    return D.synthetic_splits(task, cfg["seed"], sizes=sizes, **kw)


def spec_for(cfg: dict, ds: D.SeqDataset, **over):
    return model_spec(cfg, ds.feature_dim, ds.class_count, ds.label_mode, **over)


# Training --------------------------------------------------------------------

@dataclass
class RunSummary:
    variant: str
    seed: int
    best_dev: float
    test_acc: float
    test_zero_fraction: float
    net: object = None


def run_train(cfg: dict, out=None, log=None, splits=None, **spec_over) -> RunSummary:
    tr, dv, te = splits if splits is not None else load_data(cfg)
    spec = spec_for(cfg, tr, **spec_over)
    res = train(spec, tr, dv, train_config(cfg), out_dir=out, log=log)
    if out is not None:
        # evaluate the best epoch, like the checkpoint a user would deploy
        net, _ = load_checkpoint(Path(out) / "best.spkc")
    else:
        net = res.net
    ev = evaluate(net, te)
    summary = RunSummary(spec.variant, cfg["seed"], res.best_dev, ev.accuracy, ev.zero_fraction, net)
    if out is not None:
        (Path(out) / "summary.json").write_text(json.dumps({
            "variant": spec.variant, "seed": cfg["seed"], "best_dev_acc": res.best_dev,
            "best_epoch": res.best_epoch, "test_acc": ev.accuracy,
            "test_loss": ev.loss, "test_output_sparsity": ev.zero_fraction}) + "\n")
    return summary


def run_eval(cfg: dict, checkpoint, out=None) -> dict:
    net, header = load_checkpoint(checkpoint)
    _, _, te = load_data(cfg)
    ev = evaluate(net, te)
    result = {"checkpoint_epoch": header["epoch"], "variant": net.spec.variant,
              "test_acc": ev.accuracy, "test_loss": ev.loss, "test_output_sparsity": ev.zero_fraction}
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "eval.json").write_text(json.dumps(result) + "\n")
    return result


# Gradient checks -------------------------------------------------------------

def random_layer(rng: Rng, variant: str, m: int, n: int, b: float | None = None,
                 n_bits: int = 3, k: int | None = None):
    """Small random layer for gradient checks; weights are scaled so that
    neurons cross several quantiser levels."""
    if k is None:
        k = int(rng.integers(0, 2 ** n_bits))
    quant = QuantConfig(n_bits, k, "dequantized")
    b = float(rng.uniform(1, 1, 0.5, 2.0)[0, 0]) if b is None else b
    tracker = RangeTracker(b_ema=b)
    if variant == "lif":
        return LifParams(rng.normal(m, n), float(rng.uniform(1, 1, 0.5, 0.99)[0, 0]),
                         float(rng.uniform(1, 1, 0.5, 0.99)[0, 0]), quant, tracker)
    v2 = variant == "gated_v2"
    return GatedParams("v2" if v2 else "v1", rng.normal(m, n), rng.normal(m, n),
                       rng.normal(n, n) if v2 else None, rng.normal(n, n) if v2 else None,
                       alpha=float(rng.uniform(1, 1, 0.5, 0.99)[0, 0]), quant=quant,
                       tracker=tracker, y_scale=float(rng.uniform(1, 1, 0.1, 1.0)[0, 0]))


def random_instance(rng: Rng, variant: str, max_steps: int = 4, max_width: int = 3, max_batch: int = 2):
    N = int(rng.integers(1, max_steps + 1))
    m = int(rng.integers(1, max_width + 1))
    n = int(rng.integers(1, max_width + 1))
    B = int(rng.integers(1, max_batch + 1))
    p = random_layer(rng, variant, m, n)
    x = rng.gen.uniform(-1.0, 2.0, size=(N, B, m))
    mask = None
    if variant != "lif":
        mask = (rng.random((B, n)) >= 0.2) / 0.8
    coef = rng.gen.normal(size=(N, B, n))
    return p, x, mask, LinearQuadraticLoss(coef, float(rng.uniform(1, 1, 0.0, 0.5)[0, 0]))


def _layer_forward(p, x, tape, smooth, mask):
    if isinstance(p, LifParams):
        return lif_forward(p, x, tape, smooth=smooth)
    return gated_forward(p, x, tape, smooth=smooth, mask=mask)


def oracle_error(p, x, mask, loss, smooth: bool = False) -> float:
    tape = Tape(kind="")
    Y = _layer_forward(p, x, tape, smooth, mask)
    g = loss.grad(Y)
    return max_rel_error(backward(tape, p, g), oracle_backprop(tape, p, g))


def fd_error(p, x, loss, eps: float) -> float:
    return finite_diff_check(p, x, loss, eps=eps)


@dataclass
class GradcheckRow:
    variant: str
    instances: int
    oracle_max_rel: float
    fd_instances: int
    fd_max_rel: float


def run_gradcheck(cfg: dict) -> list[GradcheckRow]:
    rows = []
    root = Rng(cfg["seed"], stream_id=11)
    for vi, variant in enumerate(SPIKING):
        rng = root.spawn(vi)
        worst = 0.0
        for _ in range(cfg["gradcheck.instances"]):
            p, x, mask, loss = random_instance(rng, variant)
            worst = max(worst, oracle_error(p, x, mask, loss))
        fd_worst = 0.0
        for _ in range(cfg["gradcheck.fd_instances"]):
            p, x, _, loss = random_instance(rng, variant)
            fd_worst = max(fd_worst, fd_error(p, x, loss, cfg["gradcheck.eps"]))
        rows.append(GradcheckRow(variant, cfg["gradcheck.instances"], worst,
                                 cfg["gradcheck.fd_instances"], fd_worst))
    return rows


def gradcheck_csv(rows: list[GradcheckRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "instances", "oracle_max_rel", "fd_instances", "fd_max_rel"])
    for r in rows:
        w.writerow([r.variant, r.instances, repr(r.oracle_max_rel), r.fd_instances, repr(r.fd_max_rel)])
    return buf.getvalue()


# Vanishing gradients -----------------------------------------------------------

def vanish_layer(rng: Rng, variant: str, m: int, n: int, beta: float = 0.9, pin: float | None = None):
    """Layer for the lag diagnostic; ``b`` is large so the quantised outputs
    stay small relative to the state."""
    quant = QuantConfig(6, 4, "dequantized")
    tracker = RangeTracker(b_ema=4.0)
    W = 0.5 * rng.normal(m, n)
    if variant == "lif":
        return LifParams(W, 0.95, beta, quant, tracker)
    v2 = variant == "gated_v2"
    return GatedParams("v2" if v2 else "v1", 0.5 * rng.normal(m, n) + 2.0, W,
                       0.1 * rng.normal(n, n) if v2 else None, 0.1 * rng.normal(n, n) if v2 else None,
                       alpha=0.95, quant=quant, tracker=tracker, y_scale=1.0 / 64, pin_forget=pin)


def run_vanish(cfg: dict) -> dict:
    """Variant -> lag table rows for one random input sequence."""
    lags = [int(L) for L in cfg["vanish.lags"]]
    N = max(cfg["vanish.steps"], max(lags) + 1)
    m, n = cfg["vanish.inputs"], cfg["vanish.units"]
    out = {}
    for vi, variant in enumerate(cfg["vanish.variants"]):
        if variant not in SPIKING:
            raise ConfigError(f"no lag diagnostic for {variant!r}", "vanish.variants")
        rng = Rng(cfg["seed"], stream_id=13).spawn(vi)
        # one-hot frames have norm exactly 1, so the lif analytic column is beta**lag
        x = np.zeros((N, 1, m))
        x[np.arange(N), 0, rng.integers(0, m, size=N)] = 1.0
        p = vanish_layer(rng, variant, m, n, beta=cfg["model.beta"])
        out[variant] = vanishing_diagnostic(p, x, lags)
    return out


def write_vanish(tables: dict, out) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for variant, rows in tables.items():
        path = out / f"vanish_{variant}.csv"
        path.write_text(lag_table_csv(rows))
        paths.append(path)
    return paths


# Profiling ---------------------------------------------------------------------

def run_profile(cfg: dict, out=None, normalize_to: str | None = None, splits=None) -> list:
    base = normalize_to or cfg["profile.normalize_to"]
    tr, dv, te = splits if splits is not None else load_data(cfg)
    models = {}
    for path in cfg["profile.checkpoints"]:
        net, _ = load_checkpoint(path)
        models[net.spec.variant] = net
    if not models:
        for arch in cfg["profile.archs"]:
            models[arch] = run_train(cfg, splits=(tr, dv, te), variant=arch).net
    rows = normalized_report(models, te, normalize_to=base)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "profile.csv").write_text(report_csv(rows))
        (out / "profile.txt").write_text(report_text(rows, base))
    return rows


# Precision sweep -------------------------------------------------------------------

@dataclass
class SweepRow:
    n_bits: str  # "smooth" for the unquantised baseline
    k_threshold: int
    seed: int
    test_acc: float
    zero_fraction: float


def sweep_settings(cfg: dict) -> list[tuple]:
    """(label, spec overrides) pairs; threshold b / 2**n_bits means k = 1."""
    out = [(str(nb), {"n_bits": nb, "k_threshold": 1, "smooth": False}) for nb in cfg["sweep.bits"]]
    if cfg["sweep.smooth_baseline"]:
        out.append(("smooth", {"n_bits": max(cfg["sweep.bits"]), "k_threshold": 0, "smooth": True}))
    return out


def run_sweep(cfg: dict, out=None, log=None) -> list[SweepRow]:
    rows = []
    for seed in cfg["sweep.seeds"]:
        c = dict(cfg, seed=int(seed))
        splits = load_data(c)
        for label, over in sweep_settings(c):
            s = run_train(c, splits=splits, **over)
            rows.append(SweepRow(label, over["k_threshold"], int(seed), s.test_acc, s.test_zero_fraction))
            if log is not None:
                log(rows[-1])
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(sweep_csv(rows))
    return rows


def sweep_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n_bits", "k_threshold", "seed", "test_acc", "zero_fraction"])
    for r in rows:
        w.writerow([r.n_bits, r.k_threshold, r.seed, repr(r.test_acc), repr(r.zero_fraction)])
    return buf.getvalue()


def sweep_means(rows: list[SweepRow]) -> dict:
    acc: dict = {}
    for r in rows:
        acc.setdefault(r.n_bits, []).append(r.test_acc)
    return {k: float(np.mean(v)) for k, v in acc.items()}
