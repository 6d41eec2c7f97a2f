"""``spikeseq`` command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from spikeseq import experiments as X
from spikeseq.config import ConfigError, load_config
from spikeseq.data import SeqfError
from spikeseq.network import VARIANTS
from spikeseq.numerics import NonFiniteError
from spikeseq.trainer import CheckpointError, TrainingDiverged

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _echo(msg: str) -> None:
    print(msg, flush=True)


def cmd_train(cfg: dict, out: Path) -> int:
    _echo(f"model: {cfg['model.variant']} {cfg['model.layers']}x{cfg['model.units']}, "
          f"{cfg['quant.n_bits']}-bit, k={cfg['quant.k_threshold']}, seed={cfg['seed']}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg, sort_keys=True) + "\n")
    s = X.run_train(cfg, out, log=lambda r: _echo(
        f"epoch {r['epoch']:3d}  loss {r['train_loss']:.4f}  dev {r['dev_acc']:.2f}%  "
        f"lr {r['lr']:.2e}  zeros {100 * r['output_sparsity']:.1f}%"))
    _echo(f"best dev {s.best_dev:.2f}%  test {s.test_acc:.2f}%  -> {out}")
    return EXIT_OK


def cmd_eval(cfg: dict, out: Path, checkpoint: str | None) -> int:
    ckpt = checkpoint or cfg["eval.checkpoint"] or str(out / "best.spkc")
    if not Path(ckpt).exists():
        raise ConfigError(f"checkpoint {ckpt} does not exist", "eval.checkpoint")
    r = X.run_eval(cfg, ckpt, out)
    _echo(f"{r['variant']}: test accuracy {r['test_acc']:.2f}%, "
          f"output zeros {100 * r['test_output_sparsity']:.1f}%")
    return EXIT_OK


def cmd_gradcheck(cfg: dict, out: Path) -> int:
    rows = X.run_gradcheck(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "gradcheck.csv").write_text(X.gradcheck_csv(rows))
    ok = True
    for r in rows:
        _echo(f"{r.variant:<9} oracle max rel {r.oracle_max_rel:.3e} ({r.instances} instances)  "
              f"finite-diff max rel {r.fd_max_rel:.3e} ({r.fd_instances} instances)")
        ok &= r.oracle_max_rel <= cfg["gradcheck.oracle_tol"] and r.fd_max_rel <= cfg["gradcheck.fd_tol"]
    if not ok:
        _echo("gradient check FAILED")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_vanish(cfg: dict, out: Path) -> int:
    tables = X.run_vanish(cfg)
    for path in X.write_vanish(tables, out):
        _echo(f"wrote {path}")
    for variant, rows in tables.items():
        for r in rows:
            _echo(f"{variant:<9} lag {r.lag:3d}  norm {r.norm:.6e}  analytic {r.analytic_norm:.6e}")
    return EXIT_OK


def cmd_profile(cfg: dict, out: Path, normalize_to: str | None) -> int:
    if normalize_to is not None and normalize_to not in VARIANTS:
        raise ConfigError(f"must be one of {', '.join(VARIANTS)}", "--normalize-to")
    X.run_profile(cfg, out, normalize_to)
    sys.stdout.write((out / "profile.txt").read_text())
    return EXIT_OK


def cmd_sweep(cfg: dict, out: Path) -> int:
    X.run_sweep(cfg, out, log=lambda r: _echo(
        f"seed {r.seed} bits {r.n_bits:>6}  test {r.test_acc:.2f}%  zeros {100 * r.zero_fraction:.1f}%"))
    _echo(f"wrote {out / 'sweep.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spikeseq", description="Spiking recurrent sequence models.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--seed", type=int, help="overrides the config seed and SPIKESEQ_SEED")
        p.add_argument("--out", default="runs", help="output directory (default: runs)")
        return p

    common(sub.add_parser("train", help="train a model"))
    ev = common(sub.add_parser("eval", help="evaluate a checkpoint on the test split"))
    ev.add_argument("--checkpoint", help="checkpoint path (default: <out>/best.spkc)")
    common(sub.add_parser("gradcheck", help="compare BPTT with the path oracle and finite differences"))
    common(sub.add_parser("vanish", help="gradient norm versus lag"))
    pr = common(sub.add_parser("profile", help="event-driven multiplication counts"))
    pr.add_argument("--normalize-to", help="architecture used as the normalisation base")
    common(sub.add_parser("sweep-precision", help="accuracy versus output precision"))
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("must be non-negative", "--seed")
        cfg = load_config(args.config, seed=args.seed)
        out = Path(args.out)
        if args.command == "train":
            return cmd_train(cfg, out)
        if args.command == "eval":
            return cmd_eval(cfg, out, args.checkpoint)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, out)
        if args.command == "vanish":
            return cmd_vanish(cfg, out)
        if args.command == "profile":
            return cmd_profile(cfg, out, args.normalize_to)
        return cmd_sweep(cfg, out)
    except (ConfigError, SeqfError, CheckpointError) as exc:
        print(f"spikeseq: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDiverged, NonFiniteError, FloatingPointError) as exc:
        print(f"spikeseq: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
