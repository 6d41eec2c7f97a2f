"""Mini-batch training: Adam, recurrent dropout, LR halving, SPKC checkpoints."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from spikeseq.data import SeqDataset
from spikeseq.network import ModelSpec, Network, dropout_mask
from spikeseq.numerics import NonFiniteError, Rng

CKPT_MAGIC = b"SPKC"
CKPT_VERSION = 1


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr0: float = 1e-3
    batch: int = 64
    epochs: int = 24
    dropout: float = 0.1
    halve_patience: int = 3
    halve_delta: float = 0.1
    seed: int = 0
    clip: float | None = None

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError(f"train.lr0 must be positive, got {self.lr0}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"train.dropout must lie in [0, 1), got {self.dropout}")
        if self.batch < 1:
            raise ValueError(f"train.batch must be >= 1, got {self.batch}")
        if self.epochs < 0:
            raise ValueError(f"train.epochs must be >= 0, got {self.epochs}")
        if self.clip is not None and not self.clip > 0:
            raise ValueError(f"train.clip must be positive, got {self.clip}")


# Adam ----------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(state: AdamState, params: dict, grads: dict, lr: float) -> dict:
    """Bias-corrected Adam update applied in place to ``params``."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NonFiniteError(f"gradient of {k} has {bad} non-finite entries")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for k, g in grads.items():
        m = state.m[k]
        v = state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def recurrent_dropout_mask(rng: Rng, shape, rate: float) -> np.ndarray:
    """Inverted dropout mask, drawn once per sequence and held over time."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    return dropout_mask(rng, shape, rate)


def lr_schedule(history, lr: float, patience: int = 3, delta: float = 0.1) -> float:
    """Halve ``lr`` when each of the last ``patience`` dev-accuracy gains is below ``delta`` points.

    ``history`` lists dev accuracies in percent, oldest first.
    """
    if len(history) == 0:
        raise ValueError("lr_schedule needs at least one dev accuracy")
    gains = np.diff(np.asarray(history, dtype=np.float64))
    if len(gains) < patience:
        return lr
    if np.all(gains[-patience:] < delta):
        return lr / 2.0
    return lr


# Batching / evaluation -----------------------------------------------------

def length_batches(ds: SeqDataset, batch: int, rng: Rng | None = None) -> list[np.ndarray]:
    """Index batches of equal-length sequences, shuffled when ``rng`` is given."""
    by_len: dict[int, list[int]] = {}
    for i, f in enumerate(ds.frames):
        by_len.setdefault(f.shape[0], []).append(i)
    out = []
    for T in sorted(by_len):
        idx = np.array(by_len[T])
        if rng is not None:
            idx = idx[rng.permutation(len(idx))]
        out.extend(idx[s:s + batch] for s in range(0, len(idx), batch))
    if rng is not None:
        out = [out[i] for i in rng.permutation(len(out))]
    return out


@dataclass
class EvalResult:
    accuracy: float  # percent
    loss: float
    zero_fraction: float


def evaluate(net: Network, ds: SeqDataset, batch: int = 256) -> EvalResult:
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    hits = count = 0
    loss_sum = 0.0
    zeros = total = 0
    for idx in length_batches(ds, batch):
        x, y = ds.batch(idx)
        logits = net.forward(x, train=False)
        flat = logits.reshape(-1, logits.shape[-1])
        lab = y.reshape(-1)
        z = flat - flat.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        loss_sum += float(-logp[np.arange(len(lab)), lab].sum())
        hits += int(np.sum(np.argmax(flat, axis=1) == lab))
        count += len(lab)
        zeros += net.stats.zero_outputs
        total += net.stats.total_outputs
    return EvalResult(100.0 * hits / count, loss_sum / count, zeros / total if total else 0.0)


def _clip(grads: dict, limit: float | None) -> None:
    if limit is None:
        return
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > limit:
        for g in grads.values():
            g *= limit / norm


# Training loop -------------------------------------------------------------

@dataclass
class TrainResult:
    net: Network
    history: list
    best_dev: float
    best_epoch: int


@dataclass
class _Run:
    """Everything that must survive a checkpoint round trip."""

    net: Network
    adam: AdamState
    rng: Rng
    lr: float
    epoch: int = 0
    history: list = field(default_factory=list)
    since_halving: list = field(default_factory=list)
    best_dev: float = -1.0
    best_epoch: int = -1


def train(spec: ModelSpec, train_ds: SeqDataset, dev_ds: SeqDataset, cfg: TrainConfig,
          out_dir=None, resume=None, log=None) -> TrainResult:
    """Train ``spec`` on ``train_ds``, picking the best epoch by dev accuracy.

    With ``out_dir`` set, writes ``metrics.jsonl``, ``last.spkc`` after every
    epoch and ``best.spkc`` whenever dev accuracy improves. ``resume`` names a
    checkpoint to continue from.
    """
    if len(train_ds) == 0:
        raise ValueError("training set is empty")
    if resume is not None:
        run = _restore(resume)
        if run.net.spec != spec:
            raise CheckpointError("checkpoint model does not match the requested model")
    else:
        net = Network(spec, seed=cfg.seed, dropout=cfg.dropout)
        run = _Run(net, AdamState.create(net.params()), Rng(cfg.seed, stream_id=2), cfg.lr0)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics = out / "metrics.jsonl"
        lines = [_metric_line(h) for h in run.history]
        metrics.write_text("".join(lines))
    net = run.net
    params = net.params()
    while run.epoch < cfg.epochs:
        losses = []
        for bi, idx in enumerate(length_batches(train_ds, cfg.batch, run.rng)):
            x, y = train_ds.batch(idx)
            loss, grads = net.loss_and_grads(x, y, rng=run.rng)
            if not np.isfinite(loss):
                raise TrainingDiverged(run.epoch + 1, bi, loss)
            _clip(grads, cfg.clip)
            adam_step(run.adam, params, grads, run.lr)
            losses.append(loss)
        run.epoch += 1
        ev = evaluate(net, dev_ds)
        record = {"epoch": run.epoch, "train_loss": float(np.mean(losses)),
                  "dev_acc": ev.accuracy, "lr": run.lr, "output_sparsity": ev.zero_fraction}
        run.history.append(record)
        improved = ev.accuracy > run.best_dev
        if improved:
            run.best_dev, run.best_epoch = ev.accuracy, run.epoch
        run.since_halving.append(ev.accuracy)
        new_lr = lr_schedule(run.since_halving, run.lr, cfg.halve_patience, cfg.halve_delta)
        if new_lr != run.lr:
            run.lr = new_lr
            run.since_halving = [ev.accuracy]
        if log is not None:
            log(record)
        if out is not None:
            with metrics.open("a") as fh:
                fh.write(_metric_line(record))
            _save(run, out / "last.spkc")
            if improved:
                _save(run, out / "best.spkc")
    return TrainResult(net, run.history, run.best_dev, run.best_epoch)


def _metric_line(record: dict) -> str:
    return json.dumps(record, sort_keys=False) + "\n"


# Checkpoints ---------------------------------------------------------------

def _tensors(run: _Run) -> dict:
    out = {}
    for k, p in run.net.params().items():
        out[f"param.{k}"] = p
    for k in run.adam.m:
        out[f"adam.m.{k}"] = run.adam.m[k]
        out[f"adam.v.{k}"] = run.adam.v[k]
    for k, bn in run.net.bn_states().items():
        out[f"bn.{k}.running_mean"] = bn.running_mean
        out[f"bn.{k}.running_var"] = bn.running_var
    return out


def _save(run: _Run, path) -> None:
    header = {
        "format": "spikeseq-checkpoint",
        "model": run.net.spec.to_dict(),
        "dropout": run.net.layers[0].dropout,
        "epoch": run.epoch,
        "lr": run.lr,
        "history": run.history,
        "since_halving": run.since_halving,
        "best_dev": run.best_dev,
        "best_epoch": run.best_epoch,
        "adam": {"t": run.adam.t, "beta1": run.adam.beta1, "beta2": run.adam.beta2, "eps": run.adam.eps},
        "rng": run.rng.get_state(),
        "trackers": [{"b_ema": t.b_ema, "momentum": t.momentum, "frozen": t.frozen}
                     for t in run.net.trackers()],
    }
    blob = json.dumps(header).encode()
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(blob)), blob]
    tensors = _tensors(run)
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        key = name.encode()
        arr = np.ascontiguousarray(arr, dtype="<f8")
        parts.append(struct.pack("<I", len(key)) + key)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def _read(path) -> tuple[dict, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic {raw[:4]!r})")
    try:
        version, hlen = struct.unpack_from("<II", raw, 4)
        if version != CKPT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        pos = 12
        header = json.loads(raw[pos:pos + hlen])
        pos += hlen
        (count,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (klen,) = struct.unpack_from("<I", raw, pos)
            name = raw[pos + 4:pos + 4 + klen].decode()
            pos += 4 + klen
            (ndim,) = struct.unpack_from("<I", raw, pos)
            shape = struct.unpack_from(f"<{ndim}I", raw, pos + 4)
            pos += 4 + 4 * ndim
            size = int(np.prod(shape)) * 8
            if pos + size > len(raw):
                raise CheckpointError(f"{path}: truncated tensor {name}")
            tensors[name] = np.frombuffer(raw[pos:pos + size], dtype="<f8").reshape(shape).copy()
            pos += size
    except (struct.error, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    return header, tensors


def _restore(path) -> _Run:
    header, tensors = _read(path)
    spec = ModelSpec(**header["model"])
    net = Network(spec, seed=0, dropout=header["dropout"])
    params = net.params()
    for k, p in params.items():
        p[...] = tensors[f"param.{k}"]
    for k, bn in net.bn_states().items():
        bn.running_mean = tensors[f"bn.{k}.running_mean"]
        bn.running_var = tensors[f"bn.{k}.running_var"]
    for t, saved in zip(net.trackers(), header["trackers"]):
        t.b_ema, t.momentum, t.frozen = saved["b_ema"], saved["momentum"], saved["frozen"]
    a = header["adam"]
    adam = AdamState({k: tensors[f"adam.m.{k}"] for k in params},
                     {k: tensors[f"adam.v.{k}"] for k in params},
                     a["t"], a["beta1"], a["beta2"], a["eps"])
    rng = Rng(0)
    rng.set_state(header["rng"])
    return _Run(net, adam, rng, header["lr"], header["epoch"], header["history"],
                header["since_halving"], header["best_dev"], header["best_epoch"])


def load_checkpoint(path) -> tuple[Network, dict]:
    """Network with restored weights, plus the checkpoint header."""
    header, _ = _read(path)
    return _restore(path).net, header


def save_checkpoint(path, net: Network, adam: AdamState | None = None, rng: Rng | None = None,
                    lr: float = 0.0, epoch: int = 0) -> None:
    run = _Run(net, adam or AdamState.create(net.params()), rng or Rng(0), lr, epoch)
    _save(run, path)
