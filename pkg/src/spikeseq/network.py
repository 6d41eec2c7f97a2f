"""Stacked recurrent layers with a fully connected softmax readout.

Each layer normalises its input weight sums (``x @ W`` for every gate) with
batch statistics before the recurrence. Spiking layers pass integer codes to
the next layer unchanged; the readout and the recurrent gate inputs see codes
divided by ``2**n_bits``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from spikeseq import kernels
from spikeseq.activation import QuantConfig, RangeTracker, ema_update
from spikeseq.baselines import (
    GRU_GATES,
    LSTM_GATES,
    GruParams,
    LstmParams,
    gru_scan,
    gru_scan_grad,
    lstm_scan,
    lstm_scan_grad,
)
from spikeseq.bptt import sweep
from spikeseq.gated_layer import GatedParams, gated_scan
from spikeseq.lif_layer import LifParams, lif_scan
from spikeseq.norm import BnState, batchnorm_backward, batchnorm_forward
from spikeseq.numerics import Rng, glorot_uniform, orthogonal
from spikeseq.tape import Tape

SPIKING = ("lif", "gated_v1", "gated_v2")
VARIANTS = SPIKING + ("gru", "lstm")


@dataclass
class ModelSpec:
    variant: str = "gated_v2"
    input_dim: int = 2
    classes: int = 10
    layers: int = 2
    units: int = 64
    n_bits: int = 6
    k_threshold: int = 4
    reset_mode: str = "dequantized"
    alpha: float = 0.95
    beta: float = 0.9
    ema_momentum: float = 0.99
    norm: bool = True
    smooth: bool = False
    label_mode: str = "sequence"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"model.variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.label_mode not in ("sequence", "frame"):
            raise ValueError(f"label_mode must be 'sequence' or 'frame', got {self.label_mode!r}")
        if self.layers < 1 or self.units < 1 or self.input_dim < 1 or self.classes < 2:
            raise ValueError("layers, units, input_dim must be >= 1 and classes >= 2")
        if self.variant in SPIKING:
            self.quant  # validates n_bits / k_threshold / reset_mode

    @property
    def quant(self) -> QuantConfig:
        return QuantConfig(self.n_bits, self.k_threshold, self.reset_mode)

    @property
    def spiking(self) -> bool:
        return self.variant in SPIKING

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def dropout_mask(rng: Rng | None, shape, rate: float) -> np.ndarray:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0 or rng is None:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


class _Layer:
    """Common normalised-drive plumbing."""

    drive_names: tuple = ()

    def _init_norm(self, n: int, norm: bool):
        self.bn = {d: BnState.create(n) for d in self.drive_names} if norm else {}

    def set_mode(self, train: bool):
        for bn in self.bn.values():
            bn.mode = "train" if train else "eval"

    def _drives(self, x: np.ndarray, weights: dict) -> dict:
        N, B, m = x.shape
        flat = x.reshape(N * B, m)
        out = {}
        self._bn_cache = {}
        for d, W in zip(self.drive_names, weights):
            a = (flat @ W).reshape(N, B, W.shape[1])
            if d in self.bn:
                a, self._bn_cache[d] = batchnorm_forward(a, self.bn[d])
            out[d] = a
        return out

    def _drive_backward(self, x: np.ndarray, gdrives: dict, weights: list) -> tuple[dict, np.ndarray]:
        N, B, m = x.shape
        flat = x.reshape(N * B, m)
        grads = {}
        gx = np.zeros((N * B, m))
        for d, W, wname in zip(self.drive_names, weights, self.weight_names):
            g = gdrives[d]
            if d in self.bn:
                g, dscale, dshift = batchnorm_backward(g, self._bn_cache[d])
                grads[f"bn_{d}.scale"] = dscale
                grads[f"bn_{d}.shift"] = dshift
            g2 = g.reshape(N * B, -1)
            grads[wname] = flat.T @ g2
            gx += g2 @ W.T
        return grads, gx.reshape(N, B, m)

    def norm_params(self) -> dict:
        out = {}
        for d, bn in self.bn.items():
            out[f"bn_{d}.scale"] = bn.scale
            out[f"bn_{d}.shift"] = bn.shift
        return out


class SpikingLayer(_Layer):
    def __init__(self, spec: ModelSpec, m: int, rng: Rng):
        n = spec.units
        self.variant = spec.variant
        self.smooth = spec.smooth
        self.dropout = 0.0
        quant = spec.quant
        tracker = RangeTracker(momentum=spec.ema_momentum)
        if spec.variant == "lif":
            self.core = LifParams(glorot_uniform(rng, m, n), spec.alpha, spec.beta, quant, tracker)
            self.drive_names = ("A",)
            self.weight_names = ("W",)
        else:
            v2 = spec.variant == "gated_v2"
            self.core = GatedParams(
                "v2" if v2 else "v1",
                glorot_uniform(rng, m, n),
                glorot_uniform(rng, m, n),
                orthogonal(rng, n) if v2 else None,
                orthogonal(rng, n) if v2 else None,
                alpha=spec.alpha, quant=quant, tracker=tracker,
                y_scale=1.0 / quant.levels)
            self.drive_names = ("Af", "Ac")
            self.weight_names = ("W_fi", "W_ci")
        self._init_norm(n, spec.norm)
        self.tape: Tape | None = None

    @property
    def tracker(self) -> RangeTracker:
        return self.core.tracker

    @property
    def out_scale(self) -> float:
        return 1.0 / self.core.quant.levels

    def params(self) -> dict:
        p = dict(self.core.weights())
        p.update(self.norm_params())
        return p

    def _scan(self, drives, b, mask):
        if self.variant == "lif":
            A = drives["A"] if mask is None else drives["A"] * mask
            I, V, Y = lif_scan(self.core, np.ascontiguousarray(A), b, self.smooth)
            return dict(I=I, V=V, Y=Y)
        I, V, Y, F, C, Ac = gated_scan(self.core, np.ascontiguousarray(drives["Af"]),
                                       np.ascontiguousarray(drives["Ac"]), b, self.smooth, mask)
        return dict(I=I, V=V, Y=Y, F=F, C=C, Ac=Ac)

    def _silent_scan(self, drives, mask) -> np.ndarray:
        """Membrane potentials with every output forced to zero."""
        levels = self.core.quant.levels
        if self.variant == "lif":
            A = drives["A"] if mask is None else drives["A"] * mask
            _, V, _ = kernels.lif_scan(np.ascontiguousarray(A), self.core.alpha, self.core.beta,
                                       1.0, levels, np.inf, 0.0, False)
            return V
        _, B, n = drives["Af"].shape
        if mask is None:
            mask = np.ones((B, n))
        out = kernels.gated_scan(np.ascontiguousarray(drives["Af"]), np.ascontiguousarray(drives["Ac"]),
                                 np.zeros((1, 1)), np.zeros((1, 1)), mask, self.core.alpha, 1.0,
                                 levels, np.inf, 0.0, 0.0, False, np.nan, False)
        return out[1]

    def forward(self, x: np.ndarray, train: bool, rng: Rng | None = None) -> np.ndarray:
        self.set_mode(train)
        weights = [self.core.weights()[w] for w in self.weight_names]
        drives = self._drives(x, weights)
        _, B, _ = x.shape
        n = self.core.shape[1]
        mask = dropout_mask(rng, (B, n), self.dropout) if (train and self.dropout > 0) else None
        tracker = self.tracker
        if tracker.b_ema is None:
            if not train:
                raise RuntimeError("layer range is unknown; train before evaluating")
            # calibration pass with silent outputs sizes the first range estimate
            ema_update(tracker, float(self._silent_scan(drives, mask).max()))
        b = tracker.b
        rec = self._scan(drives, b, mask)
        if train and not tracker.frozen:
            ema_update(tracker, float(rec["V"].max()))
        self._x = x
        self._mask = mask
        self._drives_used = drives
        self.tape = Tape(kind=self.variant,
                         x=x, drives=drives, b=b, smooth=self.smooth,
                         mask=mask if self.variant != "lif" else None,
                         pin_forget=getattr(self.core, "pin_forget", None), **rec)
        return rec["Y"]

    def backward(self, gY: np.ndarray) -> tuple[dict, np.ndarray]:
        sw = sweep(self.tape, self.core, gY)
        gdrives = dict(sw.drives)
        if self.variant == "lif" and self._mask is not None:
            gdrives["A"] = gdrives["A"] * self._mask
        weights = [self.core.weights()[w] for w in self.weight_names]
        grads, gx = self._drive_backward(self._x, gdrives, weights)
        grads.update(sw.recurrent)
        return grads, gx


class CellLayer(_Layer):
    """GRU or LSTM layer; dropout masks the candidate."""

    def __init__(self, spec: ModelSpec, m: int, rng: Rng):
        n = spec.units
        self.variant = spec.variant
        cls = GruParams if spec.variant == "gru" else LstmParams
        self.core = cls.init(rng, m, n)
        self.gates = GRU_GATES if spec.variant == "gru" else LSTM_GATES
        self.drive_names = self.gates
        self.weight_names = tuple(f"W_{g}" for g in self.gates)
        self.dropout = 0.0
        self._init_norm(n, spec.norm)
        self.out_scale = 1.0

    def params(self) -> dict:
        p = dict(self.core.weights())
        p.update(self.norm_params())
        return p

    def forward(self, x: np.ndarray, train: bool, rng: Rng | None = None) -> np.ndarray:
        self.set_mode(train)
        weights = [self.core.W[g] for g in self.gates]
        drives = self._drives(x, weights)
        _, B, _ = x.shape
        n = self.core.shape[1]
        mask = dropout_mask(rng, (B, n), self.dropout) if (train and self.dropout > 0) else np.ones((B, n))
        scan = gru_scan if self.variant == "gru" else lstm_scan
        H, cache = scan(self.core, drives, mask)
        self._x, self._mask, self._H, self._cache = x, mask, H, cache
        return H

    def backward(self, gH: np.ndarray) -> tuple[dict, np.ndarray]:
        grad = gru_scan_grad if self.variant == "gru" else lstm_scan_grad
        gA, gU = grad(self.core, self._H, self._cache, gH, self._mask)
        weights = [self.core.W[g] for g in self.gates]
        grads, gx = self._drive_backward(self._x, gA, weights)
        for g in self.gates:
            grads[f"U_{g}"] = gU[g]
        return grads, gx


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ForwardStats:
    zero_outputs: int = 0
    total_outputs: int = 0
    per_layer: list = field(default_factory=list)

    @property
    def zero_fraction(self) -> float:
        return self.zero_outputs / self.total_outputs if self.total_outputs else 0.0


class Network:
    def __init__(self, spec: ModelSpec, seed: int = 0, dropout: float = 0.0):
        self.spec = spec
        rng = Rng(seed, stream_id=1)
        self.layers = []
        m = spec.input_dim
        for _ in range(spec.layers):
            layer = SpikingLayer(spec, m, rng) if spec.spiking else CellLayer(spec, m, rng)
            layer.dropout = dropout
            self.layers.append(layer)
            m = spec.units
        self.W_out = glorot_uniform(rng, spec.units, spec.classes)
        self.b_out = np.zeros(spec.classes)
        self.stats = ForwardStats()

    # parameters ---------------------------------------------------------
    def params(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.params().items():
                out[f"layer{i}.{k}"] = v
        out["readout.W"] = self.W_out
        out["readout.b"] = self.b_out
        return out

    def synaptic_param_count(self) -> int:
        from spikeseq.gated_layer import param_count

        return sum(param_count(layer.core) for layer in self.layers)

    def trackers(self) -> list[RangeTracker]:
        return [layer.tracker for layer in self.layers if isinstance(layer, SpikingLayer)]

    def bn_states(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            for d, bn in layer.bn.items():
                out[f"layer{i}.bn_{d}"] = bn
        return out

    # forward / backward ---------------------------------------------------
    def forward(self, x: np.ndarray, train: bool = False, rng: Rng | None = None) -> np.ndarray:
        """Logits: ``(batch, classes)`` in sequence mode, ``(N, batch, classes)`` per frame."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        h = x
        stats = ForwardStats()
        for layer in self.layers:
            h = layer.forward(h, train, rng)
            zeros = int(h.size - np.count_nonzero(h))
            stats.zero_outputs += zeros
            stats.total_outputs += h.size
            stats.per_layer.append(zeros / h.size)
        self.stats = stats
        self._h = h
        scale = self.layers[-1].out_scale
        feats = h[-1] if self.spec.label_mode == "sequence" else h
        self._feats = feats * scale
        return self._feats @ self.W_out + self.b_out

    def loss_and_grads(self, x: np.ndarray, labels: np.ndarray, rng: Rng | None = None,
                       train: bool = True) -> tuple[float, dict]:
        logits = self.forward(x, train=train, rng=rng)
        K = self.spec.classes
        flat = logits.reshape(-1, K)
        lab = np.asarray(labels).reshape(-1)
        p = _softmax(flat)
        count = flat.shape[0]
        loss = float(-np.mean(np.log(p[np.arange(count), lab] + 1e-300)))
        d = p
        d[np.arange(count), lab] -= 1.0
        d /= count
        grads = {
            "readout.W": self._feats.reshape(-1, self.spec.units).T @ d,
            "readout.b": d.sum(axis=0),
        }
        gfeat = (d @ self.W_out.T).reshape(self._feats.shape) * self.layers[-1].out_scale
        gh = np.zeros_like(self._h)
        if self.spec.label_mode == "sequence":
            gh[-1] = gfeat
        else:
            gh[:] = gfeat
        for i in range(len(self.layers) - 1, -1, -1):
            lg, gh = self.layers[i].backward(gh)
            for k, v in lg.items():
                grads[f"layer{i}.{k}"] = v
        return loss, grads

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.forward(x, train=False), axis=-1)

    def freeze(self, frozen: bool = True) -> None:
        for t in self.trackers():
            t.frozen = frozen
