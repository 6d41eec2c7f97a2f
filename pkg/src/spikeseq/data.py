"""Sequence datasets: the SEQF container and synthetic task generators.

SEQF layout (little-endian)::

    b"SEQ1"  u32 version=1  u32 n_sequences  u32 feature_dim
    u8 label_mode (0 per-sequence, 1 per-frame)  u32 class_count
    per sequence: u32 T, T*feature_dim float32 frames, 1 or T u32 labels

Generated frames are rounded to float32 so that save/load is lossless.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from spikeseq.numerics import Rng

MAGIC = b"SEQ1"
VERSION = 1
_HEADER = struct.Struct("<4sIIIBI")


class SeqfError(ValueError):
    pass


class SeqfMagicError(SeqfError):
    pass


class SeqfTruncatedError(SeqfError):
    pass


class SeqfLabelError(SeqfError):
    pass


class SeqfVersionError(SeqfError):
    pass


@dataclass
class SeqDataset:
    frames: list  # (T, m) float64 arrays
    labels: list  # int arrays of length 1 (per-sequence) or T (per-frame)
    class_count: int
    framewise: bool
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.frames) != len(self.labels):
            raise SeqfLabelError("frames and labels disagree in length")
        dims = {f.shape[1] for f in self.frames}
        if len(dims) > 1:
            raise SeqfLabelError(f"mixed feature dimensions {sorted(dims)}")
        for f, lab in zip(self.frames, self.labels):
            want = f.shape[0] if self.framewise else 1
            if len(lab) != want:
                raise SeqfLabelError(f"expected {want} labels for a sequence of length {f.shape[0]}, got {len(lab)}")
            if len(lab) and (lab.min() < 0 or lab.max() >= self.class_count):
                raise SeqfLabelError(f"label outside [0, {self.class_count})")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def feature_dim(self) -> int:
        return self.frames[0].shape[1] if self.frames else 0

    @property
    def label_mode(self) -> str:
        return "frame" if self.framewise else "sequence"

    def subset(self, idx) -> "SeqDataset":
        return SeqDataset([self.frames[i] for i in idx], [self.labels[i] for i in idx],
                          self.class_count, self.framewise, dict(self.meta))

    def batch(self, idx) -> tuple[np.ndarray, np.ndarray]:
        """Stack equal-length sequences into ``(T, B, m)`` and their labels."""
        x = np.stack([self.frames[i] for i in idx], axis=1)
        if self.framewise:
            y = np.stack([self.labels[i] for i in idx], axis=1)
        else:
            y = np.array([self.labels[i][0] for i in idx])
        return x, y

    def same(self, other: "SeqDataset") -> bool:
        return (self.class_count == other.class_count and self.framewise == other.framewise
                and len(self) == len(other)
                and all(np.array_equal(a, b) for a, b in zip(self.frames, other.frames))
                and all(np.array_equal(a, b) for a, b in zip(self.labels, other.labels)))


def save_seqf(ds: SeqDataset, path) -> None:
    parts = [_HEADER.pack(MAGIC, VERSION, len(ds), ds.feature_dim, int(ds.framewise), ds.class_count)]
    for f, lab in zip(ds.frames, ds.labels):
        parts.append(struct.pack("<I", f.shape[0]))
        parts.append(np.ascontiguousarray(f, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(lab, dtype="<u4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_seqf(path) -> SeqDataset:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise SeqfMagicError(f"{path}: not a SEQF file (bad magic {raw[:4]!r})")
    if len(raw) < _HEADER.size:
        raise SeqfTruncatedError(f"{path}: header truncated")
    _, version, count, dim, mode, classes = _HEADER.unpack_from(raw, 0)
    if version != VERSION:
        raise SeqfVersionError(f"{path}: unsupported SEQF version {version}")
    if mode not in (0, 1):
        raise SeqfLabelError(f"{path}: label_mode must be 0 or 1, got {mode}")
    pos = _HEADER.size
    frames, labels = [], []

    def take(nbytes):
        nonlocal pos
        if pos + nbytes > len(raw):
            raise SeqfTruncatedError(f"{path}: truncated in sequence {len(frames)}")
        chunk = raw[pos:pos + nbytes]
        pos += nbytes
        return chunk

    for _ in range(count):
        (T,) = struct.unpack("<I", take(4))
        f = np.frombuffer(take(4 * T * dim), dtype="<f4").reshape(T, dim).astype(np.float64)
        nlab = T if mode == 1 else 1
        lab = np.frombuffer(take(4 * nlab), dtype="<u4").astype(np.int64)
        frames.append(f)
        labels.append(lab)
    if pos != len(raw):
        raise SeqfTruncatedError(f"{path}: {len(raw) - pos} trailing bytes")
    return SeqDataset(frames, labels, classes, bool(mode))


def _f32(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


# Adding task -------------------------------------------------------------

ADDING_CLASSES = 10


def adding_bucket(total: float) -> int:
    """Sum of two values in [0, 1] -> one of 10 equal-width classes over [0, 2]."""
    return min(int(total / 0.2), ADDING_CLASSES - 1)


def gen_adding(rng: Rng, count: int, T: int) -> SeqDataset:
    """Two marked uniform values per sequence; the label is their bucketed sum.

    One marker falls in the first half of the sequence, the other in the second.
    """
    if T < 2:
        raise ValueError("adding task needs T >= 2")
    frames, labels = [], []
    half = T // 2
    for _ in range(count):
        x = np.zeros((T, 2))
        x[:, 0] = _f32(rng.random(T))
        a = int(rng.integers(0, half))
        b = int(rng.integers(half, T))
        x[a, 1] = x[b, 1] = 1.0
        frames.append(x)
        labels.append(np.array([adding_bucket(x[a, 0] + x[b, 0])]))
    return SeqDataset(frames, labels, ADDING_CLASSES, False, {"task": "adding", "T": T})


def adding_class_probs() -> np.ndarray:
    """Bucket probabilities when the sum of two U(0, 1) draws is triangular."""
    def cdf(s):
        return s * s / 2.0 if s <= 1.0 else 1.0 - (2.0 - s) ** 2 / 2.0

    edges = np.linspace(0.0, 2.0, ADDING_CLASSES + 1)
    return np.array([cdf(edges[k + 1]) - cdf(edges[k]) for k in range(ADDING_CLASSES)])


# Copy-memory task ----------------------------------------------------------

COPY_SYMBOLS = 8


def gen_copy(rng: Rng, count: int, T_delay: int, pattern_len: int,
             symbols: int = COPY_SYMBOLS) -> SeqDataset:
    """Recall every input symbol ``T_delay`` steps later.

    Features are a one-hot symbol (``symbols`` channels), a blank channel and
    a recall cue that is on from step ``T_delay`` onward. Label ``symbols``
    means blank; with ``T_delay == 0`` the label equals the current symbol.
    """
    if T_delay < 0 or pattern_len < 1:
        raise ValueError("need T_delay >= 0 and pattern_len >= 1")
    T = pattern_len + T_delay
    blank = symbols
    frames, labels = [], []
    for _ in range(count):
        seq = np.full(T, blank)
        seq[:pattern_len] = rng.integers(0, symbols, size=pattern_len)
        x = np.zeros((T, symbols + 2))
        x[np.arange(T), seq] = 1.0
        x[T_delay:, symbols + 1] = 1.0
        lab = np.full(T, blank)
        lab[T_delay:] = seq[:T - T_delay]
        frames.append(x)
        labels.append(lab.astype(np.int64))
    return SeqDataset(frames, labels, symbols + 1, True,
                      {"task": "copy", "T_delay": T_delay, "pattern_len": pattern_len})


# Framewise task ----------------------------------------------------------

def framewise_templates(rng: Rng, classes: int, dim: int) -> np.ndarray:
    return _f32(rng.random((classes, dim)))


def gen_framewise(rng: Rng, count: int, T: int, classes: int, noise: float = 0.1,
                  dim: int = 16, templates: np.ndarray | None = None,
                  min_segment: int = 3, max_segment: int = 10) -> SeqDataset:
    """Piecewise-stationary class segments of noisy feature templates.

    Each segment lasts ``min_segment``..``max_segment`` frames (the final one
    may run longer so no segment is cut below ``min_segment``); consecutive
    segments always change class.
    """
    if T < min_segment:
        raise ValueError(f"T must be at least {min_segment}")
    if templates is None:
        templates = framewise_templates(rng, classes, dim)
    templates = np.asarray(templates, dtype=np.float64)
    classes, dim = templates.shape
    frames, labels = [], []
    for _ in range(count):
        lab = np.empty(T, dtype=np.int64)
        t = 0
        prev = -1
        while t < T:
            length = int(rng.integers(min_segment, max_segment + 1))
            if T - (t + length) < min_segment:
                length = T - t
            c = int(rng.integers(0, classes - 1)) if prev >= 0 else int(rng.integers(0, classes))
            if prev >= 0 and c >= prev:
                c += 1
            lab[t:t + length] = c
            prev = c
            t += length
        x = templates[lab] + noise * rng.gen.standard_normal((T, dim))
        frames.append(_f32(x))
        labels.append(lab)
    return SeqDataset(frames, labels, classes, True,
                      {"task": "framewise", "noise": noise, "templates": templates})


def nearest_template_accuracy(ds: SeqDataset, templates: np.ndarray) -> float:
    """Per-frame accuracy of the minimum-distance classifier (Bayes-optimal for
    isotropic Gaussian noise and equal class priors)."""
    hits = total = 0
    for f, lab in zip(ds.frames, ds.labels):
        d = ((f[:, None, :] - templates[None, :, :]) ** 2).sum(axis=2)
        hits += int(np.sum(np.argmin(d, axis=1) == lab))
        total += len(lab)
    return hits / total


# Splits ------------------------------------------------------------------

def synthetic_splits(task: str, seed: int, sizes=(1000, 200, 200), **kw) -> tuple[SeqDataset, ...]:
    """Train/dev/test sets drawn from disjoint random streams."""
    root = Rng(seed, stream_id=7)
    out = []
    if task == "framewise":
        if kw.get("templates") is None:
            kw["templates"] = framewise_templates(root.spawn(99), kw.get("classes", 10), kw.pop("dim", 16))
        kw.setdefault("classes", kw["templates"].shape[0])
    for k, count in enumerate(sizes):
        rng = root.spawn(k)
        if task == "adding":
            out.append(gen_adding(rng, count, kw.get("T", 100)))
        elif task == "copy":
            out.append(gen_copy(rng, count, kw.get("T_delay", 10), kw.get("pattern_len", 5)))
        elif task == "framewise":
            out.append(gen_framewise(rng, count, kw.get("T", 50), kw["classes"],
                                     noise=kw.get("noise", 0.1), templates=kw["templates"],
                                     min_segment=kw.get("min_segment", 3),
                                     max_segment=kw.get("max_segment", 10)))
        else:
            raise ValueError(f"unknown synthetic task {task!r}")
    return tuple(out)
