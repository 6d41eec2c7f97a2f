import struct

import numpy as np
import pytest

from spikeseq.data import (
    SeqDataset,
    SeqfLabelError,
    SeqfMagicError,
    SeqfTruncatedError,
    SeqfVersionError,
    adding_bucket,
    adding_class_probs,
    gen_adding,
    gen_copy,
    gen_framewise,
    load_seqf,
    nearest_template_accuracy,
    save_seqf,
    synthetic_splits,
)
from spikeseq.numerics import Rng


def hand_file(path, version=1, labels=(1, 0)):
    """Two sequences of 3-dim frames with per-sequence labels."""
    blob = struct.pack("<4sIIIBI", b"SEQ1", version, 2, 3, 0, 2)
    blob += struct.pack("<I", 2) + np.arange(6, dtype="<f4").tobytes() + struct.pack("<I", labels[0])
    blob += struct.pack("<I", 1) + np.full(3, 0.5, dtype="<f4").tobytes() + struct.pack("<I", labels[1])
    path.write_bytes(blob)
    return blob


def test_hand_built_file(tmp_path):
    hand_file(tmp_path / "h.seqf")
    ds = load_seqf(tmp_path / "h.seqf")
    assert len(ds) == 2 and ds.feature_dim == 3 and ds.label_mode == "sequence"
    assert [f.shape for f in ds.frames] == [(2, 3), (1, 3)]
    np.testing.assert_array_equal(ds.frames[0].ravel(), np.arange(6))
    assert [int(lab[0]) for lab in ds.labels] == [1, 0]


@pytest.mark.parametrize("task", ["adding", "copy", "framewise"])
def test_round_trip(tmp_path, task):
    ds = synthetic_splits(task, 3, sizes=(5, 1, 1), T=12)[0]
    save_seqf(ds, tmp_path / "d.seqf")
    back = load_seqf(tmp_path / "d.seqf")
    assert back.same(ds)
    save_seqf(back, tmp_path / "e.seqf")
    assert (tmp_path / "d.seqf").read_bytes() == (tmp_path / "e.seqf").read_bytes()


def test_distinct_errors(tmp_path):
    blob = hand_file(tmp_path / "h.seqf")
    (tmp_path / "magic.seqf").write_bytes(b"SEQ2" + blob[4:])
    with pytest.raises(SeqfMagicError):
        load_seqf(tmp_path / "magic.seqf")
    (tmp_path / "short.seqf").write_bytes(blob[:-2])
    with pytest.raises(SeqfTruncatedError):
        load_seqf(tmp_path / "short.seqf")
    (tmp_path / "long.seqf").write_bytes(blob + b"\0")
    with pytest.raises(SeqfTruncatedError):
        load_seqf(tmp_path / "long.seqf")
    hand_file(tmp_path / "v.seqf", version=2)
    with pytest.raises(SeqfVersionError):
        load_seqf(tmp_path / "v.seqf")
    hand_file(tmp_path / "lab.seqf", labels=(1, 7))
    with pytest.raises(SeqfLabelError):
        load_seqf(tmp_path / "lab.seqf")


def test_framewise_label_length_checked():
    with pytest.raises(SeqfLabelError):
        SeqDataset([np.zeros((3, 2))], [np.zeros(2, dtype=np.int64)], 2, True)


def test_adding_bucket_examples():
    assert adding_bucket(0.2 + 0.3) == 2
    assert adding_bucket(0.0) == 0 and adding_bucket(2.0) == 9


def test_adding_markers():
    ds = gen_adding(Rng(0), 200, 20)
    for f, lab in zip(ds.frames, ds.labels):
        marked = np.flatnonzero(f[:, 1])
        assert len(marked) == 2
        assert marked[0] < 10 <= marked[1]
        assert lab[0] == adding_bucket(f[marked, 0].sum())


def test_adding_class_histogram_is_triangular():
    ds = gen_adding(Rng(1), 10_000, 4)
    counts = np.bincount(np.concatenate(ds.labels), minlength=10) / 10_000
    probs = adding_class_probs()
    assert probs.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(counts, probs, atol=0.015)


def test_copy_without_delay_is_memoryless():
    ds = gen_copy(Rng(0), 20, 0, 6)
    for f, lab in zip(ds.frames, ds.labels):
        # the label is read off the current frame
        np.testing.assert_array_equal(np.argmax(f[:, :9], axis=1), lab)


def test_copy_delay_labels():
    ds = gen_copy(Rng(0), 5, 4, 3)
    for f, lab in zip(ds.frames, ds.labels):
        sym = np.argmax(f[:, :9], axis=1)
        np.testing.assert_array_equal(lab[4:], sym[:3])
        assert np.all(lab[:4] == 8)
        np.testing.assert_array_equal(f[:, 9], [0, 0, 0, 0, 1, 1, 1])


def test_framewise_segments_at_least_three():
    ds = gen_framewise(Rng(0), 100, 40, 6)
    for lab in ds.labels:
        cuts = np.flatnonzero(np.diff(lab)) + 1
        lengths = np.diff(np.concatenate([[0], cuts, [len(lab)]]))
        assert lengths.min() >= 3


def test_framewise_bayes_accuracy():
    splits = synthetic_splits("framewise", 0, sizes=(200, 1, 1), T=50, classes=10, noise=0.1)
    ds = splits[0]
    assert nearest_template_accuracy(ds, ds.meta["templates"]) >= 0.95


def test_generators_are_seed_deterministic_and_splits_differ():
    a = synthetic_splits("adding", 5, sizes=(4, 4, 4), T=10)
    b = synthetic_splits("adding", 5, sizes=(4, 4, 4), T=10)
    assert all(x.same(y) for x, y in zip(a, b))
    assert not a[0].same(a[1])
    with pytest.raises(ValueError):
        synthetic_splits("speech", 0)


def test_generator_preconditions():
    with pytest.raises(ValueError):
        gen_adding(Rng(0), 1, 1)
    with pytest.raises(ValueError):
        gen_copy(Rng(0), 1, -1, 2)
