import numpy as np
import pytest

from spikeseq.network import SPIKING, VARIANTS, ModelSpec, Network, dropout_mask
from spikeseq.numerics import Rng, glorot_uniform, orthogonal


def small_spec(variant, **kw):
    base = dict(variant=variant, input_dim=3, classes=4, layers=2, units=5, n_bits=4, k_threshold=1)
    base.update(kw)
    return ModelSpec(**base)


def numeric_grads(net, x, y, names, eps=1e-6, picks=4, seed=0):
    gen = np.random.default_rng(seed)
    params = net.params()
    out = {}
    for k in names:
        p = params[k]
        for flat in gen.choice(p.size, size=min(picks, p.size), replace=False):
            idx = np.unravel_index(flat, p.shape)
            old = p[idx]
            p[idx] = old + eps
            lp, _ = net.loss_and_grads(x, y)
            p[idx] = old - eps
            lm, _ = net.loss_and_grads(x, y)
            p[idx] = old
            out[(k, idx)] = (lp - lm) / (2 * eps)
    return out


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("label_mode", ["sequence", "frame"])
def test_network_gradient_matches_finite_differences(variant, label_mode):
    spec = small_spec(variant, smooth=True, label_mode=label_mode)
    net = Network(spec, seed=1)
    gen = np.random.default_rng(2)
    x = gen.uniform(0, 1, size=(6, 4, 3))
    y = gen.integers(0, 4, size=(6, 4) if label_mode == "frame" else 4)
    net.loss_and_grads(x, y)  # calibrates ranges
    net.freeze()
    _, grads = net.loss_and_grads(x, y)
    num = numeric_grads(net, x, y, sorted(grads))
    for (k, idx), value in num.items():
        assert grads[k][idx] == pytest.approx(value, rel=1e-4, abs=1e-7), k


def test_forward_shapes_and_stats():
    net = Network(small_spec("gated_v2"), seed=0)
    x = np.random.default_rng(0).uniform(size=(7, 3, 3))
    logits = net.forward(x, train=True)
    assert logits.shape == (3, 4)
    assert net.stats.total_outputs == 2 * 7 * 3 * 5
    assert 0.0 <= net.stats.zero_fraction <= 1.0
    frame = Network(small_spec("lif", label_mode="frame"), seed=0)
    assert frame.forward(x, train=True).shape == (7, 3, 4)


@pytest.mark.parametrize("variant", SPIKING)
def test_spiking_layers_emit_integer_codes(variant):
    net = Network(small_spec(variant), seed=0)
    net.forward(np.random.default_rng(0).uniform(size=(9, 2, 3)) * 3, train=True)
    Y = net.layers[0].tape.Y
    np.testing.assert_array_equal(Y, np.round(Y))
    assert Y.min() >= 0 and Y.max() <= 16


def test_eval_before_calibration_fails():
    net = Network(small_spec("lif"), seed=0)
    with pytest.raises(RuntimeError):
        net.forward(np.ones((2, 2, 3)), train=False)


def test_same_seed_same_weights():
    a, b = Network(small_spec("gru"), seed=3), Network(small_spec("gru"), seed=3)
    for k, v in a.params().items():
        np.testing.assert_array_equal(v, b.params()[k])


def test_glorot_variance():
    W = glorot_uniform(Rng(0), 300, 200)
    assert W.var() == pytest.approx(2 / 500, rel=0.1)


def test_orthogonal():
    Q = orthogonal(Rng(0), 40)
    np.testing.assert_allclose(Q.T @ Q, np.eye(40), atol=1e-8)


def test_dropout_mask_properties():
    m = dropout_mask(Rng(0), (1000, 100), 0.1)
    assert m.mean() == pytest.approx(1.0, abs=0.01)
    assert set(np.unique(m)) <= {0.0, 1 / 0.9}
    np.testing.assert_array_equal(dropout_mask(Rng(0), (3, 3), 0.0), np.ones((3, 3)))
    with pytest.raises(ValueError):
        dropout_mask(Rng(0), (2, 2), 1.0)


def test_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec(variant="rnn")
    with pytest.raises(ValueError):
        ModelSpec(label_mode="token")
    with pytest.raises(ValueError):
        ModelSpec(units=0)
    with pytest.raises(ValueError):
        ModelSpec(n_bits=0)
