import numpy as np
import pytest

from spikeseq.activation import QuantConfig, RangeTracker
from spikeseq.bptt import (
    GradSet,
    IncompleteTapeError,
    InstanceTooLarge,
    LinearQuadraticLoss,
    backward,
    count_paths,
    finite_diff_check,
    lag_table_csv,
    max_rel_error,
    oracle_backprop,
    vanishing_diagnostic,
)
from spikeseq.experiments import oracle_error, random_instance, random_layer, vanish_layer
from spikeseq.gated_layer import GatedParams, gated_forward
from spikeseq.lif_layer import LifParams, lif_forward
from spikeseq.numerics import NonFiniteError, Rng
from spikeseq.tape import Tape

VARIANTS = ["lif", "gated_v1", "gated_v2"]


def forward(p, x, tape=None, smooth=False, mask=None):
    if isinstance(p, LifParams):
        return lif_forward(p, x, tape, smooth=smooth)
    return gated_forward(p, x, tape, smooth=smooth, mask=mask)


@pytest.mark.parametrize("variant", VARIANTS)
def test_zero_output_gradient_gives_zero(variant):
    rng = Rng(0)
    p, x, mask, _ = random_instance(rng, variant)
    tape = Tape(kind="")
    Y = forward(p, x, tape, mask=mask)
    grads = backward(tape, p, np.zeros_like(Y))
    assert all(not g.any() for g in grads.values())


def test_one_step_lif_by_hand():
    g = np.random.default_rng(0)
    p = LifParams(g.normal(size=(3, 2)), 0.9, 0.8, QuantConfig(3, 1), RangeTracker(b_ema=1.5))
    x = g.uniform(0, 1, size=(1, 4, 3))
    tape = Tape(kind="")
    Y = forward(p, x, tape)
    dJ = g.normal(size=Y.shape)
    surr = np.where((tape.V[0] > 0) & (tape.V[0] < 1.5), 8 / 1.5, 0.0)
    np.testing.assert_allclose(backward(tape, p, dJ)["W"], x[0].T @ (dJ[0] * surr), rtol=1e-14)


@pytest.mark.parametrize("variant", VARIANTS)
def test_backward_matches_oracle_small_sweep(variant):
    rng = Rng(1).spawn(VARIANTS.index(variant))
    for _ in range(40):
        p, x, mask, loss = random_instance(rng, variant)
        assert oracle_error(p, x, mask, loss) <= 1e-12


@pytest.mark.parametrize("variant", VARIANTS)
def test_oracle_equivalence_fixed_shape(variant):
    rng = Rng(2).spawn(VARIANTS.index(variant))
    for _ in range(100):
        p = random_layer(rng, variant, 2, 2)
        x = rng.gen.uniform(-1, 2, size=(3, 1, 2))
        mask = None if variant == "lif" else np.ones((1, 2))
        loss = LinearQuadraticLoss(rng.gen.normal(size=(3, 1, 2)))
        assert oracle_error(p, x, mask, loss) <= 1e-12


def test_single_path_graph_is_product_of_local_derivatives():
    # alpha = beta = 0 and V[0] < 0 so the reset path carries no gradient
    p = LifParams(np.array([[0.7]]), 0.0, 0.0, QuantConfig(4, 15), RangeTracker(b_ema=10.0))
    x = np.array([[[-0.5]], [[0.3]]])
    tape = Tape(kind="")
    Y = forward(p, x, tape)
    assert not Y.any()
    dJ = np.array([[[0.0]], [[2.0]]])
    expected = 2.0 * (p.quant.levels / 10.0) * 0.3
    assert oracle_backprop(tape, p, dJ)["W"][0, 0] == pytest.approx(expected, rel=1e-15)
    assert backward(tape, p, dJ)["W"][0, 0] == pytest.approx(expected, rel=1e-15)


def test_path_count_two_steps():
    p = LifParams(np.array([[1.0]]), 0.9, 0.8, QuantConfig(1, 0), RangeTracker(b_ema=1.0))
    assert count_paths(p, 2, 1, "V") == 3
    assert count_paths(p, 2, 2, "V") == 1
    with pytest.raises(ValueError):
        count_paths(p, 2, 3)


def test_oracle_size_bound():
    p = random_layer(Rng(0), "lif", 2, 2)
    x = np.ones((5, 1, 2))
    tape = Tape(kind="")
    Y = forward(p, x, tape)
    with pytest.raises(InstanceTooLarge):
        oracle_backprop(tape, p, Y)


def test_incomplete_tape():
    p = random_layer(Rng(0), "lif", 2, 2)
    with pytest.raises(IncompleteTapeError):
        backward(Tape(kind="lif"), p, np.zeros((1, 1, 2)))


def test_time_linearity():
    rng = Rng(3)
    p = random_layer(rng, "gated_v2", 3, 3)
    x = rng.gen.uniform(-1, 2, size=(6, 2, 3))
    tape = Tape(kind="")
    Y = forward(p, x, tape, mask=np.ones((2, 3)))
    d1, d2 = np.zeros_like(Y), np.zeros_like(Y)
    d1[2] = rng.gen.normal(size=Y.shape[1:])
    d2[5] = rng.gen.normal(size=Y.shape[1:])
    g1, g2, g12 = backward(tape, p, d1), backward(tape, p, d2), backward(tape, p, d1 + d2)
    for k in g12:
        np.testing.assert_allclose(g12[k], g1[k] + g2[k], rtol=1e-12, atol=1e-12)


def test_fd_linear_case():
    # smooth mode with positive drives below b is linear in W
    g = np.random.default_rng(0)
    p = LifParams(g.uniform(0.1, 1, size=(2, 2)), 0.9, 0.8, QuantConfig(6, 0), RangeTracker(b_ema=1e6))
    x = g.uniform(0.1, 1, size=(4, 1, 2))
    loss = LinearQuadraticLoss(g.normal(size=(4, 1, 2)))
    assert finite_diff_check(p, x, loss) <= 1e-10


def test_fd_gated_v2():
    rng = Rng(5)
    p = random_layer(rng, "gated_v2", 4, 4)
    x = rng.gen.uniform(-1, 2, size=(5, 1, 4))
    loss = LinearQuadraticLoss(rng.gen.normal(size=(5, 1, 4)), 0.3)
    assert finite_diff_check(p, x, loss, eps=1e-5) <= 1e-4


def test_fd_detects_corrupted_gradient():
    rng = Rng(6)
    p = random_layer(rng, "gated_v1", 3, 3)
    x = rng.gen.uniform(0, 2, size=(4, 1, 3))
    loss = LinearQuadraticLoss(rng.gen.normal(size=(4, 1, 3)))
    tape = Tape(kind="")
    Y = forward(p, x, tape, smooth=True)
    grads = backward(tape, p, loss.grad(Y))
    k = max(grads, key=lambda name: np.abs(grads[name]).max())
    idx = np.unravel_index(np.argmax(np.abs(grads[k])), grads[k].shape)
    grads[k][idx] *= 2.0
    assert finite_diff_check(p, x, loss, grads=grads) > 0.1


def test_fd_eps_range():
    p = random_layer(Rng(0), "lif", 1, 1)
    with pytest.raises(ValueError):
        finite_diff_check(p, np.ones((2, 1, 1)), LinearQuadraticLoss(np.ones((2, 1, 1))), eps=1e-2)


def test_max_rel_error_and_gradset():
    assert max_rel_error({"a": np.array([1.0, 2.0])}, {"a": np.array([1.0, 2.2])}) == pytest.approx(0.2 / 2.2)
    assert max_rel_error({"a": np.zeros(2)}, {"a": np.zeros(2)}) == 0.0
    with pytest.raises(NonFiniteError):
        GradSet(a=np.array([np.nan])).check_finite()


def test_lag_law_traditional():
    rng = Rng(0)
    p = vanish_layer(rng, "lif", 3, 4, beta=0.9)
    x = rng.gen.uniform(0, 1, size=(60, 1, 3))
    rows = vanishing_diagnostic(p, x, [1, 10, 50])
    for r in rows:
        assert r.norm == pytest.approx(r.analytic_norm, rel=1e-10)
        # state Jacobian of the synaptic path is beta^L times the identity
        assert r.state_jacobian == pytest.approx(0.9 ** r.lag, rel=1e-12)
    xn = np.linalg.norm(x[59 - 50, 0])
    assert rows[-1].norm == pytest.approx(0.9 ** 50 * xn, rel=1e-10)


@pytest.mark.parametrize("variant", ["gated_v1", "gated_v2"])
def test_pinned_gate_identity(variant):
    rng = Rng(1)
    p = vanish_layer(rng, variant, 3, 4, pin=1.0)
    x = rng.gen.uniform(0, 1, size=(60, 1, 3))
    for r in vanishing_diagnostic(p, x, [1, 10, 50]):
        assert r.state_jacobian == pytest.approx(1.0, abs=1e-12)


def test_gated_analytic_matches_without_recurrence():
    rng = Rng(2)
    p = vanish_layer(rng, "gated_v1", 3, 4)
    x = rng.gen.uniform(0, 1, size=(60, 1, 3))
    for r in vanishing_diagnostic(p, x, [1, 10, 50]):
        assert r.norm == pytest.approx(r.analytic_norm, rel=1e-10)


def test_lag_csv():
    rng = Rng(0)
    p = vanish_layer(rng, "lif", 2, 2)
    text = lag_table_csv(vanishing_diagnostic(p, rng.gen.uniform(size=(12, 1, 2)), [1, 5]))
    lines = text.splitlines()
    assert lines[0] == "lag,norm,analytic_norm,state_jacobian,full_norm"
    assert len(lines) == 3 and lines[1].startswith("1,")
    with pytest.raises(ValueError):
        vanishing_diagnostic(p, np.ones((4, 1, 2)), [4])


def test_gated_param_pin_grad_zero():
    rng = Rng(3)
    W = rng.normal(2, 2)
    p = GatedParams("v1", W, W.copy(), tracker=RangeTracker(b_ema=1.0), pin_forget=0.7)
    tape = Tape(kind="")
    Y = forward(p, rng.gen.uniform(size=(3, 1, 2)), tape)
    assert not backward(tape, p, np.ones_like(Y))["W_fi"].any()
