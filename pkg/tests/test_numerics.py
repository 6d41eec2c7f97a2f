import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spikeseq.numerics import (
    DimensionError,
    NonFiniteError,
    Rng,
    as_matrix,
    ewise,
    glorot_uniform,
    matmul,
    orthogonal,
    rng_uniform,
)


def test_matmul_identity():
    np.testing.assert_array_equal(matmul([[1, 0], [0, 1]], [[3, 4], [5, 6]]), [[3, 4], [5, 6]])


def test_matmul_zero():
    np.testing.assert_array_equal(matmul([[1, 2]], [[0], [0]]), [[0]])


def test_matmul_by_hand():
    np.testing.assert_array_equal(matmul([[1, 2], [3, 4]], [[5], [6]]), [[17], [39]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(1, 2\).*\(3, 1\)"):
        matmul([[1, 2]], [[1], [2], [3]])


def test_matmul_rejects_nan():
    with pytest.raises(NonFiniteError):
        matmul([[np.nan]], [[1.0]])


def test_matmul_matches_scalar_loop():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
    ref = np.zeros((4, 3))
    for i in range(4):
        for j in range(3):
            s = 0.0
            for k in range(5):
                s += a[i, k] * b[k, j]
            ref[i, j] = s
    # same left-to-right order, so equality is exact
    np.testing.assert_array_equal(matmul(a, b), ref)


@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 10**6))
def test_matmul_associative(p, q, r, s, seed):
    g = np.random.default_rng(seed)
    a, b, c = g.normal(size=(p, q)), g.normal(size=(q, r)), g.normal(size=(r, s))
    left = matmul(matmul(a, b), c)
    right = matmul(a, matmul(b, c))
    scale = np.abs(a).max() * np.abs(b).max() * np.abs(c).max() * q * r
    assert np.max(np.abs(left - right)) <= 1e-9 * scale


def test_ewise_examples():
    np.testing.assert_array_equal(ewise([[1]], [[2]], "add"), [[3]])
    x = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(ewise(x, np.zeros((2, 3)), "mul"), np.zeros((2, 3)))
    np.testing.assert_array_equal(ewise([[5, 1]], [[2, 2]], "sub"), [[3, -1]])


def test_ewise_errors():
    with pytest.raises(DimensionError):
        ewise([[1, 2]], [[1]], "add")
    with pytest.raises(ValueError, match="unknown"):
        ewise([[1]], [[1]], "div")


def test_as_matrix_promotes_and_validates():
    assert as_matrix(3.0).shape == (1, 1)
    assert as_matrix([1, 2, 3]).shape == (1, 3)
    with pytest.raises(DimensionError):
        as_matrix(np.zeros((2, 2, 2)))
    with pytest.raises(NonFiniteError):
        as_matrix([[np.inf]])


def test_rng_uniform_deterministic():
    a = rng_uniform(Rng(1), 2, 2, 0.0, 1.0)
    b = rng_uniform(Rng(1), 2, 2, 0.0, 1.0)
    assert a.tobytes() == b.tobytes()


def test_rng_uniform_empty_interval():
    with pytest.raises(ValueError):
        rng_uniform(Rng(1), 2, 2, 0.5, 0.5)


def test_rng_uniform_mean():
    x = rng_uniform(Rng(7), 1, 100_000, 0.0, 1.0)
    assert abs(x.mean() - 0.5) < 0.01


def test_rng_streams_differ_and_state_roundtrip():
    r = Rng(5)
    assert not np.array_equal(r.spawn(0).random(8), r.spawn(1).random(8))
    state = r.get_state()
    first = r.random(5)
    r2 = Rng(0)
    r2.set_state(state)
    np.testing.assert_array_equal(r2.random(5), first)


def test_glorot_variance():
    W = glorot_uniform(Rng(2), 300, 200)
    target = 2.0 / 500
    assert abs(W.var() / target - 1.0) < 0.1


def test_orthogonal():
    Q = orthogonal(Rng(4), 40)
    np.testing.assert_allclose(Q.T @ Q, np.eye(40), atol=1e-8)
