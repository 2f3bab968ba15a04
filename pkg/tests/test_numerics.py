import numpy as np
import pytest

from rnnquant.errors import ShapeError
from rnnquant.numerics import (
    activation,
    activation_derivative,
    as_matrix,
    matmul,
    seeded_rng,
    softmax,
)


def test_matmul_identity():
    eye = np.eye(2)
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(eye, m), m)


def test_matmul_hand_value():
    out = matmul([[1.0, 2.0]], [[3.0], [4.0]])
    assert out.shape == (1, 1)
    assert out[0, 0] == 11.0


def test_matmul_shape_error_reports_both_shapes():
    with pytest.raises(ShapeError) as err:
        matmul(np.zeros((2, 3)), np.zeros((2, 3)))
    assert "(2, 3)" in str(err.value)


def test_matmul_associative_on_random_instances():
    rng = seeded_rng(0)
    for _ in range(20):
        a = rng.normal(size=(4, 3))
        b = rng.normal(size=(3, 5))
        c = rng.normal(size=(5, 2))
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        assert np.allclose(left, right, rtol=1e-12, atol=1e-12)


def test_activation_values():
    assert activation("sigmoid", 0.0) == 0.5
    assert activation("tanh", 0.0) == 0.0
    assert np.isclose(activation("sigmoid", np.log(3.0)), 0.75)
    assert activation("linear", 7.25) == 7.25


def test_activation_saturates_without_overflow():
    for x in (-1e4, 1e4):
        y = float(activation("sigmoid", x))
        assert 0.0 <= y <= 1.0
        assert abs(float(activation("tanh", x))) <= 1.0


def test_activation_ranges():
    rng = seeded_rng(1)
    x = rng.normal(0, 10, 1000)
    assert np.all((activation("sigmoid", x) >= 0) & (activation("sigmoid", x) <= 1))
    assert np.all(np.abs(activation("tanh", x)) <= 1)


def test_derivative_values():
    assert activation_derivative("sigmoid", 0.5) == 0.25
    assert activation_derivative("tanh", 0.0) == 1.0
    assert activation_derivative("linear", 7.3) == 1.0


@pytest.mark.parametrize("kind", ["sigmoid", "tanh", "linear"])
def test_derivative_matches_central_differences(kind):
    eps = 1e-6
    xs = np.linspace(-5, 5, 101)
    numeric = (activation(kind, xs + eps) - activation(kind, xs - eps)) / (2 * eps)
    analytic = activation_derivative(kind, activation(kind, xs))
    assert np.max(np.abs(analytic - numeric)) < 1e-6


def test_seeded_rng_reproducible():
    a = seeded_rng(123).uniform(size=10_000)
    b = seeded_rng(123).uniform(size=10_000)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, seeded_rng(124).uniform(size=10_000))


def test_as_matrix_rejects_non_finite():
    from rnnquant.errors import NumericFault
    with pytest.raises(NumericFault):
        as_matrix([[1.0, np.nan]])


def test_softmax_rows_sum_to_one():
    rng = seeded_rng(2)
    p = softmax(rng.normal(0, 5, (40, 17)))
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(p >= 0)
