import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedcos.numkit import DimensionError, SeedPath, finite_diff_gradient
from fedcos.objectives import (
    Batch,
    MlpObjective,
    QuadraticObjective,
    SoftmaxRegression,
    SumObjective,
    quadratic_optimum,
    three_client_quadratics,
    two_client_quadratics,
)


def polynomial_f1(x):
    # written out by hand, independent of the matrix form
    return 0.5 * (x[0] - 6) ** 2 + 0.75 * (x[0] - 6) * x[1] + 0.5 * x[1] ** 2


def polynomial_f2(x):
    return 0.5 * (x[0] - 3) ** 2 - 0.5 * (x[0] - 3) * x[1] + 0.5 * x[1] ** 2


def test_toy_quadratics_match_polynomials():
    f1, f2 = two_client_quadratics()
    x = np.array([5.1, -3.1])
    assert f1.loss(x) == pytest.approx(7.3025, abs=1e-12)
    np.testing.assert_allclose(f1.grad(x), [-3.225, -3.775], atol=1e-12)
    for pt in ([0.0, 0.0], [5.1, -3.1], [4.5, 0.7], [-2.0, 9.0]):
        assert f1.loss(pt) == pytest.approx(polynomial_f1(pt), abs=1e-12)
        assert f2.loss(pt) == pytest.approx(polynomial_f2(pt), abs=1e-12)


def test_one_gradient_step_on_f1():
    f1, _ = two_client_quadratics()
    x = np.array([5.1, -3.1])
    np.testing.assert_allclose(x - 0.1 * f1.grad(x), [5.4225, -2.7225], atol=1e-12)


def test_two_client_optimum():
    np.testing.assert_allclose(quadratic_optimum(two_client_quadratics()),
                               [4.380952380952381, 0.9523809523809523], atol=1e-9)
    # stationarity: summed gradient vanishes
    parts = three_client_quadratics()
    opt = quadratic_optimum(parts)
    np.testing.assert_allclose(SumObjective(parts).grad(opt), 0.0, atol=1e-12)
    np.testing.assert_allclose(opt, [4.448275862068965, 1.0603448275862069], atol=1e-9)


def test_quadratic_validation():
    with pytest.raises(ValueError):
        QuadraticObjective([[1.0, 2.0], [0.0, 1.0]], [0, 0])
    with pytest.raises(ValueError):
        QuadraticObjective([[-1.0, 0.0], [0.0, 1.0]], [0, 0])
    with pytest.raises(DimensionError):
        QuadraticObjective(np.eye(3), [0, 0])
    q = QuadraticObjective(np.eye(2), [1, 1])
    with pytest.raises(DimensionError):
        q.loss([1, 2, 3])
    assert not q.is_statistical
    np.testing.assert_array_equal(q.init_params(), [0.0, 0.0])


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 2, elements=st.floats(-10, 10)))
def test_quadratic_grad_matches_fd(x):
    for q in three_client_quadratics():
        np.testing.assert_allclose(q.grad(x), finite_diff_gradient(q.loss, x, 1e-5),
                                   atol=1e-6, rtol=1e-6)


def _batch(rng, n, d, m):
    return Batch(rng.standard_normal((n, d)), rng.integers(0, m, n))


def test_softmax_grad_matches_fd(rng):
    obj = SoftmaxRegression(4, 3)
    batch = _batch(rng, 7, 4, 3)
    x = obj.init_params(SeedPath(1))
    fd = finite_diff_gradient(lambda v: obj.loss(v, batch), x)
    np.testing.assert_allclose(obj.grad(x, batch), fd, atol=1e-7)


def test_softmax_known_value():
    obj = SoftmaxRegression(2, 3)
    batch = Batch(np.array([[1.0, 2.0]]), np.array([1]))
    # zero weights: uniform prediction, loss log(3)
    assert obj.loss(np.zeros(obj.n_params), batch) == pytest.approx(np.log(3.0), abs=1e-14)
    g = obj.grad(np.zeros(obj.n_params), batch)
    # bias gradient is p - onehot
    np.testing.assert_allclose(g[-3:], [1 / 3, -2 / 3, 1 / 3], atol=1e-14)


def test_softmax_large_logits_stable():
    obj = SoftmaxRegression(1, 2)
    batch = Batch(np.array([[1.0]]), np.array([0]))
    loss = obj.loss(np.array([1000.0, -1000.0, 0.0, 0.0]), batch)
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_mlp_grad_matches_fd(rng):
    obj = MlpObjective(5, 6, 3)
    batch = _batch(rng, 9, 5, 3)
    x = obj.init_params(SeedPath(2))
    fd = finite_diff_gradient(lambda v: obj.loss(v, batch), x)
    np.testing.assert_allclose(obj.grad(x, batch), fd, atol=1e-6)
    assert obj.predict(x, batch.features).shape == (9,)


def test_init_deterministic_and_bounded():
    obj = MlpObjective(16, 8, 4)
    a = obj.init_params(SeedPath(3))
    assert np.array_equal(a, obj.init_params(SeedPath(3)))
    assert not np.array_equal(a, obj.init_params(SeedPath(4)))
    W1 = obj.unpack(a)[0]
    assert np.abs(W1).max() <= 1 / np.sqrt(16)


def test_batch_validation():
    with pytest.raises(ValueError):
        Batch(np.zeros((2, 1)), np.zeros(3, dtype=int))
    with pytest.raises(ValueError):
        Batch(np.zeros((0, 1)), np.zeros(0, dtype=int))
