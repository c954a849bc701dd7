import numpy as np
import pytest

from active_opinf.models import DimensionMismatchError, InstabilityError, UnsupportedError
from active_opinf.opinf import InferredOperators
from active_opinf.rom import ReducedModel, simulate_reduced, simulate_resampled
from active_opinf.tensorpoly import compressed_power


@pytest.fixture
def linear_operators():
    rng = np.random.default_rng(0)
    A = 0.5 * rng.standard_normal((3, 3)) / np.sqrt(3)
    return InferredOperators(A_hat=(A,), B_hat=rng.standard_normal((3, 2)))


def test_linear_recurrence(linear_operators):
    A, B = linear_operators.A_hat[0], linear_operators.B_hat
    inputs = np.random.default_rng(1).standard_normal((2, 6))
    x = np.array([1.0, -1.0, 0.5])
    trajectory = simulate_reduced(ReducedModel.from_operators(linear_operators), x, inputs, 6)
    for k in range(6):
        x = A @ x + B @ inputs[:, k]
        np.testing.assert_allclose(trajectory.states[:, k + 1], x, rtol=1e-14)


def test_quadratic_rhs():
    rng = np.random.default_rng(2)
    ops = InferredOperators(A_hat=(rng.standard_normal((2, 2)), rng.standard_normal((2, 3))))
    model = ReducedModel.from_operators(ops)
    x = np.array([0.3, -0.7])
    np.testing.assert_allclose(
        model.rhs(x, None), ops.A_hat[0] @ x + ops.A_hat[1] @ compressed_power(x, 2)
    )
    assert (model.n, model.p, model.ell) == (2, 0, 2)


def test_divergence_is_reported_with_step():
    model = ReducedModel.from_operators(InferredOperators(A_hat=(10.0 * np.eye(2),)))
    with pytest.raises(InstabilityError) as info:
        simulate_reduced(model, np.ones(2), None, 10, divergence_limit=1e3)
    assert info.value.step == 3


def test_overflow_is_reported():
    model = ReducedModel.from_operators(InferredOperators(A_hat=(1e200 * np.eye(2),)))
    with pytest.raises(InstabilityError) as info:
        simulate_reduced(model, np.ones(2), None, 5)
    assert info.value.step == 2


def test_missing_inputs(linear_operators):
    with pytest.raises(DimensionMismatchError):
        simulate_reduced(ReducedModel.from_operators(linear_operators), np.ones(3), None, 2)


def test_resampled_with_equal_samples_matches_fixed_model(linear_operators):
    inputs = np.random.default_rng(3).standard_normal((2, 4))
    x0 = np.array([0.2, 0.1, -0.4])
    fixed = simulate_reduced(ReducedModel.from_operators(linear_operators), x0, inputs, 4)
    resampled = simulate_resampled([linear_operators] * 4, linear_operators.B_hat, x0, inputs)
    np.testing.assert_allclose(resampled.states, fixed.states, rtol=1e-14)


def test_resampled_uses_one_operator_per_step():
    samples = [np.diag([2.0, 1.0]), np.diag([1.0, 3.0])]
    trajectory = simulate_resampled(samples, None, np.ones(2), None)
    np.testing.assert_allclose(trajectory.states[:, -1], [2.0, 3.0])


def test_resampled_rejects_nonlinear():
    ops = InferredOperators(A_hat=(np.eye(2), np.zeros((2, 3))))
    with pytest.raises(UnsupportedError):
        simulate_resampled([ops], None, np.ones(2), None)
    with pytest.raises(UnsupportedError):
        simulate_resampled([np.ones((2, 3))], None, np.ones(2), None)
