import numpy as np
import pytest

from active_opinf.dynsys import (
    HeatConstants,
    LotkaVolterraConstants,
    NoiseModel,
    PolynomialSystem,
    equilibrium_lv,
    heat_basis_inputs,
    heat_segments,
    heat_test_inputs,
    lv_basis_initial_conditions,
    lv_equilibrium_state,
    lv_test_initial_condition,
    make_heat_benchmark,
    make_lotka_volterra_benchmark,
    make_noise_stream,
    neumann_laplacian,
    simulate,
    simulate_batch,
    step,
    step_noisy,
)
from active_opinf.models import DimensionMismatchError, DomainError


class TestPolynomialSystem:
    def test_rejects_wrong_quadratic_shape(self):
        with pytest.raises(DimensionMismatchError):
            PolynomialSystem(ops=(np.eye(3), np.zeros((3, 9))), input_map=np.zeros((3, 0)))

    def test_rejects_wrong_input_rows(self):
        with pytest.raises(DimensionMismatchError):
            PolynomialSystem(ops=(np.eye(3),), input_map=np.zeros((2, 1)))

    def test_properties(self, lv_problem):
        sys = lv_problem.system
        assert (sys.state_dim, sys.input_dim, sys.order, sys.autonomous) == (30, 0, 2, True)

    def test_step_on_columns_matches_vectors(self, lv_problem):
        X = np.random.default_rng(0).uniform(0.0, 1.0, (30, 4))
        batch = step(lv_problem.system, X)
        for k in range(4):
            np.testing.assert_allclose(batch[:, k], step(lv_problem.system, X[:, k]), rtol=1e-14)

    def test_step_requires_inputs(self, heat_problem):
        with pytest.raises(DimensionMismatchError):
            step(heat_problem.system, np.ones(16))


class TestNoise:
    def test_negative_sigma(self):
        with pytest.raises(DomainError):
            NoiseModel(sigma=-1.0)

    def test_streams_are_reproducible_and_independent(self):
        first = NoiseModel(1.0, seed=3).stream(1, 5).draw(10)
        again = NoiseModel(1.0, seed=3).stream(1, 5).draw(10)
        other = NoiseModel(1.0, seed=3).stream(1, 6).draw(10)
        np.testing.assert_array_equal(first, again)
        assert not np.allclose(first, other)

    def test_sigma_scales_common_draws(self):
        small = NoiseModel(1e-3, seed=0).stream(2).draw(6)
        large = NoiseModel(1e-1, seed=0).stream(2).draw(6)
        np.testing.assert_allclose(large, 100.0 * small, rtol=1e-13)

    def test_zero_sigma_still_advances(self):
        stream = NoiseModel(0.0, seed=0).stream(0)
        assert np.all(stream.draw(4) == 0.0)
        reference = make_noise_stream(0, 0)
        reference.standard_normal(4)
        np.testing.assert_array_equal(stream.rng.standard_normal(3), reference.standard_normal(3))

    def test_step_noisy_adds_draw(self, lv_problem):
        x = lv_equilibrium_state(10)
        noisy = step_noisy(lv_problem.system, x, None, NoiseModel(0.5, seed=1).stream(9))
        expected = step(lv_problem.system, x) + NoiseModel(0.5, seed=1).stream(9).draw(30)
        np.testing.assert_allclose(noisy, expected, rtol=1e-14)


class TestSimulate:
    def test_shapes_and_start(self, heat_problem):
        inputs = heat_test_inputs(3, 5, 0.01)
        trajectory = simulate(heat_problem.system, heat_problem.test_x0, inputs, 5)
        assert trajectory.states.shape == (16, 6)
        assert trajectory.inputs.shape == (3, 5)
        np.testing.assert_array_equal(trajectory.states[:, 0], heat_problem.test_x0)

    def test_zero_steps(self, lv_problem):
        trajectory = simulate(lv_problem.system, lv_problem.test_x0, None, 0)
        assert trajectory.steps == 0

    def test_negative_steps(self, lv_problem):
        with pytest.raises(DomainError):
            simulate(lv_problem.system, lv_problem.test_x0, None, -1)

    def test_short_inputs(self, heat_problem):
        with pytest.raises(DimensionMismatchError):
            simulate(heat_problem.system, heat_problem.test_x0, np.ones((3, 2)), 5)

    def test_batch(self, lv_problem):
        initial = [lv_problem.test_x0, lv_equilibrium_state(10)]
        trajectories = simulate_batch(lv_problem.system, initial, [None, None], 3)
        assert len(trajectories) == 2
        np.testing.assert_allclose(
            trajectories[0].states, simulate(lv_problem.system, initial[0], None, 3).states
        )


class TestHeat:
    def test_uniform_state_with_matching_inputs_is_fixed(self):
        sys = make_heat_benchmark(12, 0.01)
        x = np.full(12, 500.0)
        np.testing.assert_allclose(step(sys, x, np.full(7, 500.0)), x, rtol=1e-12)

    def test_cools_without_inputs(self):
        sys = make_heat_benchmark(12, 0.5, HeatConstants(heat_capacity=1.0, density=1.0))
        x = np.full(12, 500.0)
        assert np.all(step(sys, x, np.zeros(7)) < x)

    def test_laplacian_is_symmetric_with_zero_row_sums(self):
        laplacian = neumann_laplacian(8, 0.1)
        np.testing.assert_allclose(laplacian, laplacian.T)
        np.testing.assert_allclose(laplacian.sum(axis=1), 0.0, atol=1e-9)

    def test_segments_partition_cells(self):
        E = heat_segments(64, 7)
        np.testing.assert_array_equal(E.sum(axis=1), 1.0)
        assert np.all(E.sum(axis=0) > 0)

    def test_inputs(self):
        test = heat_test_inputs(7, 4, 0.01)
        np.testing.assert_allclose(test[:, 0], 500.0)
        np.testing.assert_allclose(test[2, 3], 500.0 * (1.0 - np.tanh(0.03 / 9.0)))
        basis = heat_basis_inputs(7, 4, 0.01, np.random.default_rng(0))
        np.testing.assert_allclose(basis[:, 0], test[:, 0])
        assert np.all((basis >= test) & (basis <= test + 250.0))

    @pytest.mark.parametrize(("grid_points", "dt"), [(2, 0.01), (8, 0.0)])
    def test_invalid_arguments(self, grid_points, dt):
        with pytest.raises(DomainError):
            make_heat_benchmark(grid_points, dt)


class TestLotkaVolterra:
    def test_equilibrium_values(self):
        x1, x2, x3 = equilibrium_lv()
        assert x3 == pytest.approx(0.95)
        assert x2 == pytest.approx((1.01 * 0.2 - 0.1 * 0.19) / (0.93 * 0.2))
        assert x1 == pytest.approx(0.2 - 0.05 * x2)

    def test_equilibrium_is_fixed_point(self):
        sys = make_lotka_volterra_benchmark(12, 0.01)
        x = lv_equilibrium_state(12)
        np.testing.assert_allclose(step(sys, x), x, rtol=1e-12)

    def test_zero_denominator(self):
        with pytest.raises(DomainError):
            equilibrium_lv(LotkaVolterraConstants(a5=0.0))

    def test_quadratic_operator_is_sparse(self):
        sys = make_lotka_volterra_benchmark(20, 0.01)
        assert sys.state_dim == 60
        assert sys.ops[1].shape == (60, 1830)
        assert sys.ops[1].nnz < 60 * 1830 // 10

    def test_initial_conditions(self):
        test = lv_test_initial_condition(10)
        assert test.shape == (30,)
        first = lv_basis_initial_conditions(10, None, np.random.default_rng(2), count=6)
        again = lv_basis_initial_conditions(10, None, np.random.default_rng(2), count=6)
        assert len(first) == 6
        for a, b in zip(first, again, strict=True):
            np.testing.assert_array_equal(a, b)
