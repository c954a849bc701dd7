import numpy as np
import pytest

from active_opinf.active import select_active
from active_opinf.config import AppConfig
from active_opinf.evaluation import QueryDesign
from active_opinf.models import DimensionMismatchError, DomainError, RankDeficiencyError, UnderdeterminedError
from active_opinf.opinf import (
    DataLayout,
    InferredOperators,
    LeastSquaresSolver,
    assemble_data_matrix,
    infer_operators,
    intrusive_operators,
    operator_covariance,
    operator_mse_bound,
    operator_mse_exact,
)
from active_opinf.pipeline import ExperimentController
from active_opinf.reproj import reproject_clean
from active_opinf.settings import RunSettings


class TestLayout:
    def test_blocks(self):
        layout = DataLayout(n=3, p=2, ell=2)
        assert layout.block_sizes == (3, 6)
        assert layout.M == 11
        assert layout.block(2) == slice(3, 9)
        assert layout.input_block == slice(9, 11)
        assert layout.to_dict() == {"n": 3, "p": 2, "ell": 2, "M": 11}

    def test_invalid(self):
        with pytest.raises(DomainError):
            DataLayout(n=0, p=0, ell=1)
        with pytest.raises(DomainError):
            DataLayout(n=2, p=0, ell=1).block(2)


class TestDataMatrix:
    def test_rows(self):
        X = np.array([[1.0, 2.0], [3.0, -1.0]])
        U = np.array([[5.0, 6.0]])
        data = assemble_data_matrix(X, U, 2)
        np.testing.assert_allclose(data.D[0], [1.0, 3.0, 1.0, 3.0, 9.0, 5.0])
        np.testing.assert_allclose(data.D[1], [2.0, -1.0, 4.0, -2.0, 1.0, 6.0])
        assert (data.K, data.M) == (2, 6)

    def test_input_columns_must_match(self):
        with pytest.raises(DimensionMismatchError):
            assemble_data_matrix(np.ones((2, 3)), np.ones((1, 2)), 1)


class TestStacking:
    def test_round_trip(self):
        rng = np.random.default_rng(0)
        ops = InferredOperators(
            A_hat=(rng.standard_normal((3, 3)), rng.standard_normal((3, 6))),
            B_hat=rng.standard_normal((3, 2)),
        )
        O = ops.stacked()
        assert O.shape == (11, 3)
        back = InferredOperators.from_stacked(O, ops.layout)
        for a, b in zip(back.A_hat, ops.A_hat, strict=True):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(back.B_hat, ops.B_hat)

    def test_shape_check(self):
        with pytest.raises(DimensionMismatchError):
            InferredOperators(A_hat=(np.eye(2), np.ones((2, 4))))


def _recovery_error(system, V, dictionary):
    """Relative Frobenius error of noise-free inference from M + 5 active rows."""
    plan = select_active(dictionary, dictionary.M + 5)
    design = QueryDesign.from_plan(dictionary, plan)
    Z = reproject_clean(system, V, design.Xproj, design.U)
    inferred = infer_operators(assemble_data_matrix(design.Xproj, design.U, design.ell), Z)
    assert inferred.s_min == pytest.approx(plan.s_min, rel=1e-10)
    reference = intrusive_operators(system, V).stacked()
    return np.linalg.norm(inferred.stacked() - reference) / np.linalg.norm(reference)


class TestInference:
    @pytest.mark.parametrize("problem_name", ["heat_problem", "lv_problem"])
    def test_exact_recovery_without_noise(self, request, problem_name):
        problem = request.getfixturevalue(problem_name)
        assert _recovery_error(problem.system, problem.basis.V, problem.dictionary) <= 1e-8

    @pytest.mark.parametrize(
        ("benchmark", "overrides"),
        [("heat", {"grid_points": 64, "n": 5}), ("lotka-volterra", {"grid_points": 30, "n": 6})],
    )
    def test_exact_recovery_on_benchmarks(self, tmp_path, benchmark, overrides):
        config = AppConfig(threads=1, log_level="INFO", rank_tol=1e-10, divergence_factor=1e6, unstable_fraction=0.9)
        settings = RunSettings(benchmark=benchmark, out=str(tmp_path), **overrides)
        result = ExperimentController(config).build_benchmark(settings)
        assert _recovery_error(result.system, result.basis.V, result.dictionary) <= 1e-8

    def test_solver_matches_lstsq(self):
        rng = np.random.default_rng(1)
        data = assemble_data_matrix(rng.standard_normal((2, 12)), rng.standard_normal((1, 12)), 2)
        Z = rng.standard_normal((2, 12))
        expected, *_ = np.linalg.lstsq(data.D, Z.T, rcond=None)
        np.testing.assert_allclose(LeastSquaresSolver(data).solve_stacked(Z), expected, rtol=1e-10)

    def test_underdetermined(self):
        data = assemble_data_matrix(np.ones((3, 2)), None, 1)
        with pytest.raises(UnderdeterminedError):
            infer_operators(data, np.ones((3, 2)))

    def test_rank_deficient(self):
        x = np.linspace(1.0, 2.0, 8)
        data = assemble_data_matrix(np.vstack([x, 2.0 * x]), None, 1)
        with pytest.raises(RankDeficiencyError) as info:
            infer_operators(data, np.ones((2, 8)))
        assert info.value.required_rank == 2
        assert info.value.effective_rank == 1

    def test_target_shape(self):
        data = assemble_data_matrix(np.random.default_rng(2).standard_normal((2, 6)), None, 1)
        with pytest.raises(DimensionMismatchError):
            infer_operators(data, np.ones((2, 5)))


class TestMseFormulas:
    def test_bound(self):
        assert operator_mse_bound(3, 10, 0.1, 0.5) == pytest.approx(3 * 10 * 0.04)
        with pytest.raises(DomainError):
            operator_mse_bound(3, 10, 0.1, 0.0)

    def test_exact_below_bound(self):
        D = np.random.default_rng(3).standard_normal((20, 5))
        s_min = np.linalg.svd(D, compute_uv=False)[-1]
        exact = operator_mse_exact(D, 2, 0.3)
        assert exact == pytest.approx(2 * 0.09 * np.trace(np.linalg.inv(D.T @ D)), rel=1e-10)
        assert exact <= operator_mse_bound(2, 5, 0.3, s_min)

    def test_covariance_formula(self):
        D = np.random.default_rng(4).standard_normal((8, 3))
        np.testing.assert_allclose(operator_covariance(D, 0.2), 0.04 * np.linalg.inv(D.T @ D), rtol=1e-10)

    def test_empirical_covariance(self):
        """Columns of O_hat have covariance sigma^2 (D^T D)^{-1} under white noise."""
        rng = np.random.default_rng(5)
        D = rng.standard_normal((8, 3))
        data = assemble_data_matrix(D.T, None, 1)
        sigma, R = 0.5, 100_000
        samples = LeastSquaresSolver(data).solve_stacked(sigma * rng.standard_normal((R, 8)))
        empirical = np.cov(samples)
        expected = operator_covariance(D, sigma)
        diagonal = np.diag(expected)
        standard_error = np.sqrt((np.outer(diagonal, diagonal) + expected**2) / R)
        assert np.all(np.abs(empirical - expected) <= 5.0 * standard_error)
