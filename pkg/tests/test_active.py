import numpy as np
import pytest

from active_opinf.active import (
    Dictionary,
    SelectionPlan,
    build_dictionary,
    equidistant_selection,
    greedy_oversample,
    lower_bound_gain,
    make_plan,
    plan_history,
    qdeim_init,
    rows_to_reach,
    s_min,
    select_active,
    selection_curve,
)
from active_opinf.config import AppConfig
from active_opinf.models import DomainError, ProvenanceTable, RankDeficiencyError, UnderdeterminedError
from active_opinf.opinf import DataLayout
from active_opinf.pipeline import BENCHMARK_DEFAULTS, ExperimentController
from active_opinf.settings import RunSettings


def _random_dictionary(seed: int, L: int, M: int) -> Dictionary:
    rows = np.random.default_rng(seed).standard_normal((L, M))
    provenance = ProvenanceTable()
    provenance.extend(0, L)
    return Dictionary(rows=rows, layout=DataLayout(n=M, p=0, ell=1), provenance=provenance)


def _oracle_next_row(rows, indices):
    """Exhaustive argmax of (d_i . psi)^2 over unselected rows."""
    _, _, Wt = np.linalg.svd(rows[indices])
    psi = Wt[-1]
    best, best_value = None, -1.0
    for i in range(rows.shape[0]):
        if i in indices:
            continue
        value = float(rows[i] @ psi) ** 2
        if value > best_value:
            best, best_value = i, value
    return best


class TestLowerBoundGain:
    def test_matches_closed_form(self):
        g, d = 0.7, np.array([0.3, -1.2, 0.9])
        total = g + d @ d
        expected = (total - np.sqrt(total**2 - 4 * g * d[-1] ** 2)) / 2
        assert lower_bound_gain(g, d) == pytest.approx(expected, rel=1e-12)

    def test_never_exceeds_true_gain(self):
        rng = np.random.default_rng(0)
        rows = rng.standard_normal((6, 4))
        _, s, Wt = np.linalg.svd(rows)
        candidate = rng.standard_normal(4)
        bound = lower_bound_gain(s[-2] ** 2 - s[-1] ** 2, Wt @ candidate)
        grown = np.linalg.svd(np.vstack([rows, candidate]), compute_uv=False)[-1]
        assert s[-1] ** 2 + bound <= grown**2 + 1e-12

    def test_zero_cases(self):
        assert lower_bound_gain(0.0, np.array([1.0, 2.0])) == 0.0
        assert lower_bound_gain(1.0, np.array([1.0, 0.0])) == 0.0

    def test_negative_gap(self):
        with pytest.raises(DomainError):
            lower_bound_gain(-1.0, np.ones(2))


class TestQdeim:
    def test_selects_m_distinct_rows(self):
        dictionary = _random_dictionary(0, 40, 5)
        plan = qdeim_init(dictionary)
        assert plan.K == 5
        assert len(set(plan.indices)) == 5
        assert plan.s_min == pytest.approx(s_min(dictionary.rows[plan.indices]))

    def test_rank_deficient_dictionary(self):
        dictionary = _random_dictionary(1, 30, 4)
        rows = dictionary.rows.copy()
        rows[:, 3] = rows[:, 0] + rows[:, 1]
        broken = Dictionary(rows=rows, layout=dictionary.layout, provenance=dictionary.provenance)
        with pytest.raises(RankDeficiencyError):
            qdeim_init(broken)

    def test_too_few_rows(self):
        with pytest.raises(UnderdeterminedError):
            qdeim_init(_random_dictionary(2, 3, 4))


class TestGreedy:
    @pytest.mark.parametrize("seed", range(25))
    def test_matches_exhaustive_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        L, M = int(rng.integers(30, 200)), int(rng.integers(2, 9))
        dictionary = _random_dictionary(seed, L, M)
        K = min(L, M + 15)
        plan = select_active(dictionary, K)
        indices = plan.indices[:M]
        for appended in plan.indices[M:]:
            assert appended == _oracle_next_row(dictionary.rows, indices)
            indices.append(appended)
        history = np.asarray(plan.s_min_history)
        assert len(history) == K - M + 1
        assert np.all(np.diff(history) >= -1e-12 * history.max())
        assert len(plan.gain_bounds) == K - M

    def test_history_matches_prefix_svd(self):
        dictionary = _random_dictionary(3, 80, 4)
        plan = select_active(dictionary, 12)
        np.testing.assert_allclose(plan.s_min_history, plan_history(dictionary, plan.indices), rtol=1e-12)

    def test_k_equal_m_is_qdeim(self):
        dictionary = _random_dictionary(4, 50, 6)
        assert select_active(dictionary, 6).indices == qdeim_init(dictionary).indices

    def test_gain_bound_holds(self):
        dictionary = _random_dictionary(5, 120, 5)
        plan = select_active(dictionary, 15)
        history = np.asarray(plan.s_min_history)
        assert np.all(history[:-1] ** 2 + np.asarray(plan.gain_bounds) <= history[1:] ** 2 + 1e-10)

    def test_oversample_checks(self):
        dictionary = _random_dictionary(6, 20, 4)
        with pytest.raises(UnderdeterminedError):
            greedy_oversample(dictionary, SelectionPlan(indices=[0, 1]), 6)
        with pytest.raises(DomainError):
            greedy_oversample(dictionary, qdeim_init(dictionary), 21)

    def test_k_below_m(self):
        with pytest.raises(UnderdeterminedError):
            select_active(_random_dictionary(7, 20, 4), 3)

    def test_duplicate_indices_rejected(self):
        with pytest.raises(DomainError):
            SelectionPlan(indices=[1, 1])


class TestEquidistant:
    @pytest.mark.parametrize(
        ("L", "K", "expected"),
        [(10, 4, [0, 3, 6, 9]), (10, 3, [0, 5, 9]), (5, 5, [0, 1, 2, 3, 4]), (7, 1, [0])],
    )
    def test_indices(self, L, K, expected):
        assert equidistant_selection(L, K).indices == expected

    def test_offset(self):
        assert equidistant_selection(11, 3, offset=1).indices == [1, 6, 10]

    def test_too_many(self):
        with pytest.raises(DomainError):
            equidistant_selection(4, 5)

    def test_make_plan_records_history(self):
        dictionary = _random_dictionary(8, 60, 4)
        plan = make_plan(dictionary, 10, "equidistant")
        assert plan.method == "equidistant"
        assert plan.s_min == pytest.approx(s_min(dictionary.rows[plan.indices]))

    def test_unknown_method(self):
        with pytest.raises(DomainError):
            make_plan(_random_dictionary(9, 20, 3), 5, "random")


class TestCurves:
    def test_active_curve_uses_nested_prefixes(self):
        dictionary = _random_dictionary(10, 100, 5)
        points = selection_curve(dictionary, [5, 8, 12], "active")
        plan = select_active(dictionary, 12)
        assert [p.K for p in points] == [5, 8, 12]
        np.testing.assert_allclose(
            [p.s_min for p in points], [plan.s_min_history[K - 5] for K in (5, 8, 12)], rtol=1e-12
        )

    def test_curve_below_m(self):
        with pytest.raises(UnderdeterminedError):
            selection_curve(_random_dictionary(11, 30, 5), [4, 6], "equidistant")

    def test_rows_to_reach(self):
        dictionary = _random_dictionary(12, 150, 4)
        target = select_active(dictionary, 20).s_min
        assert rows_to_reach(dictionary, target, "active") <= 20
        assert rows_to_reach(dictionary, 1e9, "equidistant", K_max=30) is None


def test_build_dictionary_default_provenance():
    X = np.random.default_rng(13).standard_normal((2, 9))
    dictionary = build_dictionary(X, None, 2)
    assert (dictionary.L, dictionary.M) == (9, 5)
    assert dictionary.provenance.time_index == list(range(9))
    np.testing.assert_allclose(dictionary.states(), X)
    assert dictionary.inputs() is None


@pytest.mark.slow
@pytest.mark.parametrize("benchmark", ["heat", "lotka-volterra"])
def test_active_needs_fewer_rows_than_equidistant(tmp_path, benchmark):
    """Default benchmark dictionaries: equidistant needs at least 1.5x the rows for the same s_min."""
    config = AppConfig(threads=2, log_level="INFO", rank_tol=1e-10, divergence_factor=1e6, unstable_fraction=0.9)
    result = ExperimentController(config).build_benchmark(RunSettings(benchmark=benchmark, out=str(tmp_path)))
    dictionary = result.dictionary
    K = BENCHMARK_DEFAULTS[benchmark]["K"]
    active = make_plan(dictionary, K, "active")
    equidistant = make_plan(dictionary, K, "equidistant")
    assert active.s_min > equidistant.s_min
    needed = rows_to_reach(dictionary, active.s_min, "equidistant", K_max=10 * K)
    assert needed is None or needed >= 1.5 * K
