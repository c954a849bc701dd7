import numpy as np
import pytest

from active_opinf.basis import compute_pod, project
from active_opinf.models import DimensionMismatchError, DomainError, RankDeficiencyError


@pytest.fixture
def snapshots():
    rng = np.random.default_rng(0)
    return rng.standard_normal((20, 30)) * np.logspace(0, -3, 30)


def test_orthonormal_and_sorted(snapshots):
    basis = compute_pod(snapshots, 5)
    np.testing.assert_allclose(basis.V.T @ basis.V, np.eye(5), atol=1e-12)
    assert np.all(np.diff(basis.singular_values) <= 0)
    assert basis.n == 5
    assert basis.state_dim == 20


def test_sign_convention(snapshots):
    V = compute_pod(snapshots, 4).V
    largest = V[np.argmax(np.abs(V), axis=0), np.arange(4)]
    assert np.all(largest > 0)


def test_projection_error_is_discarded_energy(snapshots):
    basis = compute_pod(snapshots, 6)
    s = np.linalg.svd(snapshots, compute_uv=False)
    assert basis.projection_error(snapshots) == pytest.approx(np.sum(s[6:] ** 2), rel=1e-10)


def test_lift_inverts_project_on_the_span(snapshots):
    basis = compute_pod(snapshots, 3)
    z = np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(basis.project(basis.lift(z)), z, atol=1e-12)


@pytest.mark.parametrize("n", [0, 21])
def test_size_out_of_range(snapshots, n):
    with pytest.raises(DomainError):
        compute_pod(snapshots, n)


def test_rank_deficient_snapshots():
    rng = np.random.default_rng(1)
    low_rank = rng.standard_normal((10, 2)) @ rng.standard_normal((2, 15))
    with pytest.raises(RankDeficiencyError) as info:
        compute_pod(low_rank, 3)
    assert info.value.effective_rank == 2
    assert info.value.required_rank == 3


def test_project_checks_rows():
    with pytest.raises(DimensionMismatchError):
        project(np.eye(4)[:, :2], np.ones((3, 2)))
