"""Shared fixtures: small heat and Lotka-Volterra problems with bases and dictionaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from active_opinf.active import Dictionary, build_dictionary
from active_opinf.basis import PodBasis, compute_pod
from active_opinf.dynsys import (
    HeatConstants,
    PolynomialSystem,
    heat_basis_inputs,
    heat_initial_state,
    heat_test_inputs,
    lv_basis_initial_conditions,
    lv_test_initial_condition,
    make_heat_benchmark,
    make_lotka_volterra_benchmark,
    simulate,
    simulate_batch,
)
from active_opinf.models import Array, ProvenanceTable

# faster exchange and diffusion than the physical rod so short runs stay well conditioned
FAST_HEAT = HeatConstants(
    conductivity=0.05,
    heat_capacity=1.0,
    density=1.0,
    transfer=0.02,
    thickness=0.01,
    inputs=3,
)


@dataclass
class Problem:
    """A truth system with its basis, dictionary and test data."""

    system: PolynomialSystem
    basis: PodBasis
    dictionary: Dictionary
    test_x0: Array
    test_inputs: Array | None


def random_orthonormal(rows: int, cols: int, seed: int = 0) -> Array:
    """Orthonormal columns from the QR factor of a Gaussian matrix."""
    Q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((rows, cols)))
    return Q


@pytest.fixture(scope="session")
def heat_problem() -> Problem:
    """Rod with 16 cells, 3 inputs, n = 4 and a 200-row dictionary."""
    grid_points, steps, dt = 16, 200, 0.01
    system = make_heat_benchmark(grid_points, dt, FAST_HEAT)
    inputs = heat_basis_inputs(FAST_HEAT.inputs, steps, dt, np.random.default_rng(0))
    trajectory = simulate(system, heat_initial_state(grid_points), inputs, steps, dt=dt)
    basis = compute_pod(trajectory.states, 4)
    dictionary = build_dictionary(basis.project(trajectory.states[:, :steps]), inputs, 1)
    return Problem(
        system=system,
        basis=basis,
        dictionary=dictionary,
        test_x0=heat_initial_state(grid_points),
        test_inputs=heat_test_inputs(FAST_HEAT.inputs, 40, dt),
    )


@pytest.fixture(scope="session")
def linear_problem() -> Problem:
    """Rod with 20 cells (N = 20), 3 inputs and n = 3."""
    grid_points, steps, dt = 20, 200, 0.01
    system = make_heat_benchmark(grid_points, dt, FAST_HEAT)
    inputs = heat_basis_inputs(FAST_HEAT.inputs, steps, dt, np.random.default_rng(2))
    trajectory = simulate(system, heat_initial_state(grid_points), inputs, steps, dt=dt)
    basis = compute_pod(trajectory.states, 3)
    dictionary = build_dictionary(basis.project(trajectory.states[:, :steps]), inputs, 1)
    return Problem(
        system=system,
        basis=basis,
        dictionary=dictionary,
        test_x0=heat_initial_state(grid_points),
        test_inputs=heat_test_inputs(FAST_HEAT.inputs, 40, dt),
    )


@pytest.fixture(scope="session")
def lv_problem() -> Problem:
    """Lotka-Volterra on 10 cells (N = 30), n = 4, three 100-step trajectories."""
    grid_points, steps = 10, 100
    system = make_lotka_volterra_benchmark(grid_points, 0.01)
    initial = lv_basis_initial_conditions(grid_points, None, np.random.default_rng(1), count=3)
    trajectories = simulate_batch(system, initial, [None] * len(initial), steps)
    snapshots = np.hstack([t.states for t in trajectories])
    basis = compute_pod(snapshots, 4)
    provenance = ProvenanceTable()
    for trajectory_id in range(len(trajectories)):
        provenance.extend(trajectory_id, steps)
    states = np.hstack([t.states[:, :steps] for t in trajectories])
    dictionary = build_dictionary(basis.project(states), None, 2, provenance)
    return Problem(
        system=system,
        basis=basis,
        dictionary=dictionary,
        test_x0=lv_test_initial_condition(grid_points),
        test_inputs=None,
    )


@pytest.fixture
def orthonormal():
    """Factory for random matrices with orthonormal columns."""
    return random_orthonormal
