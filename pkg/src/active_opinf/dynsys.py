"""High-dimensional polynomial truth systems and the two benchmark factories."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .models import Array, DimensionMismatchError, DomainError, PreconditionError, Trajectory
from .tensorpoly import MonomialIndex, compressed_power, unique_monomial_count

LOG = logging.getLogger("active_opinf")

Operator = Array | sp.spmatrix

# spawn keys separating the random streams derived from one master seed
BASIS_STREAM = 0
REPLICATE_STREAM = 1
QUERY_STREAM = 2


@dataclass(frozen=True)
class PolynomialSystem:
    """x_{k+1} = sum_j A_j x^j + B u, with x^j the unique-monomial power."""

    ops: tuple[Operator, ...]
    input_map: Array

    def __post_init__(self) -> None:
        """Validate operator shapes against the unique-monomial counts."""
        if not self.ops:
            raise DomainError("A polynomial system needs at least the linear operator.")
        N = self.ops[0].shape[0]
        for j, op in enumerate(self.ops, start=1):
            expected = (N, unique_monomial_count(N, j))
            if op.shape != expected:
                raise DimensionMismatchError(f"A_{j} has shape {op.shape}, expected {expected}.")
        if self.input_map.ndim != 2 or self.input_map.shape[0] != N:
            raise DimensionMismatchError(
                f"Input map must have {N} rows (got shape {self.input_map.shape})."
            )

    @property
    def state_dim(self) -> int:
        """Return N."""
        return self.ops[0].shape[0]

    @property
    def input_dim(self) -> int:
        """Return p (0 for autonomous systems)."""
        return self.input_map.shape[1]

    @property
    def order(self) -> int:
        """Return the polynomial order ell."""
        return len(self.ops)

    @property
    def autonomous(self) -> bool:
        """Return True when the system has no inputs."""
        return self.input_dim == 0


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian noise level and the master seed its streams derive from."""

    sigma: float
    seed: int = 0

    def __post_init__(self) -> None:
        """Reject negative standard deviations."""
        if self.sigma < 0:
            raise DomainError(f"Noise standard deviation must be >= 0 (got {self.sigma}).")

    def stream(self, *spawn_key: int) -> NoiseStream:
        """Return the stream identified by `spawn_key` under this seed."""
        return NoiseStream(self.sigma, make_noise_stream(self.seed, *spawn_key))


def make_noise_stream(seed: int, *spawn_key: int) -> np.random.Generator:
    """Return an independent PCG64 generator for (seed, spawn_key).

    Normals come from numpy's ziggurat transform of the PCG64 output, so a
    fixed key reproduces the same draws bit for bit on a given platform.
    """
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=tuple(spawn_key))
    return np.random.Generator(np.random.PCG64(sequence))


class NoiseStream:
    """A single-owner stream of N(0, sigma^2 I) draws."""

    def __init__(self, sigma: float, rng: np.random.Generator):
        """Bind a noise level to a generator."""
        self.sigma = float(sigma)
        self.rng = rng

    def draw(self, shape: int | tuple[int, ...]) -> Array:
        """Return sigma times standard normals; the stream advances even for sigma = 0."""
        return self.sigma * self.rng.standard_normal(shape)


def _as_inputs(sys: PolynomialSystem, u: Array | None, columns: int | None) -> Array | None:
    if sys.autonomous:
        return None
    if u is None:
        raise DimensionMismatchError(f"System expects inputs of dimension {sys.input_dim}.")
    u = np.asarray(u, dtype=np.float64)
    if u.shape[0] != sys.input_dim or (columns is not None and (u.ndim != 2 or u.shape[1] != columns)):
        raise DimensionMismatchError(
            f"Inputs have shape {u.shape}, expected {sys.input_dim} rows"
            + (f" and {columns} columns." if columns is not None else ".")
        )
    return u


def step(sys: PolynomialSystem, x: Array, u: Array | None = None) -> Array:
    """Apply f(x, u) = sum_j A_j x^j + B u to a state or to a matrix of state columns."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != sys.state_dim or x.ndim not in (1, 2):
        raise DimensionMismatchError(f"State has shape {x.shape}, expected {sys.state_dim} rows.")
    u = _as_inputs(sys, u, x.shape[1] if x.ndim == 2 else None)
    result = np.asarray(sys.ops[0] @ x, dtype=np.float64)
    for j in range(2, sys.order + 1):
        result = result + sys.ops[j - 1] @ compressed_power(x, j)
    if u is not None:
        result = result + sys.input_map @ u
    return result


def step_noisy(sys: PolynomialSystem, x: Array, u: Array | None, noise: NoiseStream) -> Array:
    """Apply f(x, u) and add a fresh N(0, sigma^2 I) draw."""
    clean = step(sys, x, u)
    return clean + noise.draw(clean.shape)


def simulate(
    sys: PolynomialSystem,
    x0: Array,
    inputs: Array | None,
    K: int,
    noise: NoiseStream | None = None,
    dt: float = 1.0,
) -> Trajectory:
    """Return K+1 states starting at x0, applying step (or step_noisy) K times."""
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (sys.state_dim,):
        raise DimensionMismatchError(f"Initial state has shape {x0.shape}, expected ({sys.state_dim},).")
    if K < 0:
        raise DomainError("Number of steps must be non-negative.")
    if sys.autonomous:
        U = np.zeros((0, K))
    else:
        U = _as_inputs(sys, inputs, None)
        if U.ndim != 2 or U.shape[1] < K:
            raise DimensionMismatchError(f"Need {K} input columns, got shape {U.shape}.")
        U = U[:, :K]
    states = np.empty((sys.state_dim, K + 1))
    states[:, 0] = x0
    for k in range(K):
        u_k = None if sys.autonomous else U[:, k]
        if noise is None:
            states[:, k + 1] = step(sys, states[:, k], u_k)
        else:
            states[:, k + 1] = step_noisy(sys, states[:, k], u_k, noise)
    return Trajectory(states=states, inputs=U, dt=dt)


def simulate_batch(
    sys: PolynomialSystem,
    initial_states: Sequence[Array],
    inputs: Sequence[Array | None],
    K: int,
    dt: float = 1.0,
) -> list[Trajectory]:
    """Simulate one noise-free trajectory per initial state."""
    return [simulate(sys, x0, u, K, dt=dt) for x0, u in zip(initial_states, inputs, strict=True)]


@dataclass(frozen=True)
class HeatConstants:
    """Physical constants of the cooling benchmark."""

    conductivity: float = 26.4
    heat_capacity: float = 7620.0
    density: float = 654.0
    transfer: float = 69.696
    thickness: float = 0.01
    inputs: int = 7

    @property
    def diffusivity(self) -> float:
        """Return lambda / (c rho)."""
        return self.conductivity / (self.heat_capacity * self.density)

    @property
    def exchange_rate(self) -> float:
        """Volumetric Robin exchange rate kappa / (c rho thickness)."""
        return self.transfer / (self.heat_capacity * self.density * self.thickness)


@dataclass(frozen=True)
class LotkaVolterraConstants:
    """Reaction and diffusion constants of the three-species model."""

    a1: float = 1.01
    a2: float = 0.93
    a3: float = 0.1
    a4: float = 0.19
    a5: float = 0.2
    a6: float = 1.0
    a7: float = 0.05
    a8: float = 0.2
    d1: float = 0.01
    d2: float = 0.03
    d3: float = 0.009


def neumann_laplacian(grid_points: int, spacing: float) -> Array:
    """Cell-centred second difference with zero-flux ends (symmetric, zero row sums)."""
    main = np.full(grid_points, -2.0)
    main[0] = main[-1] = -1.0
    off = np.ones(grid_points - 1)
    return (np.diag(main) + np.diag(off, 1) + np.diag(off, -1)) / spacing**2


def heat_segments(grid_points: int, inputs: int) -> Array:
    """Indicator matrix assigning each cell to one of `inputs` lateral boundary segments."""
    segment = (np.arange(grid_points) * inputs) // grid_points
    E = np.zeros((grid_points, inputs))
    E[np.arange(grid_points), segment] = 1.0
    return E


def make_heat_benchmark(
    grid_points: int = 64,
    dt: float = 0.01,
    constants: HeatConstants | None = None,
) -> PolynomialSystem:
    """Implicit-Euler rod with insulated ends and Robin exchange on p lateral segments."""
    constants = constants or HeatConstants()
    if grid_points < 3:
        raise DomainError("Heat benchmark needs at least 3 grid points.")
    if dt <= 0:
        raise DomainError("Time step must be positive.")
    spacing = 1.0 / grid_points
    laplacian = neumann_laplacian(grid_points, spacing)
    E = heat_segments(grid_points, constants.inputs)
    beta = constants.exchange_rate
    system_matrix = (
        np.eye(grid_points)
        - dt * constants.diffusivity * laplacian
        + dt * beta * np.diag(E.sum(axis=1))
    )
    try:
        factor = la.lu_factor(system_matrix, check_finite=True)
    except (la.LinAlgError, ValueError) as exc:
        raise PreconditionError(f"Implicit Euler matrix is not invertible: {exc}") from exc
    if np.min(np.abs(np.diag(factor[0]))) == 0.0:
        raise PreconditionError("Implicit Euler matrix is singular.")
    A_1 = la.lu_solve(factor, np.eye(grid_points))
    B = la.lu_solve(factor, dt * beta * E)
    LOG.debug("Heat benchmark: N=%s p=%s dt=%s", grid_points, constants.inputs, dt)
    return PolynomialSystem(ops=(A_1,), input_map=B)


def heat_initial_state(grid_points: int, temperature: float = 500.0) -> Array:
    """Uniform initial temperature."""
    return np.full(grid_points, temperature)


def heat_test_inputs(inputs: int, steps: int, dt: float) -> Array:
    """Component i (1-based) at step k is 500 (1 - tanh(k dt / i^2))."""
    k = np.arange(steps)[None, :]
    i = np.arange(1, inputs + 1)[:, None]
    return 500.0 * (1.0 - np.tanh(k * dt / i**2))


def heat_basis_inputs(inputs: int, steps: int, dt: float, rng: np.random.Generator) -> Array:
    """Test inputs plus 250 times uniform[0, 1] noise, with no noise at k = 0."""
    gamma = rng.uniform(0.0, 1.0, size=(inputs, steps))
    gamma[:, 0] = 0.0
    return heat_test_inputs(inputs, steps, dt) + 250.0 * gamma


def equilibrium_lv(constants: LotkaVolterraConstants | None = None) -> tuple[float, float, float]:
    """Return the spatially homogeneous equilibrium (x1*, x2*, x3*)."""
    c = constants or LotkaVolterraConstants()
    if c.a5 == 0 or c.a2 == 0 or c.a6 == 0:
        raise DomainError("Equilibrium needs nonzero a2, a5 and a6.")
    x3 = c.a4 / c.a5
    x2 = (c.a1 * c.a5 - c.a3 * c.a4) / (c.a2 * c.a5)
    x1 = (c.a8 - c.a7 * x2) / c.a6
    return x1, x2, x3


def lv_grid(grid_points: int) -> Array:
    """Cell centres of `grid_points` equal cells on [0, pi]."""
    spacing = np.pi / grid_points
    return (np.arange(grid_points) + 0.5) * spacing


def lv_equilibrium_state(grid_points: int, constants: LotkaVolterraConstants | None = None) -> Array:
    """Constant profiles at the equilibrium, stacked species by species."""
    return np.repeat(np.array(equilibrium_lv(constants)), grid_points)


def lv_initial_condition(
    grid_points: int,
    constants: LotkaVolterraConstants | None,
    gamma: Sequence[float],
) -> Array:
    """Perturbed equilibrium parameterised by the six coefficients gamma."""
    eta = lv_grid(grid_points)
    x1, x2, x3 = equilibrium_lv(constants)
    g1, g2, g3, g4, g5, g6 = gamma
    return np.concatenate(
        [
            x1 + g1 * np.sin(6 * g2 * eta) / 10,
            x2 + g3 * np.cos(4 * g4 * eta) / 10,
            x3 + g5 * np.sin(2 * g6 * eta) / 10,
        ]
    )


def lv_test_initial_condition(
    grid_points: int, constants: LotkaVolterraConstants | None = None
) -> Array:
    """Initial condition used for prediction (all coefficients equal to one)."""
    return lv_initial_condition(grid_points, constants, [1.0] * 6)


def lv_basis_initial_conditions(
    grid_points: int,
    constants: LotkaVolterraConstants | None,
    rng: np.random.Generator,
    count: int = 6,
) -> list[Array]:
    """Random perturbations of the equilibrium used to generate basis snapshots."""
    return [lv_initial_condition(grid_points, constants, rng.uniform(0.0, 1.0, 6)) for _ in range(count)]


def make_lotka_volterra_benchmark(
    grid_points: int = 100,
    dt: float = 0.01,
    constants: LotkaVolterraConstants | None = None,
) -> PolynomialSystem:
    """Crank-Nicolson diffusion with explicit reaction terms; autonomous, ell = 2, N = 3 G."""
    c = constants or LotkaVolterraConstants()
    if grid_points < 3:
        raise DomainError("Lotka-Volterra benchmark needs at least 3 grid points.")
    if dt <= 0:
        raise DomainError("Time step must be positive.")
    G = grid_points
    N = 3 * G
    laplacian = neumann_laplacian(G, np.pi / G)
    identity = np.eye(G)
    diffusion = (c.d1, c.d2, c.d3)
    growth = (c.a1, c.a4, -c.a8)

    A_1 = np.zeros((N, N))
    implicit_inverse = []
    for s in range(3):
        lhs = identity - 0.5 * dt * diffusion[s] * laplacian
        rhs = identity + 0.5 * dt * diffusion[s] * laplacian + dt * growth[s] * identity
        inverse = la.solve(lhs, identity, assume_a="sym")
        implicit_inverse.append(inverse)
        A_1[s * G : (s + 1) * G, s * G : (s + 1) * G] = inverse @ rhs

    # pointwise products: (species pair) -> [(equation species, coefficient), ...]
    reactions = {
        (0, 1): [(0, -c.a2)],
        (0, 2): [(0, -c.a3), (2, c.a6)],
        (1, 2): [(1, -c.a5), (2, c.a7)],
    }
    high = MonomialIndex.for_dim(N, 2)
    rows: list[Array] = []
    cols: list[Array] = []
    vals: list[Array] = []
    block_rows = np.arange(G)
    for i in range(G):
        for (s, t), terms in reactions.items():
            column = high.positions_of((s * G + i, t * G + i))
            for equation, coefficient in terms:
                rows.append(equation * G + block_rows)
                cols.append(np.full(G, column))
                vals.append(dt * coefficient * implicit_inverse[equation][:, i])
    A_2 = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N, len(high)),
    )
    LOG.debug("Lotka-Volterra benchmark: N=%s nnz(A_2)=%s", N, A_2.nnz)
    return PolynomialSystem(ops=(A_1, A_2), input_map=np.zeros((N, 0)))
