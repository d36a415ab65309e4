"""
Self-consistent MCTDH propagation of N bosons in M time-dependent orbitals.

Coefficients follow i dC/dt = H(t) C; orbitals follow
i d phi_j/dt = P [h phi_j + sum_k (rho^-1)_jk rho_ksql W_sl phi_q]
with W_sl = g phi_s* phi_l and P the projector off the orbital span.
"""

import logging
import math
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .errors import ConfigError, GuardViolationError, NumericalError, StepSizeError
from .fock import (
    CoefficientVector,
    DensityData,
    FockBasis,
    StateKind,
    apply_hamiltonian,
    assemble_hamiltonian,
    build_initial_coefficients,
    density_data,
    enumerate_configs,
    hamiltonian_matrix,
    interaction_integrals,
    multinomial_weight,
    one_body_integrals,
    one_body_rdm,
)
from .grid import (
    Grid,
    PotentialParams,
    apply_h,
    check_on_grid,
    eval_potential,
    gram_matrix,
    localized_orbitals,
    lowest_eigenstates,
    orthonormality_defect,
    stack_orbitals,
)
from .guards import GuardEngine
from .likelihood import side_probabilities
from .observability import RunRecorder
from .permanent import permanent
from .two_mode import bose_hubbard_params

logger = logging.getLogger(__name__)

STEP_DEFECT_LIMIT = 1e-4
MAX_LOGGED_MODES = 4

TRAJECTORY_COLUMNS = (
    "t",
    "rho1",
    "rho2",
    "rho3",
    "rho4",
    "rho_tm",
    "energy",
    "norm_defect",
    "tau",
    "eps",
    "U",
    "PL1",
    "PR1",
    "PL2",
    "PR2",
)


class EvolutionConfig(BaseModel):
    """Integrator settings for one trajectory."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    dt: float = Field(default=1e-4, gt=0.0, description="RK4 step size")
    t_final: float = Field(default=2.0, ge=0.0, description="End time")
    sample_stride: int = Field(default=100, ge=1, description="Steps between samples")
    regularization: float = Field(
        default=1e-8, gt=0.0, description="Regularization of the one-body density inverse"
    )
    frozen_orbitals: bool = Field(
        default=False, description="Keep orbitals fixed (two-mode interferometry)"
    )
    keep_states: bool = Field(
        default=False, description="Store the state at every sample"
    )

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


class ManyBodyState(BaseModel):
    """
    Coefficients and orbitals of a multiconfigurational bosonic state.

    ``potential`` and ``g`` fix the Hamiltonian the state evolves under.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: Grid
    basis: FockBasis
    C: np.ndarray
    orbitals: np.ndarray
    potential: np.ndarray
    g: float = 0.0
    t: float = 0.0

    @field_validator("C")
    @classmethod
    def _complex_coefficients(cls, value: np.ndarray) -> np.ndarray:
        return np.asarray(value, dtype=np.complex128)

    @field_validator("orbitals")
    @classmethod
    def _complex_orbitals(cls, value: np.ndarray) -> np.ndarray:
        array = np.asarray(value, dtype=np.complex128)
        if array.ndim != 2:
            raise ValueError(f"orbitals must be an (M, n) array, got shape {array.shape}")
        return array

    def model_post_init(self, __context: Any) -> None:
        if self.C.shape != (self.basis.size,):
            raise ConfigError(
                f"Coefficient vector has shape {self.C.shape}, "
                f"basis size is {self.basis.size}"
            )
        if self.orbitals.shape[0] != self.basis.M:
            raise ConfigError(
                f"Got {self.orbitals.shape[0]} orbitals for an M={self.basis.M} basis"
            )
        check_on_grid(self.grid, self.orbitals, "orbitals")
        check_on_grid(self.grid, self.potential, "potential")

    @property
    def N(self) -> int:
        return self.basis.N

    @property
    def M(self) -> int:
        return self.basis.M

    def evolved(self, C: np.ndarray, orbitals: np.ndarray, t: float) -> "ManyBodyState":
        return self.model_copy(update={"C": C, "orbitals": orbitals, "t": t})


class TrajectorySample(BaseModel):
    """Monitors recorded at one sample time."""

    model_config = ConfigDict(extra="forbid")

    t: float
    occupations: List[float]
    rho_tm: float
    energy: float
    energy_drift: float
    norm_defect: float
    orthonormality_defect: float
    trace_defect: float
    tau: float
    eps: float
    U: float
    side_left: List[float]
    side_right: List[float]

    def guard_sample(self) -> Dict[str, float]:
        return {
            "t": self.t,
            "norm_defect": self.norm_defect,
            "orthonormality_defect": self.orthonormality_defect,
            "trace_defect": self.trace_defect,
            "energy_drift": self.energy_drift,
            "two_mode_fraction": self.rho_tm,
        }

    def row(self) -> List[float]:
        rho = (list(self.occupations) + [0.0] * MAX_LOGGED_MODES)[:MAX_LOGGED_MODES]
        return [
            self.t,
            *rho,
            self.rho_tm,
            self.energy,
            self.norm_defect,
            self.tau,
            self.eps,
            self.U,
            self.side_left[0],
            self.side_right[0],
            self.side_left[1],
            self.side_right[1],
        ]


class TrajectoryLog(BaseModel):
    """Sampled monitors of one trajectory, times strictly increasing."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    samples: List[TrajectorySample] = Field(default_factory=list)
    states: List[ManyBodyState] = Field(default_factory=list)

    def append(self, sample: TrajectorySample) -> None:
        if self.samples and sample.t <= self.samples[-1].t:
            raise NumericalError(
                f"Trajectory times must increase: {sample.t} after {self.samples[-1].t}"
            )
        self.samples.append(sample)

    @property
    def times(self) -> List[float]:
        return [s.t for s in self.samples]

    @property
    def rho_tm(self) -> List[float]:
        return [s.rho_tm for s in self.samples]

    def rows(self) -> List[List[float]]:
        return [s.row() for s in self.samples]

    def state_at(self, t: float, tolerance: float = 1e-9) -> ManyBodyState:
        for state in self.states:
            if abs(state.t - t) <= tolerance:
                return state
        raise ConfigError(f"No stored state at t={t}")


def regularized_inverse(rho1: np.ndarray, epsilon: float) -> np.ndarray:
    """Inverse of rho with eigenvalues lambda replaced by lambda + eps exp(-lambda/eps)."""
    try:
        values, vectors = scipy.linalg.eigh(rho1)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"One-body density eigendecomposition failed: {e}") from e
    with np.errstate(over="ignore"):
        regular = values + epsilon * np.exp(-values / epsilon)
    if not np.all(np.isfinite(regular)) or np.any(regular <= 0.0):
        raise NumericalError(
            f"One-body density is singular after regularization (eigenvalues {values})"
        )
    inverse = (vectors / regular) @ vectors.conj().T
    if not np.all(np.isfinite(inverse)):
        raise NumericalError("Regularized inverse of the one-body density overflowed")
    return inverse


def _bare_hamiltonian(
    grid: Grid, orbitals: np.ndarray, potential: np.ndarray, g: float, basis: FockBasis
) -> np.ndarray:
    # RK4 stages see slightly non-orthonormal orbitals, so no Gram check here.
    h = one_body_integrals(grid, potential, orbitals)
    W = interaction_integrals(grid, orbitals, g)
    return assemble_hamiltonian(h, W, basis)


def coefficient_rhs(state: ManyBodyState) -> CoefficientVector:
    """dC/dt = -i H(t) C."""
    H = hamiltonian_matrix(
        state.grid, state.orbitals, state.potential, state.g, state.basis
    )
    return -1j * (H @ state.C)


def _projected_orbital_rhs(
    grid: Grid,
    orbitals: np.ndarray,
    density: DensityData,
    g: float,
    potential: np.ndarray,
    epsilon: float,
) -> np.ndarray:
    total = apply_h(grid, potential, orbitals)
    if g != 0.0:
        inverse = regularized_inverse(density.rho1, epsilon)
        # A_kq(x) = sum_sl rho_ksql phi_s*(x) phi_l(x)
        coupling = np.einsum(
            "ksql,sx,lx->kqx", density.rho2, orbitals.conj(), orbitals, optimize=True
        )
        mean_field = g * np.einsum("kqx,qx->kx", coupling, orbitals)
        total = total + inverse @ mean_field
    overlaps = grid.spacing * (orbitals.conj() @ total.T)
    return -1j * (total - overlaps.T @ orbitals)


def orbital_rhs(
    state: ManyBodyState,
    density: DensityData,
    g: float,
    potential: np.ndarray,
    regularization: float = 1e-8,
    frozen_orbitals: bool = False,
) -> np.ndarray:
    """
    d phi_j/dt for every orbital, orthogonal to the current orbital span.

    Returns zeros when ``frozen_orbitals`` is set.
    """
    if frozen_orbitals:
        return np.zeros_like(state.orbitals)
    check_on_grid(state.grid, potential, "potential")
    defect = orthonormality_defect(state.grid, state.orbitals)
    if defect > 1e-6:
        raise NumericalError(f"Orbitals are not orthonormal (Gram defect {defect:.3e})")
    return _projected_orbital_rhs(
        state.grid, state.orbitals, density, g, potential, regularization
    )


def _lowdin(grid: Grid, orbitals: np.ndarray) -> np.ndarray:
    """Symmetric orthonormalization (S^-1/2)^T Phi."""
    overlap = gram_matrix(grid, orbitals)
    values, vectors = scipy.linalg.eigh(overlap)
    if np.any(values <= 0.0):
        raise NumericalError(f"Orbital overlap matrix is not positive definite: {values}")
    inverse_root = (vectors / np.sqrt(values)) @ vectors.conj().T
    return inverse_root.T @ orbitals


class _Propagator:
    """RK4 stepping for one trajectory, caching H when orbitals are frozen."""

    def __init__(self, state: ManyBodyState, config: EvolutionConfig):
        self.grid = state.grid
        self.basis = state.basis
        self.potential = state.potential
        self.g = state.g
        self.config = config
        self._frozen_h: Optional[np.ndarray] = None
        if config.frozen_orbitals:
            self._frozen_h = hamiltonian_matrix(
                self.grid, state.orbitals, self.potential, self.g, self.basis
            )

    def hamiltonian(self, orbitals: np.ndarray) -> np.ndarray:
        if self._frozen_h is not None:
            return self._frozen_h
        return _bare_hamiltonian(self.grid, orbitals, self.potential, self.g, self.basis)

    def derivatives(
        self, C: np.ndarray, orbitals: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]:
        if self._frozen_h is not None:
            return -1j * (self._frozen_h @ C), np.zeros_like(orbitals)
        h = one_body_integrals(self.grid, self.potential, orbitals)
        W = interaction_integrals(self.grid, orbitals, self.g)
        dC = -1j * apply_hamiltonian(h, W, self.basis, C)
        density = density_data(C, self.basis)
        d_orbitals = _projected_orbital_rhs(
            self.grid, orbitals, density, self.g, self.potential, self.config.regularization
        )
        return dC, d_orbitals

    def advance(self, state: ManyBodyState) -> Tuple[ManyBodyState, float, float]:
        """One RK4 step; returns the corrected state and the defects before correction."""
        dt = self.config.dt
        C, phi = state.C, state.orbitals
        k1c, k1p = self.derivatives(C, phi)
        k2c, k2p = self.derivatives(C + 0.5 * dt * k1c, phi + 0.5 * dt * k1p)
        k3c, k3p = self.derivatives(C + 0.5 * dt * k2c, phi + 0.5 * dt * k2p)
        k4c, k4p = self.derivatives(C + dt * k3c, phi + dt * k3p)
        C_new = C + (dt / 6.0) * (k1c + 2.0 * k2c + 2.0 * k3c + k4c)

        norm_sq = float(np.vdot(C_new, C_new).real)
        norm_defect = abs(norm_sq - 1.0)
        if self.config.frozen_orbitals:
            phi_new = phi
            ortho_defect = 0.0
        else:
            phi_new = phi + (dt / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
            ortho_defect = orthonormality_defect(self.grid, phi_new)

        worst = max(norm_defect, ortho_defect)
        if not np.isfinite(worst) or worst > STEP_DEFECT_LIMIT:
            raise StepSizeError(
                f"Step at t={state.t:.6f} left defects norm={norm_defect:.3e}, "
                f"orthonormality={ortho_defect:.3e}; reduce dt={dt}",
                defect=worst,
            )

        C_new = C_new / math.sqrt(norm_sq)
        if not self.config.frozen_orbitals:
            phi_new = _lowdin(self.grid, phi_new)
        return state.evolved(C_new, phi_new, state.t + dt), norm_defect, ortho_defect


def step(state: ManyBodyState, config: EvolutionConfig) -> ManyBodyState:
    """Advance by one RK4 step, then re-orthonormalize orbitals and renormalize C."""
    advanced, norm_defect, ortho_defect = _Propagator(state, config).advance(state)
    logger.debug(
        f"Step to t={advanced.t:.6f}: norm defect {norm_defect:.3e}, "
        f"orthonormality defect {ortho_defect:.3e}"
    )
    return advanced


def natural_occupations(rho1: np.ndarray) -> np.ndarray:
    """Eigenvalues of the one-body density, descending."""
    return np.asarray(scipy.linalg.eigvalsh(rho1))[::-1].copy()


def natural_orbitals(rho1: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Descending occupations and the matching eigenvectors (columns) of rho1."""
    values, vectors = scipy.linalg.eigh(rho1)
    return values[::-1].copy(), vectors[:, ::-1].copy()


def two_mode_fraction(occupations: Sequence[float], N: int) -> float:
    """rho_tm = (rho_1 + rho_2) / N."""
    if len(occupations) < 2:
        raise ConfigError("Two-mode fraction needs at least two occupations")
    ordered = sorted((float(v) for v in occupations), reverse=True)
    return (ordered[0] + ordered[1]) / N


def total_energy(state: ManyBodyState, hamiltonian: Optional[np.ndarray] = None) -> float:
    H = hamiltonian
    if H is None:
        H = hamiltonian_matrix(
            state.grid, state.orbitals, state.potential, state.g, state.basis
        )
    return float(np.vdot(state.C, H @ state.C).real)


def _sample(
    state: ManyBodyState,
    energy: float,
    reference_energy: float,
    norm_defect: float,
    ortho_defect: float,
) -> TrajectorySample:
    rho1 = one_body_rdm(state.C, state.basis)
    occupations = natural_occupations(rho1)
    params = bose_hubbard_params(
        state.grid,
        state.orbitals[0],
        state.orbitals[1],
        state.potential,
        state.g,
        state.N,
    )
    sp = side_probabilities(state.orbitals, state.grid)
    drift = abs(energy - reference_energy) / max(abs(reference_energy), 1e-300)
    return TrajectorySample(
        t=state.t,
        occupations=[float(v) for v in occupations],
        rho_tm=two_mode_fraction(occupations, state.N),
        energy=energy,
        energy_drift=drift,
        norm_defect=norm_defect,
        orthonormality_defect=ortho_defect,
        trace_defect=abs(float(np.trace(rho1).real) - state.N),
        tau=params.tau,
        eps=params.eps,
        U=params.U,
        side_left=list(sp.left),
        side_right=list(sp.right),
    )


def evolve(
    state: ManyBodyState,
    config: EvolutionConfig,
    guards: Optional[GuardEngine] = None,
    recorder: Optional[RunRecorder] = None,
    stage_id: str = "evolve",
    run_id: Optional[str] = None,
) -> Tuple[ManyBodyState, TrajectoryLog]:
    """
    Propagate to ``config.t_final``, sampling monitors every ``sample_stride`` steps.

    The initial and final states are always sampled. Guards are evaluated
    on every sample; a failed rule with an ABORT action raises
    ``GuardViolationError``.

    Returns:
        Tuple of (final_state, trajectory_log)
    """
    propagator = _Propagator(state, config)
    reference_energy = total_energy(state, propagator.hamiltonian(state.orbitals))
    log = TrajectoryLog()
    n_steps = config.n_steps
    logger.info(
        f"Evolving N={state.N}, M={state.M}, g={state.g:.4g} for {n_steps} steps "
        f"(dt={config.dt}, frozen={config.frozen_orbitals})"
    )

    def record(current: ManyBodyState, norm_defect: float, ortho_defect: float) -> None:
        energy = total_energy(current, propagator.hamiltonian(current.orbitals))
        sample = _sample(current, energy, reference_energy, norm_defect, ortho_defect)
        log.append(sample)
        if config.keep_states:
            log.states.append(current)
        if guards is None:
            return
        allowed, results = guards.should_continue(stage_id, sample.guard_sample())
        if recorder is not None:
            recorder.record_guard_evaluation(stage_id, results, run_id=run_id)
            for result in results:
                if not result["passed"]:
                    recorder.record_guard_violation(stage_id, result, run_id=run_id)
        if not allowed:
            failed = [r for r in results if not r["passed"]]
            rule_id = failed[0]["rule_id"] if failed else None
            raise GuardViolationError(
                f"Guard {rule_id} stopped the trajectory at t={current.t:.6f}",
                rule_id=rule_id,
            )

    current = state
    record(
        current,
        abs(float(np.vdot(state.C, state.C).real) - 1.0),
        orthonormality_defect(state.grid, state.orbitals),
    )
    for index in range(1, n_steps + 1):
        current, norm_defect, ortho_defect = propagator.advance(current)
        if recorder is not None and max(norm_defect, ortho_defect) > 1e-10:
            recorder.record_step_correction(
                stage_id, current.t, norm_defect, ortho_defect, run_id=run_id
            )
        if index % config.sample_stride == 0 or index == n_steps:
            record(current, norm_defect, ortho_defect)

    last = log.samples[-1]
    logger.info(
        f"Trajectory done at t={current.t:.4f}: rho_tm={last.rho_tm:.6f}, "
        f"energy drift {last.energy_drift:.2e}"
    )
    return current, log


def prepare_initial_state(
    grid: Grid,
    trap: PotentialParams,
    N: int,
    M: int,
    g: float,
    state_kind: Union[StateKind, str],
) -> ManyBodyState:
    """
    Input state built at zero tilt, to evolve under the tilted trap.

    Modes 1-2 are the localized combinations of the lowest doublet; M=4 adds
    the localized second doublet, M=3 its even member, both unoccupied.
    """
    basis = enumerate_configs(N, M)
    untilted = eval_potential(trap.with_tilt(0.0), grid)
    eigenpairs = lowest_eigenstates(grid, untilted, max(2, M))
    logger.info(f"Single-particle energies at zero tilt: {[e for e, _ in eigenpairs]}")

    phi_left, phi_right = localized_orbitals(grid, eigenpairs[0][1], eigenpairs[1][1])
    modes: List[np.ndarray] = [phi_left, phi_right]
    if M == 3:
        modes.append(eigenpairs[2][1])
    elif M == 4:
        modes.extend(localized_orbitals(grid, eigenpairs[2][1], eigenpairs[3][1]))

    return ManyBodyState(
        grid=grid,
        basis=basis,
        C=build_initial_coefficients(StateKind(state_kind), basis),
        orbitals=stack_orbitals(grid, modes),
        potential=eval_potential(trap, grid),
        g=g,
        t=0.0,
    )


def _configuration_overlaps(
    overlap: np.ndarray, bra_basis: FockBasis, ket_basis: FockBasis
) -> np.ndarray:
    """<n; bra orbitals | m; ket orbitals> from the orbital overlap matrix."""
    modes_bra = np.arange(bra_basis.M)
    modes_ket = np.arange(ket_basis.M)
    result = np.zeros((bra_basis.size, ket_basis.size), dtype=np.complex128)
    for a, n in enumerate(bra_basis.configs):
        rows = np.repeat(modes_bra, n)
        norm_n = multinomial_weight(n)
        for b, m in enumerate(ket_basis.configs):
            cols = np.repeat(modes_ket, m)
            value = permanent(overlap[np.ix_(rows, cols)])
            result[a, b] = value / math.sqrt(norm_n * multinomial_weight(m))
    return result


def state_overlap(bra: ManyBodyState, ket: ManyBodyState) -> complex:
    """<bra|ket> for states built on different orbital sets."""
    if bra.N != ket.N or bra.grid != ket.grid:
        raise ConfigError("Overlap needs equal particle number and grid")
    overlap = bra.grid.spacing * (bra.orbitals.conj() @ ket.orbitals.T)
    table = _configuration_overlaps(overlap, bra.basis, ket.basis)
    return complex(np.vdot(bra.C, table @ ket.C))


def unitary_remix(state: ManyBodyState, unitary: np.ndarray) -> ManyBodyState:
    """
    Rotate orbitals phi'_i = sum_j U_ij phi_j and transform C so the state is unchanged.
    """
    U = np.asarray(unitary, dtype=np.complex128)
    if U.shape != (state.M, state.M):
        raise ConfigError(f"Unitary must be {state.M}x{state.M}, got {U.shape}")
    if not np.allclose(U.conj().T @ U, np.eye(state.M), atol=1e-10):
        raise ConfigError("Remixing matrix is not unitary")
    rotated = U @ state.orbitals
    overlap = state.grid.spacing * (rotated.conj() @ state.orbitals.T)
    table = _configuration_overlaps(overlap, state.basis, state.basis)
    return state.model_copy(update={"C": table @ state.C, "orbitals": rotated})


def keep_states(log: TrajectoryLog, times: Sequence[float]) -> List[ManyBodyState]:
    """Stored states at the requested sample times."""
    return [log.state_at(t) for t in times]


def quenched(state: ManyBodyState, trap: PotentialParams, p4: float) -> ManyBodyState:
    """The same state, set to evolve under the trap tilted to ``p4``."""
    return state.model_copy(
        update={"potential": eval_potential(trap.with_tilt(p4), state.grid)}
    )
