"""
Bosonic Fock space for N particles in M modes.

Reduced density matrices and the many-body Hamiltonian are assembled from
ladder-operator matrices between the N, N-1 and N-2 particle bases.
"""

import logging
from enum import Enum
from functools import lru_cache
from math import comb, factorial
from typing import Dict, Iterator, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
import scipy.sparse
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr

from .errors import ConfigError, NumericalError
from .grid import Grid, RealFunction, apply_h, gram_matrix

logger = logging.getLogger(__name__)

CoefficientVector = npt.NDArray[np.complex128]
Config = Tuple[int, ...]

SUPPORTED_MODES = (2, 3, 4)
ORTHONORMALITY_TOLERANCE = 1e-6


class FockBasis(BaseModel):
    """Occupation vectors with sum N, ordered lexicographically descending."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    N: int = Field(..., ge=0, description="Particle count")
    M: int = Field(..., ge=1, description="Mode count")
    configs: Tuple[Config, ...] = Field(..., description="Ordered occupation vectors")

    _index: Dict[Config, int] = PrivateAttr(default_factory=dict)

    def model_post_init(self, __context: object) -> None:
        self._index.update({config: i for i, config in enumerate(self.configs)})

    @property
    def size(self) -> int:
        return len(self.configs)

    def index_of(self, config: Sequence[int]) -> Optional[int]:
        return self._index.get(tuple(config))

    def occupations(self) -> np.ndarray:
        """(size, M) integer array of occupation numbers."""
        return np.array(self.configs, dtype=np.int64).reshape(self.size, self.M)


class DensityData(BaseModel):
    """One-body rho_kq = <b_k^+ b_q> and two-body rho_ksql = <b_k^+ b_s^+ b_q b_l>."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    rho1: np.ndarray
    rho2: np.ndarray

    @property
    def trace(self) -> float:
        return float(np.trace(self.rho1).real)


def _generate(N: int, M: int) -> Iterator[Config]:
    if M == 1:
        yield (N,)
        return
    for first in range(N, -1, -1):
        for rest in _generate(N - first, M - 1):
            yield (first,) + rest


@lru_cache(maxsize=64)
def _basis(N: int, M: int) -> FockBasis:
    return FockBasis(N=N, M=M, configs=tuple(_generate(N, M)))


def enumerate_configs(N: int, M: int) -> FockBasis:
    """Fock basis of size binomial(N+M-1, M-1)."""
    if N < 1:
        raise ConfigError(f"Particle number must be >= 1, got {N}")
    if M not in SUPPORTED_MODES:
        raise ConfigError(f"Unsupported mode count M={M}; supported: {SUPPORTED_MODES}")
    basis = _basis(N, M)
    assert basis.size == comb(N + M - 1, M - 1)
    return basis


def shifted_index(
    basis: FockBasis,
    config_index: int,
    remove: Sequence[int] = (),
    add: Sequence[int] = (),
) -> Optional[int]:
    """
    Index of the configuration with particles removed from and added to modes.

    Returns None when a removal hits an empty mode.
    """
    occupation = list(basis.configs[config_index])
    for mode in remove:
        if occupation[mode] == 0:
            return None
        occupation[mode] -= 1
    for mode in add:
        occupation[mode] += 1
    return basis.index_of(occupation)


@lru_cache(maxsize=64)
def _ladder(N: int, M: int) -> Tuple[scipy.sparse.csr_matrix, ...]:
    """b_k for every mode as sparse (dim_{N-1}, dim_N) matrices."""
    source = _basis(N, M)
    target = _basis(N - 1, M)
    ops = []
    for mode in range(M):
        rows, cols, values = [], [], []
        for col, config in enumerate(source.configs):
            if config[mode] == 0:
                continue
            lowered = list(config)
            lowered[mode] -= 1
            rows.append(target.index_of(lowered))
            cols.append(col)
            values.append(np.sqrt(config[mode]))
        ops.append(
            scipy.sparse.csr_matrix(
                (values, (rows, cols)), shape=(target.size, source.size)
            )
        )
    return tuple(ops)


@lru_cache(maxsize=64)
def _stacked_annihilators(N: int, M: int) -> scipy.sparse.csr_matrix:
    """All b_k stacked row-wise, shape (M * dim_{N-1}, dim_N)."""
    return scipy.sparse.vstack(_ladder(N, M), format="csr")


@lru_cache(maxsize=64)
def _stacked_pairs(N: int, M: int) -> scipy.sparse.csr_matrix:
    """b_a b_b stacked row-wise in (a, b) order, shape (M * M * dim_{N-2}, dim_N)."""
    first = _ladder(N, M)
    second = _ladder(N - 1, M)
    blocks = [second[a] @ first[b] for a in range(M) for b in range(M)]
    return scipy.sparse.vstack(blocks, format="csr")


def _kron_identity(matrix: np.ndarray, size: int) -> scipy.sparse.csr_matrix:
    return scipy.sparse.kron(matrix, scipy.sparse.identity(size), format="csr")


def annihilation_matrix(basis: FockBasis, mode: int) -> np.ndarray:
    """Matrix of b_mode from the N-particle to the (N-1)-particle basis."""
    if basis.N < 1:
        raise ConfigError("Annihilation needs at least one particle")
    return _ladder(basis.N, basis.M)[mode].toarray()


def number_operator_matrices(basis: FockBasis) -> np.ndarray:
    """Diagonal entries of n_k for every mode, shape (M, size)."""
    return basis.occupations().T.astype(np.float64)


def _check_coefficients(C: np.ndarray, basis: FockBasis) -> CoefficientVector:
    vector = np.asarray(C, dtype=np.complex128)
    if vector.shape != (basis.size,):
        raise ConfigError(
            f"Coefficient vector has shape {vector.shape}, basis size is {basis.size}"
        )
    return vector


def build_noon(N: int, basis: FockBasis) -> CoefficientVector:
    """(|N,0,...> + |0,N,...>)/sqrt(2)."""
    if basis.N != N:
        raise ConfigError(f"Basis holds {basis.N} particles, NOON requested for {N}")
    C = np.zeros(basis.size, dtype=np.complex128)
    left = [0] * basis.M
    right = [0] * basis.M
    left[0] = N
    right[1] = N
    C[basis.index_of(left)] = 1.0 / np.sqrt(2.0)
    C[basis.index_of(right)] = 1.0 / np.sqrt(2.0)
    return C


def build_spin_coherent(N: int, basis: FockBasis) -> CoefficientVector:
    """Binomial amplitudes sqrt(N!/(k!(N-k)!)) cos^(N-k)(pi/4) sin^k(pi/4)."""
    if basis.N != N:
        raise ConfigError(
            f"Basis holds {basis.N} particles, coherent state requested for {N}"
        )
    C = np.zeros(basis.size, dtype=np.complex128)
    half_angle = np.pi / 4.0
    for k in range(N + 1):
        config = [0] * basis.M
        config[0] = N - k
        config[1] = k
        amplitude = (
            np.sqrt(comb(N, k))
            * np.cos(half_angle) ** (N - k)
            * np.sin(half_angle) ** k
        )
        C[basis.index_of(config)] = amplitude
    return C


def build_condensate(basis: FockBasis, mode: int = 0) -> CoefficientVector:
    """All N particles in one mode."""
    C = np.zeros(basis.size, dtype=np.complex128)
    config = [0] * basis.M
    config[mode] = basis.N
    C[basis.index_of(config)] = 1.0
    return C


def one_body_rdm(C: np.ndarray, basis: FockBasis) -> np.ndarray:
    """rho_kq = <b_k^+ b_q>, an (M, M) Hermitian matrix with trace N."""
    vector = _check_coefficients(C, basis)
    lowered = (_stacked_annihilators(basis.N, basis.M) @ vector).reshape(basis.M, -1)
    return lowered.conj() @ lowered.T


def two_body_rdm(C: np.ndarray, basis: FockBasis) -> np.ndarray:
    """rho_ksql = <b_k^+ b_s^+ b_q b_l>, shape (M, M, M, M)."""
    vector = _check_coefficients(C, basis)
    M = basis.M
    if basis.N < 2:
        return np.zeros((M, M, M, M), dtype=np.complex128)
    pairs = (_stacked_pairs(basis.N, M) @ vector).reshape(M, M, -1)
    # (b_s b_k |C>)^+ (b_q b_l |C>), and b_s b_k = b_k b_s
    return np.einsum("ksx,qlx->ksql", pairs.conj(), pairs)


def density_data(C: np.ndarray, basis: FockBasis) -> DensityData:
    return DensityData(rho1=one_body_rdm(C, basis), rho2=two_body_rdm(C, basis))


def one_body_integrals(
    grid: Grid, potential: RealFunction, orbitals: np.ndarray
) -> np.ndarray:
    """h_ij = <phi_i|h|phi_j>."""
    return grid.spacing * (orbitals.conj() @ apply_h(grid, potential, orbitals).T)


def interaction_integrals(grid: Grid, orbitals: np.ndarray, g: float) -> np.ndarray:
    """Contact integrals W_ijkl = g dx sum_x phi_i* phi_j* phi_k phi_l."""
    conj = orbitals.conj()
    return (g * grid.spacing) * np.einsum(
        "ix,jx,kx,lx->ijkl", conj, conj, orbitals, orbitals, optimize=True
    )


def one_body_operator(matrix: np.ndarray, basis: FockBasis) -> np.ndarray:
    """Matrix of sum_ij A_ij b_i^+ b_j."""
    lower = _stacked_annihilators(basis.N, basis.M)
    coupled = _kron_identity(np.asarray(matrix), lower.shape[0] // basis.M) @ lower
    return (lower.T @ coupled).toarray()


def assemble_hamiltonian(h: np.ndarray, W: np.ndarray, basis: FockBasis) -> np.ndarray:
    """H = sum h_ij b_i^+ b_j + 1/2 sum W_ijkl b_i^+ b_j^+ b_l b_k."""
    H = one_body_operator(h, basis)
    if basis.N >= 2:
        M = basis.M
        pairs = _stacked_pairs(basis.N, M)
        # (b_j b_i)^+ (b_l b_k) with pair symmetry b_a b_b = b_b b_a
        coupled = _kron_identity(W.reshape(M * M, M * M), pairs.shape[0] // (M * M))
        H = H + 0.5 * (pairs.T @ (coupled @ pairs)).toarray()
    return H


def apply_hamiltonian(
    h: np.ndarray, W: np.ndarray, basis: FockBasis, C: np.ndarray
) -> CoefficientVector:
    """H C without forming H; same operator as ``assemble_hamiltonian``."""
    vector = _check_coefficients(C, basis)
    M = basis.M
    lower = _stacked_annihilators(basis.N, M)
    lowered = (lower @ vector).reshape(M, -1)
    result = lower.T @ (h @ lowered).ravel()
    if basis.N >= 2:
        pairs = _stacked_pairs(basis.N, M)
        lowered_pairs = (pairs @ vector).reshape(M * M, -1)
        result = result + 0.5 * (
            pairs.T @ (W.reshape(M * M, M * M) @ lowered_pairs).ravel()
        )
    return result


def hamiltonian_matrix(
    grid: Grid,
    orbitals: np.ndarray,
    potential: RealFunction,
    g: float,
    basis: FockBasis,
) -> np.ndarray:
    """Many-body Hamiltonian in the basis built on the given orthonormal orbitals."""
    if orbitals.shape[0] != basis.M:
        raise ConfigError(f"Got {orbitals.shape[0]} orbitals for an M={basis.M} basis")
    defect = float(np.max(np.abs(gram_matrix(grid, orbitals) - np.eye(basis.M))))
    if defect > ORTHONORMALITY_TOLERANCE:
        raise NumericalError(f"Orbitals are not orthonormal (Gram defect {defect:.3e})")
    h = one_body_integrals(grid, potential, orbitals)
    W = interaction_integrals(grid, orbitals, g)
    return assemble_hamiltonian(h, W, basis)


def project_two_mode(C: np.ndarray, basis: FockBasis) -> Tuple[CoefficientVector, float]:
    """
    Restrict coefficients to configurations (N-k, k, 0, ...).

    Returns the M=2 coefficient vector indexed by k and the probability mass
    found outside those configurations.
    """
    vector = _check_coefficients(C, basis)
    two_mode = np.zeros(basis.N + 1, dtype=np.complex128)
    for k in range(basis.N + 1):
        config = [0] * basis.M
        config[0] = basis.N - k
        config[1] = k
        two_mode[k] = vector[basis.index_of(config)]
    inside = np.vdot(two_mode, two_mode).real
    outside = max(0.0, float(np.vdot(vector, vector).real - inside))
    return two_mode, outside


def multinomial_weight(config: Sequence[int]) -> int:
    """prod n_i! of a configuration."""
    weight = 1
    for n in config:
        weight *= factorial(n)
    return weight


class StateKind(str, Enum):
    """Initial input states."""

    CAT = "cat"
    COHERENT = "coherent"


def build_initial_coefficients(kind: StateKind, basis: FockBasis) -> CoefficientVector:
    kind = StateKind(kind)
    if kind is StateKind.CAT:
        return build_noon(basis.N, basis)
    return build_spin_coherent(basis.N, basis)
