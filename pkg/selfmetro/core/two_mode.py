"""
Fixed-orbital two-mode reference: Bose-Hubbard mapping and phase-only dynamics.

H = -tau Jx + eps Jz + U Jz^2 on the basis |N-k, k>, Jz|N-k, k> = (N-2k)/2.
"""

import logging
from typing import Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import ConfigError, NumericalError
from .fock import (
    CoefficientVector,
    StateKind,
    interaction_integrals,
    one_body_integrals,
)
from .grid import Grid, RealFunction, dipole_moment, gram_matrix, stack_orbitals

logger = logging.getLogger(__name__)


class BoseHubbardParams(BaseModel):
    """Two-site Bose-Hubbard parameters of a localized orbital pair."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    tau: float = Field(..., description="Tunneling amplitude")
    eps: float = Field(..., description="Inter-well energy offset")
    U: float = Field(..., description="On-site interaction coupling")
    offset: float = Field(
        default=0.0, description="Constant separating the full matrix from the model"
    )
    N: int = Field(..., ge=1, description="Particle number the mapping was built for")


def bose_hubbard_params(
    grid: Grid,
    phi_left: np.ndarray,
    phi_right: np.ndarray,
    potential: RealFunction,
    g: float,
    N: int,
) -> BoseHubbardParams:
    """
    Map the two-mode Hamiltonian onto (tau, eps, U).

    The diagonal of the full M=2 matrix is matched exactly by eps, U and
    ``offset``. Tunneling carries the mean correlated-tunneling correction.
    """
    orbitals = stack_orbitals(grid, [phi_left, phi_right])
    defect = float(np.max(np.abs(gram_matrix(grid, orbitals) - np.eye(2))))
    if defect > 1e-6:
        raise NumericalError(f"Orbital pair is not orthonormal (Gram defect {defect:.3e})")

    h = one_body_integrals(grid, potential, orbitals)
    W = interaction_integrals(grid, orbitals, g)

    h11, h22 = h[0, 0].real, h[1, 1].real
    u_left, u_right = W[0, 0, 0, 0].real, W[1, 1, 1, 1].real
    cross = W[0, 1, 0, 1].real
    # <N-k-1, k+1|H|N-k, k> = sqrt((N-k)(k+1)) [h21 + A (N-k-1) + B k]
    hop = h[0, 1] + 0.5 * (np.conj(W[1, 0, 0, 0]) + np.conj(W[1, 1, 1, 0])) * (N - 1)
    sign = -1.0 if hop.real < 0 else 1.0
    tau = -2.0 * abs(hop) * sign

    half = N / 2.0
    eps = (h11 - h22) + 0.5 * (u_left - u_right) * (N - 1)
    U = 0.5 * (u_left + u_right) - 2.0 * cross
    offset = (
        (h11 + h22) * half
        + 0.5 * (u_left + u_right) * (half * half - half)
        + 2.0 * cross * half * half
    )

    return BoseHubbardParams(
        tau=float(tau), eps=float(eps), U=float(U), offset=float(offset), N=N
    )


def jz_diagonal(N: int) -> np.ndarray:
    """Jz eigenvalues (N-2k)/2 for k = 0..N."""
    return (N - 2.0 * np.arange(N + 1)) / 2.0


def bose_hubbard_matrix(params: BoseHubbardParams, N: int) -> np.ndarray:
    """Matrix of -tau Jx + eps Jz + U Jz^2 on |N-k, k>, k = 0..N."""
    jz = jz_diagonal(N)
    k = np.arange(N)
    jx_off = 0.5 * np.sqrt((N - k) * (k + 1.0))
    H = np.diag(params.eps * jz + params.U * jz * jz).astype(np.float64)
    H[k + 1, k] = -params.tau * jx_off
    H[k, k + 1] = -params.tau * jx_off
    return H


def tmi_evolve(C0: np.ndarray, eps: float, U: float, t: float) -> CoefficientVector:
    """Phase-only evolution exp(-i (eps Jz + U Jz^2) t), tunneling dropped."""
    C0 = np.asarray(C0, dtype=np.complex128)
    if C0.ndim != 1 or C0.size < 2:
        raise ConfigError(f"Expected an M=2 coefficient vector, got shape {C0.shape}")
    jz = jz_diagonal(C0.size - 1)
    return np.exp(-1j * eps * jz * t) * np.exp(-1j * U * jz * jz * t) * C0


def tmi_qfi_analytic(state_kind: Union[StateKind, str], N: int, t: float) -> float:
    """F_eps = N^2 t^2 for the cat state and N t^2 for the equal-weight coherent state."""
    try:
        kind = StateKind(state_kind)
    except ValueError as e:
        raise ConfigError(f"Unknown state kind: {state_kind!r}") from e
    if kind is StateKind.CAT:
        return float(N * N * t * t)
    return float(N * t * t)


def tmi_qfi_from_state(C0: np.ndarray, t: float) -> float:
    """4 Var(Jz) t^2 for an arbitrary two-mode initial state."""
    weights = np.abs(np.asarray(C0)) ** 2
    jz = jz_diagonal(weights.size - 1)
    mean = float(np.dot(weights, jz))
    variance = float(np.dot(weights, jz * jz)) - mean * mean
    return 4.0 * max(variance, 0.0) * t * t


def chain_rule_qfi(f_eps: float, d_eps_d_p4: float) -> float:
    """F_p4 = F_eps (d eps / d p4)^2."""
    if not (np.isfinite(f_eps) and np.isfinite(d_eps_d_p4)):
        raise ConfigError("Chain rule inputs must be finite")
    return float(f_eps * d_eps_d_p4 * d_eps_d_p4)


def dipole_difference(grid: Grid, phi_1: np.ndarray, phi_2: np.ndarray) -> float:
    """d eps / d p4 for fixed orbitals: <x>_1 - <x>_2."""
    return dipole_moment(grid, phi_1) - dipole_moment(grid, phi_2)
