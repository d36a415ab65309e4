"""
Quantum and classical Fisher information for the tilt parameter.

The pure-state QFI 4(<dPsi|dPsi> - |<Psi|dPsi>|^2) is evaluated for a
multiconfigurational state whose coefficients and orbitals both depend on
the parameter. Orbital derivatives split into a part inside the orbital span,
acting as sum_kq (d)_kq b_k^+ b_q, and a part outside it whose norm enters
through the one-body density.
"""

import logging
from enum import Enum
from typing import Any, Dict, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import ConfigError
from .fock import DensityData, FockBasis, one_body_operator, shifted_index
from .likelihood import OutcomeDistribution
from .mctdh import ManyBodyState, state_overlap

logger = logging.getLogger(__name__)

ANTI_HERMITICITY_TOLERANCE = 1e-6
NEGATIVE_TOLERANCE = 1e-8
CFI_PROBABILITY_FLOOR = 1e-14
CFI_SLACK = 1e-3
TIME_TOLERANCE = 1e-9


class FisherMethod(str, Enum):
    """How a Fisher value was obtained."""

    SC = "SC"
    TMI = "TMI"
    ANALYTIC = "analytic"


class FisherReport(BaseModel):
    """A Fisher information value with provenance."""

    model_config = ConfigDict(extra="forbid")

    value: float = Field(..., ge=0.0, description="Fisher information")
    parameter: str = Field(default="p4", description="Estimated parameter")
    fd_step: Optional[float] = Field(default=None, description="Finite-difference step")
    method: FisherMethod = Field(default=FisherMethod.SC)
    metadata: Dict[str, Any] = Field(default_factory=dict)


class DerivativeData(BaseModel):
    """Central-difference derivatives of coefficients and orbitals."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    dC: np.ndarray = Field(..., description="d C_n / dX per configuration")
    d_orbitals: np.ndarray = Field(..., description="d phi_q / dX on the grid, (M, n)")
    overlap_derivative: np.ndarray = Field(
        ..., description="(d)_kq = <phi_k | d phi_q>, (M, M)"
    )
    zeta_convention: str = Field(
        default="sqrt(n_k (n_q + 1)) for q != k, n_k for q == k",
        description="Matrix element of b_q^+ b_k between n and n_k^q",
    )
    fd_step: float
    anti_hermiticity_defect: float


def parameter_derivatives(
    state_plus: ManyBodyState, state_minus: ManyBodyState, delta: float
) -> DerivativeData:
    """
    Central differences between trajectories at X + delta and X - delta.

    Both states must share grid, basis and time.
    """
    if not delta > 0.0:
        raise ConfigError(f"Finite-difference step must be positive, got {delta}")
    if state_plus.basis != state_minus.basis:
        raise ConfigError("Derivative states live in different Fock bases")
    if state_plus.grid != state_minus.grid:
        raise ConfigError("Derivative states live on different grids")
    if abs(state_plus.t - state_minus.t) > TIME_TOLERANCE:
        raise ConfigError(
            f"Derivative states are at different times: {state_plus.t} vs {state_minus.t}"
        )

    scale = 1.0 / (2.0 * delta)
    dC = (state_plus.C - state_minus.C) * scale
    d_orbitals = (state_plus.orbitals - state_minus.orbitals) * scale
    middle = 0.5 * (state_plus.orbitals + state_minus.orbitals)
    overlap_derivative = state_plus.grid.spacing * (middle.conj() @ d_orbitals.T)

    defect = float(np.max(np.abs(overlap_derivative + overlap_derivative.conj().T)))
    if defect > ANTI_HERMITICITY_TOLERANCE:
        logger.warning(
            f"Orbital derivative matrix departs from anti-Hermitian by {defect:.3e}"
        )
    return DerivativeData(
        dC=dC,
        d_orbitals=d_orbitals,
        overlap_derivative=overlap_derivative,
        fd_step=delta,
        anti_hermiticity_defect=defect,
    )


def qfi_term_groups(
    C: np.ndarray, deriv: DerivativeData, density: DensityData, basis: FockBasis
) -> Dict[str, float]:
    """
    The seven term groups of the QFI written over configurations.

    n_k^q is n with one particle moved from mode k to mode q. The sum of the
    groups times 4 equals the in-span QFI.
    """
    dC = deriv.dC
    D = deriv.overlap_derivative
    rho1, rho2 = density.rho1, density.rho2
    M = basis.M

    # (G C)_n = sum_kq D_kq zeta_qk C_{n_k^q}, with G = sum D_kq b_k^+ b_q
    moved = np.zeros_like(C)
    moved_d = np.zeros_like(C)
    for n, config in enumerate(basis.configs):
        for k in range(M):
            for q in range(M):
                if q == k:
                    zeta = float(config[k])
                    m = n
                else:
                    if config[k] == 0:
                        continue
                    zeta = float(np.sqrt(config[k] * (config[q] + 1)))
                    m = shifted_index(basis, n, remove=[k], add=[q])
                    if m is None:
                        continue
                moved[n] += D[k, q] * zeta * C[m]
                moved_d[n] += D[k, q] * zeta * dC[m]

    d_rho = complex(np.sum(D * rho1))
    a = complex(np.vdot(C, dC))
    groups = {
        "coefficient_norm": float(np.vdot(dC, dC).real),
        "coefficient_phase": -abs(a) ** 2,
        "mixed_shifted": float((np.vdot(dC, moved) - np.vdot(C, moved_d)).real),
        "mixed_density": float((-(np.conj(a) - a) * d_rho).real),
        "orbital_product": float(-np.einsum("ks,sq,kq->", D, D, rho1).real),
        "orbital_density_square": float((d_rho * d_rho).real),
        "orbital_pair": float(-np.einsum("kq,sl,ksql->", D, D, rho2).real),
    }
    return groups


def qfi_pure_state(
    state: ManyBodyState,
    deriv: DerivativeData,
    density: DensityData,
    method: FisherMethod = FisherMethod.SC,
    metadata: Optional[Dict[str, Any]] = None,
) -> FisherReport:
    """
    QFI of a pure multiconfigurational state.

    The returned metadata holds the decomposition: the coefficient-only
    part, the in-span orbital part, the out-of-span completion and the
    truncated value that omits the completion.
    """
    C = state.C
    dC = deriv.dC
    if dC.shape != C.shape:
        raise ConfigError(f"Derivative shape {dC.shape} does not match state {C.shape}")
    D = deriv.overlap_derivative

    coefficient = 4.0 * (float(np.vdot(dC, dC).real) - abs(np.vdot(C, dC)) ** 2)

    A = dC + one_body_operator(D, state.basis) @ C
    truncated = 4.0 * (float(np.vdot(A, A).real) - abs(np.vdot(C, A)) ** 2)

    outside = deriv.d_orbitals - D.T @ state.orbitals
    outside_gram = state.grid.spacing * (outside.conj() @ outside.T)
    completion = 4.0 * float(np.sum(outside_gram * density.rho1).real)

    value = truncated + completion
    decomposition = {
        "coefficient": coefficient,
        "orbital": truncated - coefficient,
        "completion": completion,
        "truncated": truncated,
        "anti_hermiticity_defect": deriv.anti_hermiticity_defect,
    }
    logger.info(
        f"QFI at t={state.t:.4f}: {value:.6g} (coefficient {coefficient:.6g}, "
        f"orbital {truncated - coefficient:.6g}, completion {completion:.6g})"
    )
    if value < 0.0:
        level = logging.WARNING if value < -NEGATIVE_TOLERANCE else logging.DEBUG
        logger.log(level, f"Clipping negative QFI {value:.3e} to 0")
        value = 0.0

    info: Dict[str, Any] = {"t": state.t, "N": state.N, "g": state.g}
    info.update(metadata or {})
    info["decomposition"] = decomposition
    return FisherReport(value=value, fd_step=deriv.fd_step, method=method, metadata=info)


def cfi(
    dist_plus: OutcomeDistribution,
    dist_minus: OutcomeDistribution,
    dist_0: OutcomeDistribution,
    delta: float,
    method: FisherMethod = FisherMethod.SC,
    metadata: Optional[Dict[str, Any]] = None,
) -> FisherReport:
    """
    F = sum_j P_j (d log P_j / dX)^2 with central-difference derivatives.

    Outcomes with P_j <= 1e-14 are skipped and their mass logged.
    """
    if not delta > 0.0:
        raise ConfigError(f"Finite-difference step must be positive, got {delta}")
    if not dist_plus.N == dist_minus.N == dist_0.N:
        raise ConfigError("Outcome distributions describe different particle numbers")

    p0 = dist_0.as_array()
    slope = (dist_plus.as_array() - dist_minus.as_array()) / (2.0 * delta)
    kept = p0 > CFI_PROBABILITY_FLOOR
    skipped = float(p0[~kept].sum())
    if skipped > 0.0:
        logger.warning(f"CFI skipped outcomes carrying mass {skipped:.3e}")
    value = float(np.sum(slope[kept] ** 2 / p0[kept]))

    info: Dict[str, Any] = {"skipped_mass": skipped}
    info.update(metadata or {})
    return FisherReport(value=value, fd_step=delta, method=method, metadata=info)


def cfi_exceeds_check(qfi: FisherReport, cfi_report: FisherReport) -> bool:
    """True iff the CFI respects the QFI bound within finite-difference slack."""
    within = cfi_report.value <= qfi.value * (1.0 + CFI_SLACK)
    if not within:
        logger.warning(f"CFI {cfi_report.value:.6g} exceeds QFI {qfi.value:.6g}")
    return within


def fidelity_qfi(
    state_plus: ManyBodyState, state_minus: ManyBodyState, delta: float
) -> FisherReport:
    """
    QFI from the overlap of the X + delta and X - delta states.

    |<Psi+|Psi->|^2 = 1 - F delta^2 + O(delta^4).
    """
    if not delta > 0.0:
        raise ConfigError(f"Finite-difference step must be positive, got {delta}")
    overlap = state_overlap(state_plus, state_minus)
    value = (1.0 - abs(overlap) ** 2) / (delta * delta)
    return FisherReport(
        value=max(value, 0.0),
        fd_step=delta,
        method=FisherMethod.SC,
        metadata={"t": state_plus.t, "overlap": abs(overlap)},
    )
