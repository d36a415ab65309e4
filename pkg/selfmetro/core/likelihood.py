"""
Left/right particle-count statistics of a two-mode state.

Each orbital contributes per-particle side probabilities; the probability of
finding (N-j, j) particles left/right is a binomial-weighted sum of matrix
permanents over the Fock coefficients.
"""

import logging
from functools import lru_cache
from math import comb, factorial
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import gammaln

from .errors import ConfigError, NumericalError
from .grid import Grid, check_on_grid, side_weights
from .parallel import map_parallel
from .permanent import MAX_ORDER, permanent

logger = logging.getLogger(__name__)

SIDE_TOLERANCE = 1e-10
NORMALIZATION_TOLERANCE = 1e-10
MODE_LEAK_TOLERANCE = 1e-6
EXACT_FACTORIAL_LIMIT = 20
CACHE_DECIMALS = 14


class SideProbabilities(BaseModel):
    """Per-orbital probabilities of finding one particle left or right of x=0."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    left: Tuple[float, ...] = Field(..., description="P_L per orbital")
    right: Tuple[float, ...] = Field(..., description="P_R per orbital")

    @model_validator(mode="after")
    def _check_pairs(self) -> "SideProbabilities":
        if len(self.left) != len(self.right):
            raise ValueError("left and right must cover the same orbitals")
        for j, (p_left, p_right) in enumerate(zip(self.left, self.right)):
            if not (-SIDE_TOLERANCE <= p_left <= 1 + SIDE_TOLERANCE):
                raise ValueError(f"P_L of orbital {j} out of range: {p_left}")
            if not (-SIDE_TOLERANCE <= p_right <= 1 + SIDE_TOLERANCE):
                raise ValueError(f"P_R of orbital {j} out of range: {p_right}")
            if abs(p_left + p_right - 1.0) > SIDE_TOLERANCE:
                raise ValueError(f"P_L + P_R of orbital {j} is {p_left + p_right}")
        return self

    def matrix(self) -> np.ndarray:
        """(2, M) array with rows L, R."""
        return np.array([self.left, self.right], dtype=np.float64)

    def cache_key(self, modes: int = 2) -> Tuple[float, ...]:
        values = np.round(self.matrix()[:, :modes].ravel(), CACHE_DECIMALS)
        return tuple(float(v) for v in values)


class OutcomeDistribution(BaseModel):
    """P_j for the outcome (n_L, n_R) = (N-j, j), j = 0..N."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    probabilities: Tuple[float, ...] = Field(..., min_length=2)

    @field_validator("probabilities")
    @classmethod
    def _check_normalized(cls, values: Tuple[float, ...]) -> Tuple[float, ...]:
        if min(values) < -NORMALIZATION_TOLERANCE:
            raise ValueError(f"Negative outcome probability {min(values)}")
        total = sum(values)
        if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
            raise ValueError(f"Outcome probabilities sum to {total}")
        return tuple(max(v, 0.0) for v in values)

    @property
    def N(self) -> int:
        return len(self.probabilities) - 1

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probabilities, dtype=np.float64)

    def outcomes(self) -> List[Tuple[int, int]]:
        return [(self.N - j, j) for j in range(self.N + 1)]

    def probability(self, n_left: int, n_right: int) -> float:
        return self.probabilities[outcome_index(n_left, n_right, self.N)]


def outcome_index(n_left: int, n_right: int, N: int) -> int:
    """Index j of the outcome (N-j, j)."""
    if n_left < 0 or n_right < 0 or n_left + n_right != N:
        raise ConfigError(f"Outcome ({n_left},{n_right}) is invalid for N={N}")
    return n_right


def side_probabilities(orbitals: np.ndarray, grid: Grid) -> SideProbabilities:
    """
    Split each orbital's density at x=0.

    The x=0 node of odd grids contributes half its weight to each side and
    every pair is renormalized by its sum.
    """
    array = np.atleast_2d(np.asarray(orbitals))
    check_on_grid(grid, array, "orbitals")
    left_w, right_w = side_weights(grid)
    density = np.abs(array) ** 2
    left = density @ left_w
    right = density @ right_w
    total = left + right
    if np.any(total <= 0.0) or not np.all(np.isfinite(total)):
        raise NumericalError("Orbital with vanishing or non-finite density")
    return SideProbabilities(
        left=tuple(float(v) for v in left / total),
        right=tuple(float(v) for v in right / total),
    )


def build_outcome_matrix(j: int, k: int, N: int, sp: SideProbabilities) -> np.ndarray:
    """
    N x N matrix of the outcome (N-j, j) against the configuration (N-k, k).

    Rows are (N-j) L's then j R's; columns are mode 1 repeated N-k times then
    mode 2 repeated k times; entry (r, c) = P_{side(r), mode(c)}.
    """
    if N < 1:
        raise ConfigError(f"N must be >= 1, got {N}")
    if not (0 <= j <= N and 0 <= k <= N):
        raise ConfigError(f"Indices j={j}, k={k} out of range for N={N}")
    if len(sp.left) < 2:
        raise ConfigError("Side probabilities for two orbitals are required")
    sides = np.array([0] * (N - j) + [1] * j)
    modes = np.array([0] * (N - k) + [1] * k)
    return sp.matrix()[np.ix_(sides, modes)]


def _prefactor(N: int, j: int) -> float:
    """binom(N, j) / N!."""
    if N <= EXACT_FACTORIAL_LIMIT:
        return comb(N, j) / factorial(N)
    return float(np.exp(-gammaln(j + 1) - gammaln(N - j + 1)))


@lru_cache(maxsize=512)
def _permanent_table(N: int, key: Tuple[float, ...]) -> np.ndarray:
    """perm(V_jk) for all (j, k), from quantized (P_L1, P_L2, P_R1, P_R2)."""
    sp = SideProbabilities(left=key[:2], right=key[2:])
    pairs = [(j, k) for j in range(N + 1) for k in range(N + 1)]
    values = map_parallel(
        lambda jk: float(permanent(build_outcome_matrix(jk[0], jk[1], N, sp))), pairs
    )
    table = np.array(values).reshape(N + 1, N + 1)
    table.setflags(write=False)
    return table


def outcome_distribution(
    C: Sequence[complex],
    sp: SideProbabilities,
    N: int,
    outside_mass: float = 0.0,
) -> OutcomeDistribution:
    """
    P_j = binom(N, j)/N! sum_k |C_k|^2 perm(V_jk).

    Args:
        C: M=2 coefficients indexed by k for configurations (N-k, k)
        sp: Side probabilities; orbitals 1 and 2 are used
        N: Particle number
        outside_mass: Probability found outside the two-mode configurations

    Returns:
        Normalized outcome distribution
    """
    vector = np.asarray(C, dtype=np.complex128)
    if vector.shape != (N + 1,):
        raise ConfigError(
            f"Expected {N + 1} two-mode coefficients, got shape {vector.shape}"
        )
    if N > MAX_ORDER:
        raise ConfigError(f"N={N} exceeds the permanent cap of {MAX_ORDER}")
    if outside_mass > MODE_LEAK_TOLERANCE:
        raise NumericalError(
            f"Occupation outside the two leading modes is {outside_mass:.3e} "
            f"(limit {MODE_LEAK_TOLERANCE:.0e})"
        )

    weights = np.abs(vector) ** 2
    total = float(weights.sum())
    if outside_mass > 0.0 or abs(total - 1.0) > NORMALIZATION_TOLERANCE:
        if outside_mass > 0.0:
            logger.warning(f"Renormalizing away {outside_mass:.3e} outside the two modes")
        if total <= 0.0:
            raise NumericalError("Two-mode coefficients carry no probability")
        weights = weights / total

    table = _permanent_table(N, sp.cache_key())
    prefactors = np.array([_prefactor(N, j) for j in range(N + 1)])
    probabilities = prefactors * (table @ weights)
    return OutcomeDistribution(probabilities=tuple(float(p) for p in probabilities))
