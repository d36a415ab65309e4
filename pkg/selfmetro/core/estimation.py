"""
Maximum-likelihood estimation of the tilt from left/right counting outcomes.

A likelihood family tabulates the outcome distribution over a p4 grid. The
estimator maximizes the (pooled) log-likelihood on the grid and refines the
maximum with a parabola through its neighbours.
"""

import hashlib
import logging
import math
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import ConfigError, NoInformationError
from .fock import project_two_mode
from .grid import Grid
from .guards import GuardEngine
from .likelihood import (
    NORMALIZATION_TOLERANCE,
    OutcomeDistribution,
    outcome_distribution,
    outcome_index,
    side_probabilities,
)
from .mctdh import ManyBodyState, evolve, prepare_initial_state, quenched
from .metrology import cfi
from .observability import RunRecorder
from .parallel import map_parallel
from .scenario import FamilyMethod, ScenarioConfig
from .two_mode import bose_hubbard_params, tmi_evolve

logger = logging.getLogger(__name__)

FLAT_TOLERANCE = 1e-12
LOG_FLOOR = 1e-300
GRID_TOLERANCE = 1e-9
NEGLIGIBLE_WEIGHT = 1e-12
RHO_TM_FLOOR = 0.98
TRIAL_CHUNK = 1000


class LikelihoodFamily(BaseModel):
    """Outcome distributions P(j | p4) over an ascending p4 grid."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    p4: np.ndarray = Field(..., description="Ascending parameter grid")
    table: np.ndarray = Field(..., description="(grid size, N + 1) probabilities")
    metadata: Dict[str, Any] = Field(default_factory=dict)
    provenance: str = Field(default="", description="Hash of the generating scenario")

    @model_validator(mode="after")
    def _check_table(self) -> "LikelihoodFamily":
        p4 = np.asarray(self.p4, dtype=np.float64)
        table = np.asarray(self.table, dtype=np.float64)
        if p4.ndim != 1 or p4.size < 1:
            raise ValueError("p4 grid must be a non-empty vector")
        if np.any(np.diff(p4) <= 0.0):
            raise ValueError("p4 grid must be strictly increasing")
        if table.shape[0] != p4.size or table.ndim != 2 or table.shape[1] < 2:
            raise ValueError(
                f"Table shape {table.shape} does not match {p4.size} grid points"
            )
        sums = table.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > NORMALIZATION_TOLERANCE):
            raise ValueError(f"Family rows are not normalized (worst {sums.max():.12f})")
        return self

    @property
    def N(self) -> int:
        return int(self.table.shape[1]) - 1

    @property
    def size(self) -> int:
        return int(self.p4.size)

    def distribution(self, index: int) -> OutcomeDistribution:
        return OutcomeDistribution(probabilities=tuple(float(v) for v in self.table[index]))

    def index_of(self, p4: float) -> int:
        """Grid index of ``p4``; the value must lie on the grid."""
        index = int(np.argmin(np.abs(self.p4 - p4)))
        if abs(float(self.p4[index]) - p4) > GRID_TOLERANCE:
            raise ConfigError(f"p4={p4} is not on the family grid")
        return index

    def log_table(self) -> np.ndarray:
        return np.log(np.maximum(self.table, LOG_FLOOR))

    def is_flat(self) -> bool:
        return bool(np.all(np.ptp(self.table, axis=0) < FLAT_TOLERANCE))


class EstimationReport(BaseModel):
    """Estimator statistics at one true value and shot number."""

    model_config = ConfigDict(extra="forbid")

    x_true: float
    nu: int = Field(..., ge=1)
    trials: int = Field(
        ..., ge=0, description="Monte Carlo trials; 0 for exact expectation"
    )
    seed: int
    mle_table: List[Tuple[int, int, float]] = Field(
        default_factory=list, description="Single-shot (nL, nR, X_est)"
    )
    moe: float = Field(..., description="Mean of estimates <X_est>_X")
    moe_error: float = Field(default=0.0, description="Monte Carlo standard error of moe")
    domoe: float = Field(..., description="|d<X_est>_X / dX|")
    msd: float = Field(..., ge=0.0, description="<(X_est/|domoe| - X)^2>_X")
    fisher_information: float = Field(..., ge=0.0)
    crlb: float = Field(..., description="1/(nu F); infinite when F = 0")

    @property
    def ratio(self) -> float:
        if math.isinf(self.crlb):
            return 0.0
        return self.msd / self.crlb

    def summary_text(self) -> str:
        lines = [
            f"X_true = {self.x_true!r}",
            f"nu = {self.nu}",
            f"trials = {self.trials}",
            f"seed = {self.seed}",
            f"moe = {self.moe!r} +- {self.moe_error!r}",
            f"domoe = {self.domoe!r}",
            f"msd = {self.msd!r}",
            f"fisher = {self.fisher_information!r}",
            f"crlb = {self.crlb!r}",
            f"msd/crlb = {self.ratio!r}",
        ]
        return "\n".join(lines) + "\n"


def _family_row(scenario: ScenarioConfig, state0: ManyBodyState, p4: float) -> np.ndarray:
    method = scenario.family.method
    t = scenario.family.t_measure
    N = scenario.N
    if method is FamilyMethod.TMI:
        tilted = quenched(state0, scenario.trap, p4)
        params = bose_hubbard_params(
            tilted.grid,
            tilted.orbitals[0],
            tilted.orbitals[1],
            tilted.potential,
            tilted.g,
            N,
        )
        C2, _ = project_two_mode(state0.C, state0.basis)
        evolved = tmi_evolve(C2, params.eps, params.U, t)
        return np.abs(evolved) ** 2

    config = scenario.evolution.to_config(
        t_final=t, sample_stride=max(1, int(round(t / scenario.evolution.dt)))
    )
    final, log = evolve(quenched(state0, scenario.trap, p4), config)
    worst = min(log.rho_tm)
    if worst < RHO_TM_FLOOR:
        logger.warning(f"rho_tm fell to {worst:.4f} at p4={p4}; two-mode reading degraded")
    C2, outside = project_two_mode(final.C, final.basis)
    sp = side_probabilities(final.orbitals, final.grid)
    return outcome_distribution(C2, sp, N, outside_mass=outside).as_array()


def build_family(
    scenario: ScenarioConfig, p4_grid: Optional[Sequence[float]] = None
) -> LikelihoodFamily:
    """
    Tabulate the outcome distribution at time ``family.t_measure`` over the p4 grid.

    SC rows come from a full evolution per grid point; TMI rows from phase-only
    evolution read out as |C_k|^2.
    """
    grid: Grid = scenario.grid.build()
    p4 = np.asarray(scenario.family.p4_grid() if p4_grid is None else p4_grid, dtype=float)
    state0 = prepare_initial_state(
        grid, scenario.trap, scenario.N, scenario.M, scenario.g, scenario.state_kind
    )
    logger.info(
        f"Building {scenario.family.method.value} family over {p4.size} p4 values "
        f"at t={scenario.family.t_measure}"
    )
    rows = map_parallel(lambda value: _family_row(scenario, state0, float(value)), list(p4))
    metadata = {
        "t": scenario.family.t_measure,
        "N": scenario.N,
        "gn": scenario.gn,
        "state_kind": scenario.state_kind.value,
        "method": scenario.family.method.value,
        "dt": scenario.evolution.dt,
        "half_width": scenario.grid.half_width,
        "n_points": scenario.grid.n_points,
    }
    return LikelihoodFamily(
        p4=p4,
        table=np.vstack(rows),
        metadata=metadata,
        provenance=scenario.config_hash(),
    )


def likelihood_slice(
    family: LikelihoodFamily, outcome: Tuple[int, int]
) -> Tuple[np.ndarray, np.ndarray]:
    """P(outcome | p4) over the family grid."""
    j = outcome_index(outcome[0], outcome[1], family.N)
    return family.p4.copy(), family.table[:, j].copy()


def _refine(
    log_likelihood: np.ndarray,
    index: np.ndarray,
    p4: np.ndarray,
    ties: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Parabolic vertex through the discrete maximum and its neighbours, per row.

    Rows flagged in ``ties`` keep the smallest maximizing grid point.
    """
    estimates = p4[index].astype(np.float64)
    interior = (index > 0) & (index < p4.size - 1)
    if ties is not None:
        interior &= ~ties
    if not np.any(interior):
        return estimates
    rows = np.flatnonzero(interior)
    i = index[rows]
    x0, x1, x2 = p4[i - 1], p4[i], p4[i + 1]
    y0 = log_likelihood[rows, i - 1]
    y1 = log_likelihood[rows, i]
    y2 = log_likelihood[rows, i + 1]
    numerator = (x1 - x0) ** 2 * (y1 - y2) - (x1 - x2) ** 2 * (y1 - y0)
    denominator = (x1 - x0) * (y1 - y2) - (x1 - x2) * (y1 - y0)
    usable = np.abs(denominator) > 0.0
    shift = np.zeros_like(x1)
    shift[usable] = -0.5 * numerator[usable] / denominator[usable]
    shift = np.clip(shift, -0.5 * (x1 - x0), 0.5 * (x2 - x1))
    estimates[rows] = x1 + shift
    return estimates


def _pooled_estimates(family: LikelihoodFamily, counts: np.ndarray) -> np.ndarray:
    """MLE for each row of an (n, N + 1) count matrix."""
    counts = np.atleast_2d(np.asarray(counts, dtype=np.float64))
    observed = counts.sum(axis=0) > 0
    if np.all(np.ptp(family.table[:, observed], axis=0) < FLAT_TOLERANCE):
        raise NoInformationError(
            "Likelihood is flat in p4 for the observed outcomes; no estimate exists"
        )
    log_likelihood = counts @ family.log_table().T
    index = np.argmax(log_likelihood, axis=1)
    ties = np.sum(log_likelihood == log_likelihood.max(axis=1, keepdims=True), axis=1) > 1
    if np.any(ties):
        logger.debug(f"{int(ties.sum())} estimates had tied maxima; smallest p4 taken")
    return _refine(log_likelihood, index, family.p4, ties)


def mle_estimate_counts(counts: Sequence[int], family: LikelihoodFamily) -> float:
    """MLE from outcome counts of nu i.i.d. shots (product likelihood)."""
    vector = np.asarray(counts, dtype=np.float64)
    if vector.shape != (family.N + 1,) or np.any(vector < 0) or vector.sum() < 1:
        raise ConfigError(
            f"Counts must be {family.N + 1} non-negative numbers with a positive total"
        )
    log_likelihood = family.log_table() @ vector
    best = np.flatnonzero(log_likelihood == log_likelihood.max())
    if best.size > 1:
        logger.warning(
            f"Degenerate likelihood maximum at p4={family.p4[best].tolist()}; "
            f"taking the smallest"
        )
    return float(_pooled_estimates(family, vector[None, :])[0])


def mle_estimate(outcome: Tuple[int, int], family: LikelihoodFamily) -> float:
    """
    argmax_p4 P(outcome | p4) with parabolic refinement of the log-likelihood.

    Raises:
        NoInformationError: when the likelihood varies by less than 1e-12
    """
    j = outcome_index(outcome[0], outcome[1], family.N)
    column = family.table[:, j]
    if float(np.ptp(column)) < FLAT_TOLERANCE:
        raise NoInformationError(
            f"Likelihood of outcome {tuple(outcome)} is flat in p4; no estimate exists"
        )
    counts = np.zeros(family.N + 1)
    counts[j] = 1.0
    return mle_estimate_counts(counts, family)


def sample_outcomes(dist: OutcomeDistribution, nu: int, seed: Any) -> np.ndarray:
    """Multinomial counts of ``nu`` shots, reproducible from ``seed``."""
    if nu < 1:
        raise ConfigError(f"Shot number must be >= 1, got {nu}")
    rng = np.random.default_rng(seed)
    return rng.multinomial(nu, dist.as_array())


def _trial_counts(dist: OutcomeDistribution, nu: int, trials: int, seed: int) -> np.ndarray:
    """(trials, N + 1) counts; chunk seeds derive from (seed, nu) only."""
    chunks = [
        (start, min(TRIAL_CHUNK, trials - start)) for start in range(0, trials, TRIAL_CHUNK)
    ]
    children = np.random.SeedSequence([seed, nu]).spawn(len(chunks))
    probabilities = dist.as_array()

    def draw(item: Tuple[int, Tuple[int, int]]) -> np.ndarray:
        position, (_, size) = item
        rng = np.random.default_rng(children[position])
        return rng.multinomial(nu, probabilities, size=size)

    return np.vstack(map_parallel(draw, list(enumerate(chunks))))


def cramer_rao_bound(fisher_information: float, nu: int) -> float:
    """1/(nu F), or infinity when F <= 0."""
    if nu < 1:
        raise ConfigError(f"Shot number must be >= 1, got {nu}")
    if not fisher_information > 0.0:
        return math.inf
    return 1.0 / (nu * fisher_information)


def _single_shot_estimates(family: LikelihoodFamily) -> np.ndarray:
    """X_est per outcome j; NaN for outcomes whose likelihood is flat."""
    estimates = np.full(family.N + 1, np.nan)
    for j in range(family.N + 1):
        if float(np.ptp(family.table[:, j])) < FLAT_TOLERANCE:
            continue
        counts = np.zeros((1, family.N + 1))
        counts[0, j] = 1.0
        estimates[j] = _pooled_estimates(family, counts)[0]
    return estimates


def _estimate_moments(
    family: LikelihoodFamily,
    index: int,
    nu: int,
    trials: int,
    seed: int,
    single_shot: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """Estimates and their weights at grid point ``index``."""
    weights = family.table[index]
    if nu == 1:
        relevant = weights > NEGLIGIBLE_WEIGHT
        if np.any(np.isnan(single_shot[relevant])):
            raise NoInformationError(
                f"Outcomes with weight at p4={family.p4[index]} carry no information"
            )
        kept = weights[relevant]
        return single_shot[relevant], kept / kept.sum()
    counts = _trial_counts(family.distribution(index), nu, trials, seed)
    estimates = _pooled_estimates(family, counts)
    return estimates, np.full(estimates.size, 1.0 / estimates.size)


def _family_fisher(family: LikelihoodFamily, index: int) -> float:
    """CFI at a grid point from neighbouring rows; one-sided at the edges."""
    lower = max(index - 1, 0)
    upper = min(index + 1, family.size - 1)
    step = float(family.p4[upper] - family.p4[lower])
    report = cfi(
        family.distribution(upper),
        family.distribution(lower),
        family.distribution(index),
        0.5 * step,
    )
    return report.value


def estimator_statistics(
    family: LikelihoodFamily,
    x_true: float,
    nu: int,
    trials: int,
    seed: int,
    fisher_information: Optional[float] = None,
) -> EstimationReport:
    """
    Mean, slope and rescaled mean-square deviation of the MLE at ``x_true``.

    nu = 1 uses the exact expectation over outcomes; nu > 1 uses ``trials``
    Monte Carlo repetitions with seeds derived from (seed, nu). The slope of
    the mean comes from the neighbouring grid points. Without an explicit
    Fisher information the CFI of the family at ``x_true`` is used.
    """
    if nu < 1:
        raise ConfigError(f"Shot number must be >= 1, got {nu}")
    if nu > 1 and trials < 2:
        raise ConfigError(f"Monte Carlo needs at least 2 trials, got {trials}")
    if family.size < 2:
        raise ConfigError("Family grid needs at least two points for the estimator slope")
    if family.is_flat():
        raise NoInformationError("Likelihood family is flat in p4; no estimate exists")
    index = family.index_of(x_true)
    single_shot = _single_shot_estimates(family)

    def moments(i: int) -> Tuple[np.ndarray, np.ndarray]:
        return _estimate_moments(family, i, nu, trials, seed, single_shot)

    lower = max(index - 1, 0)
    upper = min(index + 1, family.size - 1)
    neighbour_means = {}
    for i in sorted({lower, upper}):
        estimates, weights = moments(i)
        neighbour_means[i] = float(np.dot(weights, estimates))
    domoe = abs(neighbour_means[upper] - neighbour_means[lower]) / float(
        family.p4[upper] - family.p4[lower]
    )

    estimates, weights = moments(index)
    moe = float(np.dot(weights, estimates))
    moe_error = 0.0
    if nu > 1:
        moe_error = float(np.std(estimates, ddof=1) / math.sqrt(estimates.size))
    x = float(family.p4[index])
    if domoe > 0.0:
        msd = float(np.dot(weights, (estimates / domoe - x) ** 2))
    else:
        logger.warning(f"Estimator mean has zero slope at X={x}; msd is infinite")
        msd = math.inf

    fisher = fisher_information
    if fisher is None:
        fisher = _family_fisher(family, index)
    crlb = cramer_rao_bound(fisher, nu)
    outcomes = [(family.N - j, j, float(v)) for j, v in enumerate(single_shot)]
    report = EstimationReport(
        x_true=x,
        nu=nu,
        trials=0 if nu == 1 else trials,
        seed=seed,
        mle_table=outcomes,
        moe=moe,
        moe_error=moe_error,
        domoe=domoe,
        msd=msd,
        fisher_information=max(fisher, 0.0),
        crlb=crlb,
    )
    logger.info(
        f"nu={nu}: moe={moe:.5f}, domoe={domoe:.4f}, msd={msd:.4e}, "
        f"crlb={crlb:.4e}, ratio={report.ratio:.4f}"
    )
    return report


def estimator_sweep(
    family: LikelihoodFamily,
    x_true: float,
    nu_list: Sequence[int],
    trials: int,
    seed: int,
    fisher_information: Optional[float] = None,
) -> List[EstimationReport]:
    return [
        estimator_statistics(family, x_true, nu, trials, seed, fisher_information)
        for nu in nu_list
    ]


def bias_profile(family: LikelihoodFamily) -> np.ndarray:
    """|<X_est>_X - X| for every grid value, single-shot exact expectation."""
    single_shot = _single_shot_estimates(family)
    bias = np.full(family.size, np.nan)
    for i in range(family.size):
        weights = family.table[i]
        relevant = (weights > NEGLIGIBLE_WEIGHT) & ~np.isnan(single_shot)
        if not np.any(relevant):
            continue
        kept = weights[relevant] / weights[relevant].sum()
        bias[i] = abs(float(np.dot(kept, single_shot[relevant])) - float(family.p4[i]))
    finite = bias[np.isfinite(bias)]
    monotone = bool(np.all(np.diff(finite) >= 0.0)) if finite.size > 1 else True
    logger.info(
        f"Bias ranges {np.nanmin(bias) if finite.size else float('nan'):.4g} to "
        f"{np.nanmax(bias) if finite.size else float('nan'):.4g}; "
        f"non-decreasing in p4: {monotone}"
    )
    return bias


def family_hash(family: LikelihoodFamily) -> str:
    """Digest of the tabulated probabilities."""
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(family.p4).tobytes())
    digest.update(np.ascontiguousarray(family.table).tobytes())
    return digest.hexdigest()
