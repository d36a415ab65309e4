"""Scenario legs

Prebuilt stages of a reproduction run: PREPARE -> EVOLVE -> FISHER -> FAMILY
-> ESTIMATE. Each leg reads a ``ScenarioConfig``, writes its CSVs under
``scenario.output_dir`` and returns the paths it wrote. ``build_full_pipeline``
wires all five into a ``ScenarioPipeline``.
"""

import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..core.errors import ConfigError, NoInformationError
from ..core.estimation import (
    LikelihoodFamily,
    bias_profile,
    build_family,
    estimator_sweep,
    likelihood_slice,
    mle_estimate,
)
from ..core.fock import StateKind, density_data, project_two_mode
from ..core.grid import (
    eval_potential,
    localized_orbitals,
    lowest_eigenstates,
    parity_expectation,
)
from ..core.guards import GuardEngine, default_guards
from ..core.io import (
    plot_csv,
    read_csv,
    read_sidecar,
    write_csv,
    write_sidecar,
    write_text,
)
from ..core.likelihood import (
    OutcomeDistribution,
    outcome_distribution,
    side_probabilities,
)
from ..core.mctdh import (
    TRAJECTORY_COLUMNS,
    ManyBodyState,
    evolve,
    prepare_initial_state,
    quenched,
)
from ..core.metrology import (
    FisherMethod,
    FisherReport,
    cfi,
    cfi_exceeds_check,
    fidelity_qfi,
    parameter_derivatives,
    qfi_pure_state,
)
from ..core.observability import RunRecorder
from ..core.parallel import map_parallel
from ..core.pipeline import ScenarioPipeline, StageBinding, StageType
from ..core.run_state import RunState
from ..core.scenario import FamilyMethod, ScenarioConfig
from ..core.two_mode import (
    bose_hubbard_params,
    chain_rule_qfi,
    dipole_difference,
    tmi_evolve,
    tmi_qfi_analytic,
)

logger = logging.getLogger(__name__)

STATE_KINDS = (StateKind.CAT, StateKind.COHERENT)
FISHER_COLUMNS = (
    "qfi_sc",
    "qfi_tmi_analytic",
    "cfi_sc",
    "cfi_tmi",
    "state_kind",
    "qfi_truncated",
    "qfi_fidelity",
    "cfi_within_qfi",
)


class LegContext(BaseModel):
    """Shared services of the legs of one run."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    recorder: Optional[RunRecorder] = None
    guards: Optional[GuardEngine] = None
    run_id: Optional[str] = None
    stage_id: str = "run"
    plots: bool = False
    results: Dict[str, Any] = Field(default_factory=dict)


def _context(context: Optional[LegContext]) -> LegContext:
    if context is not None:
        return context
    return LegContext(guards=GuardEngine(default_guards()))


def _tag(value: float) -> str:
    return f"{value:g}".replace("-", "m")


def _output_dir(scenario: ScenarioConfig) -> Path:
    path = Path(scenario.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _evolve(
    state: ManyBodyState,
    scenario: ScenarioConfig,
    context: LegContext,
    t_final: float,
    sample_stride: int,
    keep_states: bool = False,
) -> Tuple[ManyBodyState, Any]:
    config = scenario.evolution.to_config(
        t_final=t_final, sample_stride=sample_stride, keep_states=keep_states
    )
    return evolve(
        state,
        config,
        guards=context.guards,
        recorder=context.recorder,
        stage_id=context.stage_id,
        run_id=context.run_id,
    )


def run_prepare(
    scenario: ScenarioConfig, context: Optional[LegContext] = None
) -> List[Path]:
    """
    Eigenpairs of the untilted trap and the initial orbitals.

    Writes ``eigenpairs.csv`` (index, energy, parity) and one
    ``orbital_<k>.csv`` (x, re, im) per mode.
    """
    context = _context(context)
    out = _output_dir(scenario)
    config_hash = scenario.config_hash()
    grid = scenario.grid.build()
    count = max(2, scenario.M)

    untilted = eval_potential(scenario.trap.with_tilt(0.0), grid)
    eigenpairs = lowest_eigenstates(grid, untilted, count)
    energies = [energy for energy, _ in eigenpairs]
    logger.info(f"Lowest {count} single-particle energies: {energies}")
    phi_left, phi_right = localized_orbitals(grid, eigenpairs[0][1], eigenpairs[1][1])
    logger.info(
        f"Lowest doublet splitting {energies[1] - energies[0]:.6e}; "
        f"|<x>_L - <x>_R| = {abs(dipole_difference(grid, phi_left, phi_right)):.6f}"
    )

    rows = [
        [index, energy, parity_expectation(grid, psi)]
        for index, (energy, psi) in enumerate(eigenpairs)
    ]
    header = ["index", "energy", "parity"]
    paths = [write_csv(out / "eigenpairs.csv", header, rows, config_hash)]

    state = prepare_initial_state(
        grid, scenario.trap, scenario.N, scenario.M, scenario.g, scenario.state_kind
    )
    x = grid.nodes
    for k in range(state.M):
        phi = state.orbitals[k]
        rows = [[x[i], phi[i].real, phi[i].imag] for i in range(grid.n_points)]
        paths.append(
            write_csv(
                out / f"orbital_{k + 1}.csv", ["x", "re", "im"], rows, config_hash
            )
        )
    context.results["energies"] = energies
    return paths


def run_evolve(
    scenario: ScenarioConfig, context: Optional[LegContext] = None
) -> List[Path]:
    """
    Trajectories of both input states for every gN of ``evolution.gn_sweep``,
    with ``evolution.M`` orbitals so the two-mode fraction can fall below one.

    Writes ``trajectory_<kind>_gn<gN>.csv`` with the monitor columns.
    """
    context = _context(context)
    out = _output_dir(scenario)
    config_hash = scenario.config_hash()
    grid = scenario.grid.build()
    legs = [(kind, gn) for gn in scenario.evolution.gn_sweep for kind in STATE_KINDS]

    def leg(item: Tuple[StateKind, float]) -> Tuple[StateKind, float, Any]:
        kind, gn = item
        g = scenario.coupling_for(scenario.N, gn)
        state = prepare_initial_state(
            grid, scenario.trap, scenario.N, scenario.evolution.M, g, kind
        )
        _, log = _evolve(
            state,
            scenario,
            context,
            scenario.evolution.t_final,
            scenario.evolution.sample_stride,
        )
        return kind, gn, log

    paths = []
    minima: Dict[str, float] = {}
    for kind, gn, log in map_parallel(leg, legs):
        name = f"trajectory_{kind.value}_gn{_tag(gn)}"
        path = write_csv(
            out / f"{name}.csv", TRAJECTORY_COLUMNS, log.rows(), config_hash
        )
        paths.append(path)
        minima[name] = min(log.rho_tm)
        logger.info(f"{name}: min rho_tm = {minima[name]:.6f}")
        if context.plots:
            chart = plot_csv(path, "t", ["rho_tm"], title=name)
            if chart is not None:
                paths.append(chart)
    context.results["min_rho_tm"] = minima
    return paths


def _tmi_distribution(
    C2: np.ndarray, eps: float, U: float, t: float
) -> OutcomeDistribution:
    weights = np.abs(tmi_evolve(C2, eps, U, t)) ** 2
    weights = weights / weights.sum()
    return OutcomeDistribution(probabilities=tuple(float(w) for w in weights))


def _sc_distribution(state: ManyBodyState) -> OutcomeDistribution:
    C2, outside = project_two_mode(state.C, state.basis)
    sp = side_probabilities(state.orbitals, state.grid)
    return outcome_distribution(C2, sp, state.N, outside_mass=outside)


def _record_bound_violation(
    context: LegContext, kind: StateKind, N: int, t: float, qfi: float, cfi_sc: float
) -> None:
    logger.warning(f"CFI above QFI for {kind.value}, N={N} at t={t:.4f}")
    if context.recorder is None:
        return
    context.recorder.record_guard_violation(
        context.stage_id,
        {
            "rule_id": "cfi_within_qfi",
            "passed": False,
            "severity": "warning",
            "state_kind": kind.value,
            "N": N,
            "t": t,
            "qfi_sc": qfi,
            "cfi_sc": cfi_sc,
        },
        run_id=context.run_id,
    )


def fisher_rows(
    scenario: ScenarioConfig,
    kind: StateKind,
    N: int,
    t_final: float,
    sample_stride: int,
    context: Optional[LegContext] = None,
) -> List[Tuple[float, List[Any]]]:
    """
    Fisher values at every sample of trajectories around ``trap.p4``.

    Each row holds the ``FISHER_COLUMNS`` values at time t. The last column
    is false when either CFI exceeds its QFI; such rows are also recorded as
    guard violations.
    """
    context = _context(context)
    grid = scenario.grid.build()
    g = scenario.coupling_for(N)
    p4 = scenario.trap.p4
    dq = scenario.fisher.delta_qfi
    dc = scenario.fisher.delta_cfi
    state0 = prepare_initial_state(grid, scenario.trap, N, scenario.M, g, kind)
    tilts = [p4, p4 + dq, p4 - dq, p4 + dc, p4 - dc]

    def run(tilt: float) -> Any:
        _, log = _evolve(
            quenched(state0, scenario.trap, tilt),
            scenario,
            context,
            t_final,
            sample_stride,
            keep_states=True,
        )
        return log

    center, q_plus, q_minus, c_plus, c_minus = map_parallel(run, tilts)

    d_eps = dipole_difference(grid, state0.orbitals[0], state0.orbitals[1])
    C2, _ = project_two_mode(state0.C, state0.basis)
    tmi_params = [
        bose_hubbard_params(
            grid,
            state0.orbitals[0],
            state0.orbitals[1],
            eval_potential(scenario.trap.with_tilt(tilt), grid),
            g,
            N,
        )
        for tilt in (p4, p4 + dc, p4 - dc)
    ]

    rows = []
    for index, state in enumerate(center.states):
        t = state.t
        deriv = parameter_derivatives(q_plus.states[index], q_minus.states[index], dq)
        density = density_data(state.C, state.basis)
        qfi = qfi_pure_state(
            state, deriv, density, FisherMethod.SC, {"state_kind": kind.value}
        )
        fidelity = fidelity_qfi(q_plus.states[index], q_minus.states[index], dq)
        cfi_sc = cfi(
            _sc_distribution(c_plus.states[index]),
            _sc_distribution(c_minus.states[index]),
            _sc_distribution(state),
            dc,
        )
        dists = [_tmi_distribution(C2, p.eps, p.U, t) for p in tmi_params]
        cfi_tmi = cfi(dists[1], dists[2], dists[0], dc, FisherMethod.TMI)
        analytic = chain_rule_qfi(tmi_qfi_analytic(kind, N, t), d_eps)
        within = cfi_exceeds_check(qfi, cfi_sc) and cfi_exceeds_check(
            FisherReport(value=analytic, method=FisherMethod.TMI), cfi_tmi
        )
        if not within:
            _record_bound_violation(context, kind, N, t, qfi.value, cfi_sc.value)
        rows.append(
            (
                t,
                [
                    qfi.value,
                    analytic,
                    cfi_sc.value,
                    cfi_tmi.value,
                    kind.value,
                    qfi.metadata["decomposition"]["truncated"],
                    fidelity.value,
                    within,
                ],
            )
        )
    return rows


def run_fisher(
    scenario: ScenarioConfig, context: Optional[LegContext] = None
) -> List[Path]:
    """
    QFI and CFI against t and against N, SC and TMI, for both input states.

    Writes ``fisher_t_<kind>.csv`` and ``fisher_n_<kind>.csv``.
    """
    context = _context(context)
    out = _output_dir(scenario)
    config_hash = scenario.config_hash()
    dt = scenario.evolution.dt
    stride = max(1, int(round(scenario.fisher.t_step / dt)))
    n_sweep_steps = max(1, int(round(scenario.fisher.t_n_sweep / dt)))

    paths = []
    summary: Dict[str, Any] = {}
    for kind in STATE_KINDS:
        rows = fisher_rows(
            scenario, kind, scenario.N, scenario.fisher.t_max, stride, context
        )
        path = write_csv(
            out / f"fisher_t_{kind.value}.csv",
            ["t", *FISHER_COLUMNS],
            [[t, *values] for t, values in rows],
            config_hash,
        )
        paths.append(path)
        summary[f"max_cfi_sc_{kind.value}"] = max(values[2] for _, values in rows)
        summary[f"cfi_bound_violations_{kind.value}"] = sum(
            1 for _, values in rows if not values[-1]
        )

        def n_leg(N: int, kind: StateKind = kind) -> List[Any]:
            t, values = fisher_rows(
                scenario, kind, N, scenario.fisher.t_n_sweep, n_sweep_steps, context
            )[-1]
            return [N, *values]

        n_rows = [n_leg(N) for N in scenario.fisher.n_values]
        n_path = write_csv(
            out / f"fisher_n_{kind.value}.csv",
            ["N", *FISHER_COLUMNS],
            n_rows,
            config_hash,
        )
        paths.append(n_path)
        if context.plots:
            for csv_path, x in ((path, "t"), (n_path, "N")):
                chart = plot_csv(
                    csv_path, x, ["qfi_sc", "qfi_tmi_analytic", "cfi_sc", "cfi_tmi"]
                )
                if chart is not None:
                    paths.append(chart)
    context.results.update(summary)
    return paths


def _family_paths(scenario: ScenarioConfig) -> Tuple[Path, Path]:
    out = Path(scenario.output_dir)
    stem = f"family_{scenario.family.method.value}"
    return out / f"{stem}.csv", out / f"{stem}.meta"


def save_family(family: LikelihoodFamily, scenario: ScenarioConfig) -> List[Path]:
    csv_path, meta_path = _family_paths(scenario)
    header = ["p4", *[f"P_{j}" for j in range(family.N + 1)]]
    rows = [
        [float(p), *[float(v) for v in row]] for p, row in zip(family.p4, family.table)
    ]
    write_csv(csv_path, header, rows, family.provenance)
    write_sidecar(meta_path, family.metadata, family.provenance)
    return [csv_path, meta_path]


def load_family(scenario: ScenarioConfig) -> Optional[LikelihoodFamily]:
    """The persisted family of this scenario, or None when absent or stale."""
    csv_path, meta_path = _family_paths(scenario)
    if not csv_path.exists():
        return None
    config_hash, _, rows = read_csv(csv_path)
    if config_hash != scenario.config_hash():
        logger.info(f"Ignoring {csv_path}: written for another configuration")
        return None
    values = np.array([[float(v) for v in row] for row in rows])
    metadata: Dict[str, Any] = {}
    if meta_path.exists():
        sidecar = read_sidecar(meta_path)
        metadata = {k: v for k, v in sidecar.items() if k != "config_hash"}
    logger.info(f"Reusing family {csv_path} ({values.shape[0]} grid points)")
    return LikelihoodFamily(
        p4=values[:, 0], table=values[:, 1:], metadata=metadata, provenance=config_hash
    )


def run_family(
    scenario: ScenarioConfig, context: Optional[LegContext] = None
) -> List[Path]:
    """
    Likelihood family over the p4 grid at ``family.t_measure``.

    Writes ``family_<method>.csv`` (p4, P_0..P_N), its ``.meta`` sidecar and
    the outcome distribution at ``estimation.x_true``.
    """
    context = _context(context)
    out = _output_dir(scenario)
    family = build_family(scenario)
    paths = save_family(family, scenario)

    index = int(np.argmin(np.abs(family.p4 - scenario.estimation.x_true)))
    dist = family.distribution(index)
    rows = [[nl, nr, p] for (nl, nr), p in zip(dist.outcomes(), dist.probabilities)]
    method = scenario.family.method.value
    paths.append(
        write_csv(
            out / f"outcomes_{method}_p4_{_tag(float(family.p4[index]))}.csv",
            ["nL", "nR", "probability"],
            rows,
            family.provenance,
        )
    )
    context.results["family_points"] = family.size
    return paths


def run_estimate(
    scenario: ScenarioConfig, context: Optional[LegContext] = None
) -> List[Path]:
    """
    MLE of the configured outcome and estimator statistics over ``nu_list``.

    Writes the likelihood slice, the single-shot MLE table, the estimation
    CSV with a text summary and the bias profile. A flat family writes the
    slice with ``no_information = true`` and raises ``NoInformationError``.
    """
    context = _context(context)
    out = _output_dir(scenario)
    config_hash = scenario.config_hash()
    family = load_family(scenario)
    paths: List[Path] = []
    if family is None:
        family = build_family(scenario)
        paths.extend(save_family(family, scenario))

    n_left, n_right = scenario.estimation.outcome
    method = scenario.family.method.value
    stem = f"likelihood_{method}_{n_left}_{n_right}"
    p4, values = likelihood_slice(family, (n_left, n_right))
    slice_path = write_csv(
        out / f"{stem}.csv", ["p4", "likelihood"], list(zip(p4, values)), config_hash
    )
    paths.append(slice_path)
    if context.plots:
        chart = plot_csv(slice_path, "p4", ["likelihood"])
        if chart is not None:
            paths.append(chart)

    try:
        x_est = mle_estimate((n_left, n_right), family)
    except NoInformationError:
        paths.append(
            write_sidecar(
                out / f"{stem}.meta",
                {"outcome": f"{n_left},{n_right}", "no_information": True},
                config_hash,
            )
        )
        context.results["no_information"] = True
        raise
    paths.append(
        write_sidecar(
            out / f"{stem}.meta",
            {"outcome": f"{n_left},{n_right}", "no_information": False, "x_est": x_est},
            config_hash,
        )
    )
    logger.info(f"MLE for outcome ({n_left},{n_right}): p4 = {x_est:.5f}")
    context.results["x_est"] = x_est

    est = scenario.estimation
    reports = estimator_sweep(family, est.x_true, est.nu_list, est.trials, est.seed)
    header = [
        "nu",
        "trials",
        "seed",
        "x_true",
        "moe",
        "moe_error",
        "domoe",
        "msd",
        "crlb",
        "ratio",
        "fisher",
    ]
    rows = [
        [
            r.nu,
            r.trials,
            r.seed,
            r.x_true,
            r.moe,
            r.moe_error,
            r.domoe,
            r.msd,
            r.crlb,
            r.ratio,
            r.fisher_information,
        ]
        for r in reports
    ]
    estimation_path = write_csv(
        out / f"estimation_{method}.csv", header, rows, config_hash
    )
    paths.append(estimation_path)
    paths.append(
        write_text(
            out / f"estimation_{method}.txt",
            "\n".join(r.summary_text() for r in reports),
        )
    )
    paths.append(
        write_csv(
            out / f"mle_table_{method}.csv",
            ["nL", "nR", "x_est"],
            reports[0].mle_table,
            config_hash,
        )
    )
    bias = bias_profile(family)
    paths.append(
        write_csv(
            out / f"bias_{method}.csv",
            ["p4", "bias"],
            [[float(p), float(b)] for p, b in zip(family.p4, bias)],
            config_hash,
        )
    )
    if context.plots:
        chart = plot_csv(estimation_path, "nu", ["msd", "crlb"], logx=True, logy=True)
        if chart is not None:
            paths.append(chart)
    context.results["ratios"] = {r.nu: r.ratio for r in reports}
    return paths


LEGS: Dict[StageType, Callable[[ScenarioConfig, Optional[LegContext]], List[Path]]] = {
    StageType.PREPARE: run_prepare,
    StageType.EVOLVE: run_evolve,
    StageType.FISHER: run_fisher,
    StageType.FAMILY: run_family,
    StageType.ESTIMATE: run_estimate,
}


def _binding(
    stage_type: StageType, recorder: RunRecorder, guards: GuardEngine, plots: bool
) -> StageBinding:
    stage_id = stage_type.value.lower()
    leg = LEGS[stage_type]

    def implementation(scenario: ScenarioConfig, state: RunState) -> List[Path]:
        context = LegContext(
            recorder=recorder,
            guards=guards,
            run_id=state.metadata.run_id,
            stage_id=stage_id,
            plots=plots,
        )
        try:
            return leg(scenario, context)
        finally:
            state.update_results({stage_id: context.results})

    return StageBinding(
        id=stage_id,
        stage_type=stage_type,
        implementation=implementation,
        description=(leg.__doc__ or "").strip().splitlines()[0],
    )


def build_full_pipeline(
    scenario: ScenarioConfig,
    recorder: Optional[RunRecorder] = None,
    guards: Optional[GuardEngine] = None,
    plots: bool = False,
    stages: Sequence[StageType] = tuple(StageType),
) -> ScenarioPipeline:
    """Chain the requested stages, in order, into one pipeline."""
    if not stages:
        raise ConfigError("At least one stage is required")
    pipeline = ScenarioPipeline(scenario, recorder=recorder)
    engine = guards if guards is not None else GuardEngine(default_guards())
    ids = []
    for stage_type in stages:
        binding = _binding(stage_type, pipeline.recorder, engine, plots)
        pipeline.add_stage(binding, dependencies=ids[-1:])
        ids.append(binding.id)
    pipeline.set_entry_point(ids[0])
    pipeline.set_finish_point(ids[-1])
    return pipeline
