"""Command-line driver for selfmetro scenario runs."""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import click
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table

from ..components.scenario_legs import build_full_pipeline
from ..config import Config
from ..core.errors import SelfMetroError, exit_code_for
from ..core.io import write_text
from ..core.observability import RunRecorder
from ..core.pipeline import StageType
from ..core.run_state import RunState
from ..core.scenario import ScenarioConfig, load_scenario

console = Console()
logger = logging.getLogger(__name__)


def setup_logging(verbose: bool) -> None:
    level = "DEBUG" if verbose else Config.get_logging_config()["level"]
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, rich_tracebacks=False, show_path=verbose)],
        force=True,
    )


def resolve_scenario(options: Dict[str, Any]) -> ScenarioConfig:
    """Config file, then ``--set`` overrides, then the flag shortcuts."""
    overrides: List[str] = list(options["overrides"])
    if options["output_dir"] is not None:
        overrides.append(f"output_dir={options['output_dir']}")
    if options["frozen_orbitals"]:
        overrides.extend(["evolution.frozen_orbitals=true", "family.method=TMI"])
    return load_scenario(options["config_path"], overrides)


def render_summary(state: RunState) -> None:
    table = Table(title="Run summary")
    table.add_column("Stage", style="cyan")
    table.add_column("Seconds", justify="right")
    table.add_column("Files", justify="right")
    table.add_column("Results")
    for stage_id in state.metadata.stage_history:
        results = state.results.get(stage_id, {})
        shown = ", ".join(f"{k}={_short(v)}" for k, v in results.items())
        table.add_row(
            stage_id,
            f"{state.metadata.stage_timings.get(stage_id, 0.0):.2f}",
            str(len(state.artifacts.get(stage_id, []))),
            shown,
        )
    console.print(table)
    if state.metadata.guard_violations:
        console.print(
            f"[yellow]{len(state.metadata.guard_violations)} "
            "guard warnings recorded[/yellow]"
        )


def _short(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, dict):
        return "{" + ", ".join(f"{k}: {_short(v)}" for k, v in value.items()) + "}"
    if isinstance(value, list):
        return "[" + ", ".join(_short(v) for v in value) + "]"
    return str(value)


def run_stages(ctx: click.Context, stages: Sequence[StageType], write_trace: bool) -> None:
    """Run ``stages`` in order and exit with the code of the first failure."""
    options = ctx.obj
    recorder = RunRecorder(**Config.get_observability_config())
    pipeline = None
    try:
        scenario = resolve_scenario(options)
        console.print(
            Panel.fit(
                f"N={scenario.N}  M={scenario.M}  gN={scenario.gn}  "
                f"state={scenario.state_kind.value}  p4={scenario.trap.p4}\n"
                f"output: {scenario.output_dir}  hash: {scenario.config_hash()[:12]}",
                title="selfmetro",
            )
        )
        pipeline = build_full_pipeline(
            scenario, recorder=recorder, plots=options["plots"], stages=stages
        )
        state = pipeline.execute()
        render_summary(state)
    except SelfMetroError as e:
        console.print(f"[bold red]{type(e).__name__}:[/bold red] {e}")
        if pipeline is not None and pipeline.last_state is not None:
            render_summary(pipeline.last_state)
        ctx.exit(exit_code_for(e))
    finally:
        if write_trace and pipeline is not None:
            trace_path = Path(pipeline.scenario.output_dir) / "trace.json"
            write_text(trace_path, pipeline.export_trace())
            console.print(f"Trace written to {trace_path}")


@click.group()
@click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False),
    default=None,
    help="Scenario file (section.key = value lines)",
)
@click.option(
    "--set",
    "overrides",
    multiple=True,
    metavar="KEY=VALUE",
    help="Override a configuration key; repeatable",
)
@click.option("--output-dir", "-o", default=None, help="Directory for CSVs and charts")
@click.option(
    "--frozen-orbitals",
    is_flag=True,
    help="Keep orbitals fixed and build TMI families (two-mode interferometry)",
)
@click.option("--plots", is_flag=True, help="Also write SVG charts")
@click.option("--verbose", "-v", is_flag=True, help="Enable debug logging")
@click.pass_context
def main(
    ctx: click.Context,
    config_path: Optional[str],
    overrides: Sequence[str],
    output_dir: Optional[str],
    frozen_orbitals: bool,
    plots: bool,
    verbose: bool,
) -> None:
    """Self-consistent many-body metrology in a tilted double well."""
    setup_logging(verbose)
    ctx.obj = {
        "config_path": config_path,
        "overrides": overrides,
        "output_dir": output_dir,
        "frozen_orbitals": frozen_orbitals,
        "plots": plots,
    }


@main.command()
@click.pass_context
def prepare(ctx: click.Context) -> None:
    """Eigenpairs and initial orbitals."""
    run_stages(ctx, [StageType.PREPARE], write_trace=False)


@main.command()
@click.pass_context
def evolve(ctx: click.Context) -> None:
    """Two-mode validity trajectories for each gN of the sweep."""
    run_stages(ctx, [StageType.EVOLVE], write_trace=False)


@main.command()
@click.pass_context
def fisher(ctx: click.Context) -> None:
    """QFI and CFI against time and particle number."""
    run_stages(ctx, [StageType.FISHER], write_trace=False)


@main.command()
@click.pass_context
def family(ctx: click.Context) -> None:
    """Likelihood family over the p4 grid."""
    run_stages(ctx, [StageType.FAMILY], write_trace=False)


@main.command()
@click.pass_context
def estimate(ctx: click.Context) -> None:
    """Maximum-likelihood estimate and estimator statistics."""
    run_stages(ctx, [StageType.ESTIMATE], write_trace=False)


@main.command(name="all")
@click.pass_context
def run_all(ctx: click.Context) -> None:
    """prepare -> evolve -> fisher -> family -> estimate, with trace.json."""
    run_stages(ctx, list(StageType), write_trace=True)


if __name__ == "__main__":
    main()
