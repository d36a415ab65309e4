"""Stage pipeline over a langgraph StateGraph."""

import logging
import time
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from langgraph.graph import END, StateGraph
from pydantic import BaseModel, ConfigDict, Field

from .errors import ConfigError
from .observability import RunRecorder
from .run_state import RunState
from .scenario import ScenarioConfig

StageImplementation = Callable[[ScenarioConfig, RunState], List[Path]]


class StageType(str, Enum):
    """Stages of a full reproduction run."""

    PREPARE = "PREPARE"
    EVOLVE = "EVOLVE"
    FISHER = "FISHER"
    FAMILY = "FAMILY"
    ESTIMATE = "ESTIMATE"


class StageBinding(BaseModel):
    """Binds a stage id and type to the callable that produces its artifacts."""

    model_config = ConfigDict(arbitrary_types_allowed=True, extra="forbid")

    id: str = Field(..., description="Unique stage identifier")
    stage_type: StageType = Field(..., description="Kind of stage")
    implementation: Any = Field(..., description="Callable (scenario, state) -> paths")
    description: Optional[str] = Field(default=None)

    def execute(self, scenario: ScenarioConfig, state: RunState) -> List[Path]:
        """
        Run the implementation and validate what it returns.

        Raises:
            ConfigError: if the implementation does not return a list of paths
        """
        result = self.implementation(scenario, state)
        if result is None:
            return []
        if not isinstance(result, (list, tuple)) or not all(
            isinstance(p, (str, Path)) for p in result
        ):
            raise ConfigError(
                f"Stage {self.id} must return a list of paths, got {result!r}"
            )
        return [Path(p) for p in result]


class ScenarioPipeline:
    """
    Runs scenario stages in graph order with recording.

    Each stage node records its start, end, timing and artifacts on the
    ``RunState`` and in the ``RunRecorder``. A failing stage is recorded and
    its exception re-raised out of ``execute``; the state at failure stays
    available as ``last_state``.
    """

    def __init__(
        self,
        scenario: ScenarioConfig,
        recorder: Optional[RunRecorder] = None,
        debug: bool = False,
    ):
        """
        Args:
            scenario: Validated scenario the stages run on
            recorder: Run recorder; a fresh one is created when None
            debug: Re-validate the run state after every stage
        """
        self.scenario = scenario
        self.recorder = recorder if recorder is not None else RunRecorder()
        self.logger = logging.getLogger(__name__)
        self.debug = debug

        self.graph = StateGraph(RunState)
        self.stage_bindings: Dict[str, StageBinding] = {}
        self.run_id: Optional[str] = None
        self.last_state: Optional[RunState] = None

    def _validate_state_if_debug(self, state: RunState) -> None:
        if not self.debug:
            return
        try:
            RunState.from_dict(state.to_dict())
        except Exception as e:
            raise ValueError(f"RunState validation failed (debug mode): {e}") from e

    def add_stage(
        self, binding: StageBinding, dependencies: Optional[List[str]] = None
    ) -> None:
        if binding.id in self.stage_bindings:
            raise ConfigError(f"Stage already registered: {binding.id}")
        self.stage_bindings[binding.id] = binding

        def stage_node(state: RunState) -> Dict[str, Any]:
            return self._execute_stage(binding, state)

        self.graph.add_node(binding.id, stage_node)
        for dep in dependencies or []:
            self.add_edge(dep, binding.id)

    def add_edge(self, from_stage: str, to_stage: str) -> None:
        if from_stage in self.stage_bindings and to_stage in self.stage_bindings:
            self.graph.add_edge(from_stage, to_stage)
        else:
            raise ConfigError(f"One or both stages not found: {from_stage} -> {to_stage}")

    def set_entry_point(self, stage_id: str) -> None:
        if stage_id not in self.stage_bindings:
            raise ConfigError(f"Stage not found: {stage_id}")
        self.graph.set_entry_point(stage_id)

    def set_finish_point(self, stage_id: str) -> None:
        if stage_id not in self.stage_bindings:
            raise ConfigError(f"Stage not found: {stage_id}")
        self.graph.add_edge(stage_id, END)

    def compile(self) -> Any:
        return self.graph.compile()

    def _collect_guard_violations(self, binding: StageBinding, state: RunState) -> None:
        for event in self.recorder.get_stage_trace(binding.id):
            if event.event_type == "guard_violation" and event.run_id == self.run_id:
                state.add_guard_violation(dict(event.data))

    def _execute_stage(self, binding: StageBinding, state: RunState) -> Dict[str, Any]:
        start_time = time.time()
        run_id = state.metadata.run_id
        self.recorder.record_stage_start(binding.id, binding.stage_type.value, run_id)
        state.set_current_stage(binding.id)

        try:
            with self.recorder.span(
                f"stage.{binding.id}", stage_type=binding.stage_type.value
            ):
                paths = binding.execute(self.scenario, state)
        except Exception as e:
            execution_time = time.time() - start_time
            state.record_timing(binding.id, execution_time)
            state.add_error(
                {
                    "stage_id": binding.id,
                    "error": str(e),
                    "error_type": type(e).__name__,
                    "execution_time": execution_time,
                }
            )
            self._collect_guard_violations(binding, state)
            self.recorder.record_error(binding.id, str(e), type(e).__name__, run_id)
            self.recorder.record_stage_end(
                binding.id, False, execution_time, run_id=run_id, error=str(e)
            )
            self.logger.error(f"Stage {binding.id} failed: {e}")
            self.last_state = state
            raise

        execution_time = time.time() - start_time
        state.add_artifacts(binding.id, paths)
        state.record_timing(binding.id, execution_time)
        self._collect_guard_violations(binding, state)
        self.recorder.record_stage_end(
            binding.id,
            True,
            execution_time,
            run_id=run_id,
            artifacts=[str(p) for p in paths],
        )
        self.logger.info(
            f"Stage {binding.id} wrote {len(paths)} files in {execution_time:.2f}s"
        )
        self._validate_state_if_debug(state)
        self.last_state = state
        return state.updates()

    def execute(self, initial_state: Optional[RunState] = None) -> RunState:
        """
        Run the compiled graph from the entry point to the finish point.

        Returns:
            Final run state
        """
        state = initial_state if initial_state is not None else RunState()
        state.metadata.config_hash = self.scenario.config_hash()
        self.run_id = state.metadata.run_id
        self.recorder.record_event(
            "run_start",
            {"run_id": self.run_id, "config_hash": state.metadata.config_hash},
            run_id=self.run_id,
        )

        compiled_graph = self.compile()
        try:
            result = compiled_graph.invoke(state)
        except Exception as e:
            self.recorder.record_error("run", str(e), type(e).__name__, self.run_id)
            raise

        if isinstance(result, dict):
            result = RunState.model_validate(result)
        self.recorder.record_event(
            "run_complete",
            {"run_id": self.run_id, "success": result.is_healthy()},
            run_id=self.run_id,
        )
        self._validate_state_if_debug(result)
        self.last_state = result
        return result

    def get_trace_summary(self, run_id: Optional[str] = None) -> Dict[str, Any]:
        target_id = run_id or self.run_id
        if not target_id:
            return {}
        return self.recorder.get_trace_summary(target_id)

    def export_trace(self, run_id: Optional[str] = None, format: str = "json") -> str:
        target_id = run_id or self.run_id
        if not target_id:
            return "[]"
        return self.recorder.export_trace(target_id, format)
