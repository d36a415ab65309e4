"""Numerical kernels, configuration, guards, recorder and pipeline."""

from .guards import GuardConfig, GuardEngine, GuardRule, default_guards
from .observability import RunRecorder
from .pipeline import ScenarioPipeline, StageBinding, StageType
from .run_state import RunState
from .scenario import ScenarioConfig, load_scenario

__all__ = [
    "GuardConfig",
    "GuardEngine",
    "GuardRule",
    "default_guards",
    "RunRecorder",
    "ScenarioPipeline",
    "StageBinding",
    "StageType",
    "RunState",
    "ScenarioConfig",
    "load_scenario",
]
