"""
selfmetro: self-consistent many-body metrology for bosons in a tilted double well.

Multiconfigurational time-dependent Hartree dynamics of N bosons, quantum and
classical Fisher information of the tilt, and maximum-likelihood estimation
from left/right particle counts.
"""

__version__ = "0.1.0"

from .core.errors import (
    ConfigError,
    GuardViolationError,
    NoInformationError,
    NumericalError,
    SelfMetroError,
    StepSizeError,
)
from .core.estimation import (
    EstimationReport,
    LikelihoodFamily,
    build_family,
    estimator_statistics,
    mle_estimate,
)
from .core.mctdh import EvolutionConfig, ManyBodyState, evolve, prepare_initial_state
from .core.metrology import FisherReport, cfi, qfi_pure_state
from .core.observability import RunRecorder
from .core.pipeline import ScenarioPipeline, StageBinding, StageType
from .core.run_state import RunState
from .core.scenario import ScenarioConfig, load_scenario

__all__ = [
    "ConfigError",
    "GuardViolationError",
    "NoInformationError",
    "NumericalError",
    "SelfMetroError",
    "StepSizeError",
    "EstimationReport",
    "LikelihoodFamily",
    "build_family",
    "estimator_statistics",
    "mle_estimate",
    "EvolutionConfig",
    "ManyBodyState",
    "evolve",
    "prepare_initial_state",
    "FisherReport",
    "cfi",
    "qfi_pure_state",
    "RunRecorder",
    "ScenarioPipeline",
    "StageBinding",
    "StageType",
    "RunState",
    "ScenarioConfig",
    "load_scenario",
]
