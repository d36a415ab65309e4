"""Declarative guard rules evaluated against trajectory monitor samples."""

import logging
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

logger = logging.getLogger(__name__)


class GuardMonitor(str, Enum):
    """Monitored quantities a guard rule can bound."""

    NORM_DEFECT = "norm_defect"
    ORTHONORMALITY_DEFECT = "orthonormality_defect"
    TRACE_DEFECT = "trace_defect"
    ENERGY_DRIFT = "energy_drift"
    TWO_MODE_FRACTION = "two_mode_fraction"


class GuardAction(str, Enum):
    LOG = "LOG"
    WARN = "WARN"
    ABORT = "ABORT"


class GuardRule(BaseModel):
    """Individual guard rule definition."""

    model_config = ConfigDict(extra="forbid")

    rule_id: str = Field(..., description="Unique identifier for this rule")
    monitor: GuardMonitor = Field(..., description="Monitored quantity")
    description: str = Field(default="", description="Human-readable description")

    bound: float = Field(..., description="Threshold the monitor is compared with")
    comparison: str = Field(
        default="max",
        pattern="^(max|min)$",
        description="max: value <= bound, min: value >= bound",
    )

    action: GuardAction = Field(default=GuardAction.WARN, description="Action on violation")
    severity: str = Field(
        default="warning", description="Severity level: info, warning, error, critical"
    )
    enabled: bool = Field(default=True, description="Whether this rule is active")
    applies_to: List[str] = Field(
        default_factory=list, description="Stages this rule applies to; empty means all"
    )


class GuardConfig(BaseModel):
    """Configuration for the guard engine."""

    model_config = ConfigDict(extra="forbid")

    guard_id: str = Field(..., description="Unique identifier for this guard set")
    description: str = Field(default="", description="Human-readable description")
    rules: List[GuardRule] = Field(default_factory=list, description="Guard rules")
    strict_mode: bool = Field(
        default=False, description="Whether any failed rule stops the run"
    )

    def get_rule_by_id(self, rule_id: str) -> Optional[GuardRule]:
        for rule in self.rules:
            if rule.rule_id == rule_id:
                return rule
        return None


class GuardEngine:
    """Evaluates guard rules over monitor samples of a stage."""

    def __init__(self, config: GuardConfig):
        self.config = config
        self._comparators: Dict[str, Callable[[float, float], bool]] = {
            "max": lambda value, bound: value <= bound,
            "min": lambda value, bound: value >= bound,
        }
        self._applies_map: Dict[str, List[GuardRule]] = {}
        self._compile_rule_caches()

    def _compile_rule_caches(self) -> None:
        applies: Dict[str, List[GuardRule]] = {}
        for rule in self.config.rules:
            if not rule.enabled:
                continue
            for stage in rule.applies_to or ["*"]:
                applies.setdefault(stage, []).append(rule)
        self._applies_map = applies

    def rules_for(self, stage: str) -> List[GuardRule]:
        return list(self._applies_map.get(stage, [])) + list(self._applies_map.get("*", []))

    def evaluate(self, stage: str, sample: Dict[str, Any]) -> List[Dict[str, Any]]:
        """
        Evaluate all applicable rules against one monitor sample.

        Rules whose monitor is absent from the sample are skipped.

        Returns:
            List of rule evaluation results
        """
        results = []
        for rule in self.rules_for(stage):
            key = rule.monitor.value
            if key not in sample or sample[key] is None:
                continue
            value = float(sample[key])
            passed = self._comparators[rule.comparison](value, rule.bound)
            results.append(
                {
                    "rule_id": rule.rule_id,
                    "monitor": key,
                    "value": value,
                    "bound": rule.bound,
                    "passed": passed,
                    "severity": rule.severity,
                    "action": rule.action.value if not passed else None,
                    "t": sample.get("t"),
                }
            )
        return results

    def should_continue(
        self, stage: str, sample: Dict[str, Any]
    ) -> Tuple[bool, List[Dict[str, Any]]]:
        """
        Decide whether the stage may continue after this sample.

        Returns:
            Tuple of (allowed, evaluation_results)
        """
        results = self.evaluate(stage, sample)
        failures = [r for r in results if not r["passed"]]
        for failure in failures:
            message = (
                f"Guard {failure['rule_id']} failed at t={failure['t']}: "
                f"{failure['monitor']}={failure['value']:.3e} "
                f"(bound {failure['bound']:.3e})"
            )
            if failure["action"] == GuardAction.LOG.value:
                logger.info(message)
            else:
                logger.warning(message)

        if any(
            r["action"] == GuardAction.ABORT.value or r["severity"] == "critical"
            for r in failures
        ):
            return False, results
        if self.config.strict_mode and failures:
            return False, results
        return True, results


def default_guards(two_mode_floor: float = 0.98) -> GuardConfig:
    """Conservation and two-mode validity checks applied to every trajectory."""
    return GuardConfig(
        guard_id="conservation",
        description="Norm, orthonormality, trace and energy conservation",
        rules=[
            GuardRule(
                rule_id="norm",
                monitor=GuardMonitor.NORM_DEFECT,
                bound=1e-8,
                description="Coefficient norm defect before correction",
            ),
            GuardRule(
                rule_id="orthonormality",
                monitor=GuardMonitor.ORTHONORMALITY_DEFECT,
                bound=1e-8,
                description="Orbital Gram defect before correction",
            ),
            GuardRule(
                rule_id="trace",
                monitor=GuardMonitor.TRACE_DEFECT,
                bound=1e-10,
                description="trace(rho1) - N",
            ),
            GuardRule(
                rule_id="energy",
                monitor=GuardMonitor.ENERGY_DRIFT,
                bound=1e-6,
                description="Relative energy drift since t=0",
            ),
            GuardRule(
                rule_id="two_mode",
                monitor=GuardMonitor.TWO_MODE_FRACTION,
                bound=two_mode_floor,
                comparison="min",
                action=GuardAction.WARN,
                description="Two-mode validity (rho_tm)",
            ),
        ],
    )
