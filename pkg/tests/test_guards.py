import pytest

from selfmetro.core.errors import (
    ConfigError,
    GridMismatchError,
    GuardViolationError,
    NoInformationError,
    NumericalError,
    StepSizeError,
    exit_code_for,
)
from selfmetro.core.guards import (
    GuardAction,
    GuardConfig,
    GuardEngine,
    GuardMonitor,
    GuardRule,
    default_guards,
)
from selfmetro.core.mctdh import evolve
from selfmetro.core.observability import RunRecorder


def _sample(**overrides):
    sample = {
        "t": 0.5,
        "norm_defect": 1e-12,
        "orthonormality_defect": 1e-12,
        "trace_defect": 1e-13,
        "energy_drift": 1e-9,
        "two_mode_fraction": 0.999,
    }
    sample.update(overrides)
    return sample


def test_clean_sample_passes():
    engine = GuardEngine(default_guards())
    allowed, results = engine.should_continue("evolve", _sample())
    assert allowed
    assert len(results) == 5
    assert all(r["passed"] for r in results)


def test_two_mode_floor_warns_without_stopping(caplog):
    engine = GuardEngine(default_guards(two_mode_floor=0.98))
    allowed, results = engine.should_continue("evolve", _sample(two_mode_fraction=0.9))
    assert allowed
    failed = [r for r in results if not r["passed"]]
    assert [r["rule_id"] for r in failed] == ["two_mode"]
    assert failed[0]["action"] == "WARN"
    assert "Guard two_mode failed" in caplog.text


def test_abort_and_critical_stop():
    abort = GuardRule(
        rule_id="energy_abort",
        monitor=GuardMonitor.ENERGY_DRIFT,
        bound=1e-6,
        action=GuardAction.ABORT,
    )
    critical = GuardRule(
        rule_id="norm_critical",
        monitor=GuardMonitor.NORM_DEFECT,
        bound=1e-8,
        severity="critical",
    )
    engine = GuardEngine(GuardConfig(guard_id="strict", rules=[abort, critical]))
    assert not engine.should_continue("evolve", _sample(energy_drift=1e-3))[0]
    assert not engine.should_continue("evolve", _sample(norm_defect=1e-5))[0]
    assert engine.should_continue("evolve", _sample())[0]


def test_strict_mode_stops_on_any_failure():
    config = default_guards().model_copy(update={"strict_mode": True})
    engine = GuardEngine(config)
    assert not engine.should_continue("evolve", _sample(two_mode_fraction=0.5))[0]


def test_rule_scoping_and_missing_monitors():
    rule = GuardRule(
        rule_id="family_only",
        monitor=GuardMonitor.TRACE_DEFECT,
        bound=1e-10,
        applies_to=["family"],
    )
    disabled = GuardRule(
        rule_id="off", monitor=GuardMonitor.NORM_DEFECT, bound=0.0, enabled=False
    )
    engine = GuardEngine(GuardConfig(guard_id="scoped", rules=[rule, disabled]))
    assert engine.rules_for("evolve") == []
    assert [r.rule_id for r in engine.rules_for("family")] == ["family_only"]
    assert engine.evaluate("family", {"t": 0.0}) == []
    assert engine.config.get_rule_by_id("off") is disabled
    assert engine.config.get_rule_by_id("missing") is None


def test_rule_validation():
    with pytest.raises(ValueError):
        GuardRule(
            rule_id="x", monitor=GuardMonitor.NORM_DEFECT, bound=1.0, comparison="equal"
        )
    with pytest.raises(ValueError):
        GuardRule(rule_id="x", monitor="speed", bound=1.0)


def test_abort_rule_stops_a_trajectory(coherent_state, fast_evolution):
    floor = GuardRule(
        rule_id="impossible_floor",
        monitor=GuardMonitor.TWO_MODE_FRACTION,
        bound=1.5,
        comparison="min",
        action=GuardAction.ABORT,
    )
    engine = GuardEngine(GuardConfig(guard_id="abort", rules=[floor]))
    recorder = RunRecorder()
    with pytest.raises(GuardViolationError) as excinfo:
        evolve(coherent_state, fast_evolution, guards=engine, recorder=recorder)
    assert excinfo.value.rule_id == "impossible_floor"
    assert exit_code_for(excinfo.value) == 3
    violations = [e for e in recorder.traces if e.event_type == "guard_violation"]
    assert len(violations) == 1
    assert violations[0].stage_id == "evolve"


@pytest.mark.parametrize(
    "error, code",
    [
        (ConfigError("bad"), 2),
        (GridMismatchError("shape"), 2),
        (NumericalError("nan"), 3),
        (StepSizeError("dt", defect=1e-3), 3),
        (NoInformationError("flat"), 4),
        (RuntimeError("other"), 1),
    ],
)
def test_exit_codes(error, code):
    assert exit_code_for(error) == code
