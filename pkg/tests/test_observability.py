import json
import threading
import time

import pytest

from selfmetro.config import Config
from selfmetro.core.errors import ConfigError
from selfmetro.core.guards import GuardEngine, default_guards
from selfmetro.core.mctdh import evolve
from selfmetro.core.observability import RunRecorder
from selfmetro.core.parallel import in_worker, map_parallel, resolve_workers


def test_stage_events_and_summary():
    recorder = RunRecorder()
    recorder.record_stage_start("fisher", "FISHER", "run-1")
    recorder.record_error("fisher", "boom", "NumericalError", "run-1")
    recorder.record_stage_end("fisher", False, 0.5, run_id="run-1", error="boom")
    recorder.record_event("run_start", {"run_id": "run-2"}, run_id="run-2")

    summary = recorder.get_trace_summary("run-1")
    assert summary["total_events"] == 3
    assert summary["stages"] == ["fisher"]
    assert summary["event_types"]["stage_end"] == 1
    assert summary["errors"][0]["error_type"] == "NumericalError"
    assert recorder.get_trace_summary()["total_events"] == 4
    assert len(recorder.get_stage_trace("fisher")) == 3


def test_export_formats():
    recorder = RunRecorder()
    recorder.record_stage_end("family", True, 1.0, run_id="r", artifacts=["a.csv"])
    events = json.loads(recorder.export_trace("r"))
    assert events[0]["data"]["artifacts"] == ["a.csv"]
    assert "stage_end" in recorder.export_trace("r", format="text")
    with pytest.raises(ValueError):
        recorder.export_trace("r", format="xml")
    recorder.clear_traces()
    assert recorder.export_trace() == "[]"


def test_noop_span_without_tracing():
    recorder = RunRecorder(enable_otel=False)
    with recorder.span("stage.evolve", stage_type="EVOLVE") as span:
        span.set_attribute("k", 1)
        span.add_event("e")


def test_concurrent_appends():
    recorder = RunRecorder()

    def work(i):
        for j in range(50):
            recorder.record_event("tick", {"i": i, "j": j}, run_id="r")

    threads = [threading.Thread(target=work, args=(i,)) for i in range(8)]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()
    assert len(recorder.get_run_trace("r")) == 400


def test_trajectory_records_guard_evaluations(coherent_state, fast_evolution):
    recorder = RunRecorder()
    _, log = evolve(
        coherent_state,
        fast_evolution,
        guards=GuardEngine(default_guards()),
        recorder=recorder,
        stage_id="evolve-test",
        run_id="r",
    )
    evaluations = [
        e for e in recorder.get_run_trace("r") if e.event_type == "guard_evaluation"
    ]
    assert len(evaluations) == len(log.samples)
    assert all(e.stage_id == "evolve-test" for e in evaluations)


def test_thread_cap_from_environment(monkeypatch):
    monkeypatch.setenv(Config.THREADS_ENV, "2")
    assert Config.threads() == 2
    assert resolve_workers(8) == 2
    assert resolve_workers(1) == 1
    monkeypatch.setenv(Config.THREADS_ENV, "zero")
    with pytest.raises(ConfigError):
        Config.threads()
    monkeypatch.setenv(Config.THREADS_ENV, "0")
    with pytest.raises(ConfigError):
        Config.threads()


@pytest.mark.parametrize("threads", ["1", "4"])
def test_map_parallel_keeps_order(monkeypatch, threads):
    monkeypatch.setenv(Config.THREADS_ENV, threads)
    assert map_parallel(lambda x: x * x, list(range(20))) == [x * x for x in range(20)]
    assert map_parallel(lambda x: x, []) == []


def test_map_parallel_propagates_errors(monkeypatch):
    monkeypatch.setenv(Config.THREADS_ENV, "3")

    def fail(x):
        if x == 2:
            raise ConfigError("bad item")
        return x

    with pytest.raises(ConfigError):
        map_parallel(fail, [0, 1, 2, 3])


def test_nested_map_parallel_stays_within_thread_cap(monkeypatch):
    monkeypatch.setenv(Config.THREADS_ENV, "2")
    lock = threading.Lock()
    running = [0]
    peak = [0]
    names = set()

    def leaf(x):
        with lock:
            running[0] += 1
            peak[0] = max(peak[0], running[0])
            names.add(threading.current_thread().name)
        time.sleep(0.005)
        with lock:
            running[0] -= 1
        return x

    def outer(x):
        assert in_worker()
        return sum(map_parallel(leaf, list(range(4))))

    assert not in_worker()
    assert map_parallel(outer, list(range(4))) == [6] * 4
    assert peak[0] <= 2
    assert len(names) <= 2
    assert not in_worker()


def test_logging_config(monkeypatch):
    monkeypatch.setenv("SELFMETRO_LOG_LEVEL", "debug")
    assert Config.get_logging_config()["level"] == "DEBUG"
    monkeypatch.setenv("SELFMETRO_ENABLE_TRACING", "yes")
    assert Config.get_observability_config()["enable_otel"] is True
