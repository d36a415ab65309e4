"""Run recorder with optional OpenTelemetry spans."""

import json
import logging
import threading
from contextlib import contextmanager
from datetime import datetime
from typing import Any, Dict, Iterator, List, Optional

from pydantic import BaseModel, Field

try:
    from opentelemetry import trace
    from opentelemetry.sdk.resources import Resource
    from opentelemetry.sdk.trace import TracerProvider
    from opentelemetry.sdk.trace.export import ConsoleSpanExporter, SimpleSpanProcessor

    OTEL_AVAILABLE = True
except ImportError:
    OTEL_AVAILABLE = False


class _NoopSpan:
    def __enter__(self) -> "_NoopSpan":
        return self

    def __exit__(self, *args: Any) -> None:
        pass

    def set_attribute(self, *args: Any, **kwargs: Any) -> None:
        pass

    def add_event(self, *args: Any, **kwargs: Any) -> None:
        pass


class TraceEvent(BaseModel):
    """Individual trace event."""

    event_type: str = Field(..., description="Type of event")
    timestamp: datetime = Field(default_factory=datetime.now)
    data: Dict[str, Any] = Field(default_factory=dict)
    stage_id: Optional[str] = Field(default=None)
    run_id: Optional[str] = Field(default=None)


class RunRecorder:
    """
    Flight recorder of a selfmetro run.

    Collects stage boundaries, guard evaluations, integrator corrections and
    errors as ``TraceEvent`` records. Appends are thread-safe so parallel
    trajectory legs can share one recorder.
    """

    _provider_installed = False

    def __init__(self, enable_otel: bool = False, export_console: bool = False):
        """
        Initialize the recorder.

        Args:
            enable_otel: Whether to open OpenTelemetry spans
            export_console: Attach a console span exporter
        """
        self.enable_otel = enable_otel and OTEL_AVAILABLE
        self.export_console = export_console
        self.traces: List[TraceEvent] = []
        self.logger = logging.getLogger(__name__)
        self._lock = threading.Lock()
        self.tracer: Any = None

        if self.enable_otel:
            self._setup_otel()
        elif enable_otel:
            self.logger.warning("OpenTelemetry not available, using basic tracing")

    def _setup_otel(self) -> None:
        try:
            if not RunRecorder._provider_installed:
                provider = TracerProvider(
                    resource=Resource.create({"service.name": "selfmetro"})
                )
                if self.export_console:
                    provider.add_span_processor(SimpleSpanProcessor(ConsoleSpanExporter()))
                trace.set_tracer_provider(provider)
                RunRecorder._provider_installed = True
            self.tracer = trace.get_tracer(__name__)
            self.logger.info("OpenTelemetry tracing initialized")
        except Exception as e:
            self.logger.error(f"Failed to initialize OpenTelemetry: {e}")
            self.enable_otel = False

    @contextmanager
    def span(self, name: str, **attributes: Any) -> Iterator[Any]:
        """Open a tracing span, or a no-op span when tracing is off."""
        if not self.enable_otel or self.tracer is None:
            yield _NoopSpan()
            return
        with self.tracer.start_as_current_span(name) as span:
            for key, value in attributes.items():
                span.set_attribute(key, value)
            yield span

    def record_event(
        self,
        event_type: str,
        data: Dict[str, Any],
        stage_id: Optional[str] = None,
        run_id: Optional[str] = None,
    ) -> None:
        """
        Record a trace event.

        Args:
            event_type: Type of event (e.g., "stage_start", "guard_violation")
            data: Event data
            stage_id: Associated stage
            run_id: Associated run
        """
        event = TraceEvent(
            event_type=event_type, data=data, stage_id=stage_id, run_id=run_id
        )
        with self._lock:
            self.traces.append(event)
        self.logger.debug(f"Trace event: {event_type} - {data}")

    def record_stage_start(self, stage_id: str, stage_type: str, run_id: str) -> None:
        self.record_event(
            "stage_start",
            {"stage_id": stage_id, "stage_type": stage_type, "status": "started"},
            stage_id=stage_id,
            run_id=run_id,
        )

    def record_stage_end(
        self,
        stage_id: str,
        success: bool,
        execution_time: float,
        run_id: Optional[str] = None,
        artifacts: Optional[List[str]] = None,
        error: Optional[str] = None,
    ) -> None:
        data: Dict[str, Any] = {
            "stage_id": stage_id,
            "status": "completed" if success else "failed",
            "execution_time": execution_time,
        }
        if artifacts:
            data["artifacts"] = artifacts
        if error:
            data["error"] = error
        self.record_event("stage_end", data, stage_id=stage_id, run_id=run_id)

    def record_guard_evaluation(
        self, stage_id: str, results: List[Dict[str, Any]], run_id: Optional[str] = None
    ) -> None:
        self.record_event(
            "guard_evaluation",
            {
                "stage_id": stage_id,
                "total_rules": len(results),
                "violations": len([r for r in results if not r.get("passed", True)]),
            },
            stage_id=stage_id,
            run_id=run_id,
        )

    def record_guard_violation(
        self, stage_id: str, violation: Dict[str, Any], run_id: Optional[str] = None
    ) -> None:
        self.record_event(
            "guard_violation",
            {
                "stage_id": stage_id,
                "violation": violation,
                "severity": violation.get("severity", "warning"),
            },
            stage_id=stage_id,
            run_id=run_id,
        )

    def record_step_correction(
        self,
        stage_id: str,
        t: float,
        norm_defect: float,
        orthonormality_defect: float,
        run_id: Optional[str] = None,
    ) -> None:
        self.record_event(
            "step_correction",
            {
                "t": t,
                "norm_defect": norm_defect,
                "orthonormality_defect": orthonormality_defect,
            },
            stage_id=stage_id,
            run_id=run_id,
        )

    def record_error(
        self, stage_id: str, error: str, error_type: str, run_id: Optional[str] = None
    ) -> None:
        self.record_event(
            "error",
            {"stage_id": stage_id, "error": error, "error_type": error_type},
            stage_id=stage_id,
            run_id=run_id,
        )

    def get_run_trace(self, run_id: str) -> List[TraceEvent]:
        with self._lock:
            return [event for event in self.traces if event.run_id == run_id]

    def get_stage_trace(self, stage_id: str) -> List[TraceEvent]:
        with self._lock:
            return [event for event in self.traces if event.stage_id == stage_id]

    def get_trace_summary(self, run_id: Optional[str] = None) -> Dict[str, Any]:
        """Summarize the events of one run, or of everything recorded."""
        if run_id is None:
            with self._lock:
                events = list(self.traces)
        else:
            events = self.get_run_trace(run_id)

        summary: Dict[str, Any] = {
            "run_id": run_id,
            "total_events": len(events),
            "event_types": {},
            "stages": [],
            "errors": [],
            "guard_violations": [],
        }
        stages = []
        for event in events:
            counts = summary["event_types"]
            counts[event.event_type] = counts.get(event.event_type, 0) + 1
            if event.stage_id and event.stage_id not in stages:
                stages.append(event.stage_id)
            if event.event_type == "error":
                summary["errors"].append(event.data)
            elif event.event_type == "guard_violation":
                summary["guard_violations"].append(event.data)
        summary["stages"] = stages
        return summary

    def export_trace(self, run_id: Optional[str] = None, format: str = "json") -> str:
        """
        Export recorded events.

        Args:
            run_id: Run to export; all events when None
            format: Export format ("json", "text")
        """
        if run_id is None:
            with self._lock:
                events = list(self.traces)
        else:
            events = self.get_run_trace(run_id)

        if format == "json":
            payload = [event.model_dump() for event in events]
            return json.dumps(payload, default=str, indent=2)
        elif format == "text":
            return "\n".join(
                f"[{event.timestamp}] {event.event_type}: {event.data}" for event in events
            )
        else:
            raise ValueError(f"Unsupported format: {format}")

    def clear_traces(self) -> None:
        with self._lock:
            self.traces.clear()
        self.logger.info("All traces cleared")
