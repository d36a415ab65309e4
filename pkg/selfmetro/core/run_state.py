"""Run state carried through the stage pipeline."""

import json
import uuid
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field


class RunMetadata(BaseModel):
    """Bookkeeping of one pipeline run."""

    model_config = ConfigDict(extra="forbid")

    run_id: str = Field(..., description="Unique run identifier")
    config_hash: str = Field(default="", description="Hash of the scenario configuration")
    start_time: datetime = Field(default_factory=datetime.now)
    last_updated: datetime = Field(default_factory=datetime.now)

    current_stage: Optional[str] = Field(default=None)
    stage_history: List[str] = Field(default_factory=list)

    execution_time: float = Field(default=0.0)
    stage_timings: Dict[str, float] = Field(default_factory=dict)

    guard_violations: List[Dict[str, Any]] = Field(default_factory=list)
    errors: List[Dict[str, Any]] = Field(default_factory=list)
    interrupt_reason: Optional[str] = Field(default=None)


class RunState(BaseModel):
    """
    Single source of truth for a pipeline run.

    ``artifacts`` maps stage ids to the files they wrote; ``results`` holds
    small scalar summaries (peak estimate, Fisher values) for the console.
    """

    model_config = ConfigDict(extra="forbid")

    metadata: RunMetadata = Field(
        default_factory=lambda: RunMetadata(run_id=RunState.generate_run_id())
    )
    artifacts: Dict[str, List[str]] = Field(default_factory=dict)
    results: Dict[str, Any] = Field(default_factory=dict)

    @staticmethod
    def generate_run_id() -> str:
        return str(uuid.uuid4())

    def _touch(self) -> None:
        self.metadata.last_updated = datetime.now()

    def set_current_stage(self, stage_id: str) -> None:
        self.metadata.current_stage = stage_id
        self.metadata.stage_history.append(stage_id)
        self._touch()

    def add_artifacts(self, stage_id: str, paths: List[Path]) -> None:
        self.artifacts.setdefault(stage_id, []).extend(str(p) for p in paths)
        self._touch()

    def update_results(self, updates: Dict[str, Any]) -> None:
        self.results.update(updates)
        self._touch()

    def record_timing(self, stage_id: str, seconds: float) -> None:
        self.metadata.stage_timings[stage_id] = seconds
        self.metadata.execution_time += seconds
        self._touch()

    def add_guard_violation(self, violation: Dict[str, Any]) -> None:
        violation["timestamp"] = datetime.now().isoformat()
        self.metadata.guard_violations.append(violation)

    def add_error(self, error: Dict[str, Any]) -> None:
        error["timestamp"] = datetime.now().isoformat()
        self.metadata.errors.append(error)
        self.metadata.interrupt_reason = f"{error.get('stage_id')}: {error.get('error')}"
        self._touch()

    def is_healthy(self) -> bool:
        return not self.metadata.errors and self.metadata.interrupt_reason is None

    def all_artifacts(self) -> List[str]:
        return [path for paths in self.artifacts.values() for path in paths]

    def get_state_summary(self) -> Dict[str, Any]:
        return {
            "run_id": self.metadata.run_id,
            "config_hash": self.metadata.config_hash,
            "stages": list(self.metadata.stage_history),
            "artifacts": len(self.all_artifacts()),
            "execution_time": self.metadata.execution_time,
            "guard_violations": len(self.metadata.guard_violations),
            "errors": len(self.metadata.errors),
            "interrupt_reason": self.metadata.interrupt_reason,
        }

    def updates(self) -> Dict[str, Any]:
        """Top-level fields as a graph update."""
        return {name: getattr(self, name) for name in type(self).model_fields}

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunState":
        return cls.model_validate(data)

    def serialize(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def deserialize(cls, data: str) -> "RunState":
        return cls.from_dict(json.loads(data))
