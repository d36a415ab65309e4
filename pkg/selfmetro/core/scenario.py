"""Scenario configuration: pydantic models and the flat key-value file format."""

import hashlib
import json
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from .errors import ConfigError
from .fock import StateKind
from .grid import Grid, PotentialParams, build_grid
from .mctdh import EvolutionConfig

logger = logging.getLogger(__name__)


class FamilyMethod(str, Enum):
    SC = "SC"
    TMI = "TMI"


def _listify(value: Any) -> Any:
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]


class GridSection(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)

    half_width: float = Field(default=8.0, gt=0.0)
    n_points: int = Field(default=257, ge=16)

    def build(self) -> Grid:
        return build_grid(self.half_width, self.n_points)


class EvolutionSection(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)

    dt: float = Field(default=1e-4, gt=0.0)
    t_final: float = Field(default=3.0, ge=0.0)
    sample_stride: int = Field(default=100, ge=1)
    regularization: float = Field(default=1e-8, gt=0.0)
    frozen_orbitals: bool = False
    gn_sweep: List[float] = Field(
        default_factory=lambda: [0.1, 1.0], description="gN values of the trajectory sweep"
    )
    M: int = Field(
        default=4, ge=2, le=4, description="Orbitals of the trajectory sweep"
    )

    @field_validator("gn_sweep", mode="before")
    @classmethod
    def _as_list(cls, value: Any) -> Any:
        return _listify(value)

    def to_config(
        self,
        t_final: Optional[float] = None,
        sample_stride: Optional[int] = None,
        keep_states: bool = False,
        frozen_orbitals: Optional[bool] = None,
    ) -> EvolutionConfig:
        return EvolutionConfig(
            dt=self.dt,
            t_final=self.t_final if t_final is None else t_final,
            sample_stride=self.sample_stride if sample_stride is None else sample_stride,
            regularization=self.regularization,
            frozen_orbitals=(
                self.frozen_orbitals if frozen_orbitals is None else frozen_orbitals
            ),
            keep_states=keep_states,
        )


class FisherSection(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)

    delta_qfi: float = Field(default=1e-4, gt=0.0)
    delta_cfi: float = Field(default=1e-3, gt=0.0)
    t_max: float = Field(default=2.0, gt=0.0, description="End of the Fisher time sweep")
    t_step: float = Field(default=0.05, gt=0.0, description="Spacing of the time sweep")
    t_n_sweep: float = Field(default=1.77, gt=0.0, description="Time of the N sweep")
    n_values: List[int] = Field(default_factory=lambda: list(range(2, 13)))

    @field_validator("n_values", mode="before")
    @classmethod
    def _as_list(cls, value: Any) -> Any:
        return _listify(value)

    @field_validator("n_values")
    @classmethod
    def _positive(cls, values: List[int]) -> List[int]:
        if not values or min(values) < 1:
            raise ValueError("n_values must be a non-empty list of positive integers")
        return values


class FamilySection(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)

    p4_min: float = 0.0
    p4_max: float = 0.25
    p4_step: float = Field(default=0.0025, gt=0.0)
    t_measure: float = Field(default=1.77, gt=0.0)
    method: FamilyMethod = FamilyMethod.SC

    @model_validator(mode="after")
    def _check_span(self) -> "FamilySection":
        if self.p4_max <= self.p4_min:
            raise ValueError(f"p4_max={self.p4_max} must exceed p4_min={self.p4_min}")
        return self

    def p4_grid(self) -> np.ndarray:
        count = int(round((self.p4_max - self.p4_min) / self.p4_step)) + 1
        return np.round(self.p4_min + self.p4_step * np.arange(count), 12)


class EstimationSection(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)

    nu_list: List[int] = Field(default_factory=lambda: [1, 4, 16, 64, 256])
    trials: int = Field(default=10_000, ge=1)
    seed: int = Field(default=20240917, ge=0)
    x_true: float = 0.1
    outcome: Tuple[int, int] = (7, 3)

    @field_validator("nu_list", mode="before")
    @classmethod
    def _as_list(cls, value: Any) -> Any:
        return _listify(value)

    @field_validator("nu_list")
    @classmethod
    def _positive(cls, values: List[int]) -> List[int]:
        if not values or min(values) < 1:
            raise ValueError("nu_list must be a non-empty list of integers >= 1")
        return values


class ScenarioConfig(BaseModel):
    """
    Complete description of a run.

    ``gn`` is held fixed when N is swept; the contact coupling is ``g = gn / N``.
    """

    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)

    trap: PotentialParams = Field(default_factory=PotentialParams)
    grid: GridSection = Field(default_factory=GridSection)
    evolution: EvolutionSection = Field(default_factory=EvolutionSection)
    fisher: FisherSection = Field(default_factory=FisherSection)
    family: FamilySection = Field(default_factory=FamilySection)
    estimation: EstimationSection = Field(default_factory=EstimationSection)

    N: int = Field(default=10, ge=1, le=25, description="Particle number")
    M: int = Field(default=2, ge=2, le=4, description="Number of orbitals")
    gn: float = Field(default=0.1, description="Interaction strength g N")
    state_kind: StateKind = StateKind.COHERENT
    output_dir: Path = Path("results")

    @model_validator(mode="after")
    def _check_outcome(self) -> "ScenarioConfig":
        n_left, n_right = self.estimation.outcome
        if n_left < 0 or n_right < 0 or n_left + n_right != self.N:
            raise ValueError(
                f"estimation.outcome ({n_left},{n_right}) does not sum to N={self.N}"
            )
        return self

    @property
    def g(self) -> float:
        return self.gn / self.N

    def coupling_for(self, N: int, gn: Optional[float] = None) -> float:
        return (self.gn if gn is None else gn) / N

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON dump; the output directory is excluded."""
        payload = self.model_dump(mode="json", exclude={"output_dir"})
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def updated(self, **changes: Any) -> "ScenarioConfig":
        """Validated copy with top-level fields replaced."""
        data = self.model_dump()
        data.update(changes)
        return build_scenario(data)


def _parse_scalar(text: str) -> Any:
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def parse_value(text: str) -> Any:
    """Parse a value: comma-separated lists, booleans, numbers, else the raw string."""
    stripped = text.strip()
    if "," in stripped:
        return [_parse_scalar(part.strip()) for part in stripped.split(",") if part.strip()]
    return _parse_scalar(stripped)


def _assign(tree: Dict[str, Any], key: str, value: Any, origin: str) -> None:
    parts = key.split(".")
    if len(parts) > 2 or not all(parts):
        raise ConfigError(f"{origin}: invalid key {key!r}")
    if len(parts) == 1:
        tree[parts[0]] = value
        return
    section = tree.setdefault(parts[0], {})
    if not isinstance(section, dict):
        raise ConfigError(f"{origin}: {parts[0]!r} is both a value and a section")
    section[parts[1]] = value


def parse_scenario_text(
    text: str, overrides: Optional[Sequence[str]] = None, origin: str = "<text>"
) -> Dict[str, Any]:
    """Turn ``section.key = value`` lines and ``key=value`` overrides into a nested dict."""
    tree: Dict[str, Any] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{number}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        _assign(tree, key.strip(), parse_value(value), f"{origin}:{number}")
    for override in overrides or []:
        if "=" not in override:
            raise ConfigError(f"Override must be key=value, got {override!r}")
        key, value = override.split("=", 1)
        _assign(tree, key.strip(), parse_value(value), "override")
    return tree


def build_scenario(data: Dict[str, Any]) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid scenario configuration: {e}") from e


def load_scenario(
    path: Optional[Union[str, Path]] = None, overrides: Optional[Sequence[str]] = None
) -> ScenarioConfig:
    """
    Load a scenario file, apply overrides and validate.

    Args:
        path: Config file; defaults apply when None
        overrides: ``key=value`` strings applied after the file

    Returns:
        Validated scenario configuration
    """
    text = ""
    origin = "<defaults>"
    if path is not None:
        origin = str(path)
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"Cannot read config file {path}: {e}") from e
    scenario = build_scenario(parse_scenario_text(text, overrides, origin))
    logger.info(f"Loaded scenario from {origin} (hash {scenario.config_hash()[:12]})")
    return scenario
