"""Prebuilt scenario stages."""

from .scenario_legs import (
    LegContext,
    build_full_pipeline,
    run_estimate,
    run_evolve,
    run_family,
    run_fisher,
    run_prepare,
)

__all__ = [
    "LegContext",
    "build_full_pipeline",
    "run_estimate",
    "run_evolve",
    "run_family",
    "run_fisher",
    "run_prepare",
]
