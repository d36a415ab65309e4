"""Shared fixtures: a coarse grid and a small, fast scenario."""

from pathlib import Path

import numpy as np
import pytest

from selfmetro.core.fock import StateKind
from selfmetro.core.grid import PotentialParams, build_grid
from selfmetro.core.mctdh import EvolutionConfig, prepare_initial_state
from selfmetro.core.scenario import ScenarioConfig, build_scenario

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def small_grid():
    return build_grid(8.0, 129)


@pytest.fixture
def trap():
    return PotentialParams()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def coherent_state(small_grid, trap):
    return prepare_initial_state(small_grid, trap, 4, 2, 0.1 / 4, StateKind.COHERENT)


@pytest.fixture
def cat_state(small_grid, trap):
    return prepare_initial_state(small_grid, trap, 4, 2, 0.1 / 4, StateKind.CAT)


@pytest.fixture
def fast_evolution():
    return EvolutionConfig(dt=1e-3, t_final=0.05, sample_stride=10)


@pytest.fixture
def smoke_scenario(tmp_path) -> ScenarioConfig:
    return build_scenario(
        {
            "N": 3,
            "M": 2,
            "gn": 0.1,
            "output_dir": str(tmp_path / "out"),
            "grid": {"half_width": 8.0, "n_points": 129},
            "evolution": {
                "dt": 1e-3,
                "t_final": 0.02,
                "sample_stride": 10,
                "gn_sweep": [0.1],
                "M": 2,
            },
            "fisher": {
                "t_max": 0.02,
                "t_step": 0.01,
                "t_n_sweep": 0.01,
                "n_values": [2],
            },
            "family": {"p4_min": 0.0, "p4_max": 0.04, "p4_step": 0.01, "t_measure": 0.02},
            "estimation": {
                "nu_list": [1, 2],
                "trials": 20,
                "seed": 3,
                "x_true": 0.02,
                "outcome": [2, 1],
            },
        }
    )
