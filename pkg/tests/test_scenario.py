from pathlib import Path

import numpy as np
import pytest

from selfmetro.core.errors import ConfigError
from selfmetro.core.fock import StateKind
from selfmetro.core.scenario import (
    FamilyMethod,
    ScenarioConfig,
    load_scenario,
    parse_scenario_text,
    parse_value,
)

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def test_parse_value():
    assert parse_value("true") is True
    assert parse_value(" 12 ") == 12
    assert parse_value("1e-4") == pytest.approx(1e-4)
    assert parse_value("1, 4, 16") == [1, 4, 16]
    assert parse_value("coherent") == "coherent"


def test_parse_text_with_comments_and_overrides():
    text = "# header\nN = 4  # inline\nfamily.t_measure = 0.5\n\n"
    tree = parse_scenario_text(text, ["family.t_measure=0.7", "gn=1.0"])
    assert tree == {"N": 4, "gn": 1.0, "family": {"t_measure": 0.7}}


@pytest.mark.parametrize(
    "text", ["N 4", "a.b.c = 1", ".x = 1", "N = 4\nN.sub = 1"]
)
def test_malformed_text(text):
    with pytest.raises(ConfigError):
        parse_scenario_text(text)


def test_defaults():
    scenario = load_scenario()
    assert scenario.N == 10
    assert scenario.trap.p4 == 0.1
    assert scenario.state_kind is StateKind.COHERENT
    assert scenario.family.method is FamilyMethod.SC
    assert scenario.g == pytest.approx(0.01)
    assert scenario.coupling_for(5) == pytest.approx(0.02)
    assert scenario.coupling_for(5, gn=1.0) == pytest.approx(0.2)
    assert scenario.grid.n_points == 257
    assert scenario.evolution.M == 4


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError):
        load_scenario(overrides=["fisher.bogus=1"])
    with pytest.raises(ConfigError):
        load_scenario(overrides=["nonsense=1"])


def test_invalid_values_are_rejected():
    with pytest.raises(ConfigError):
        load_scenario(overrides=["grid.n_points=8"])
    with pytest.raises(ConfigError):
        load_scenario(overrides=["family.p4_min=0.3", "family.p4_max=0.1"])
    with pytest.raises(ConfigError):
        load_scenario(overrides=["estimation.nu_list=0"])
    with pytest.raises(ConfigError):
        load_scenario(overrides=["state_kind=squeezed"])


def test_outcome_must_sum_to_n():
    with pytest.raises(ConfigError):
        load_scenario(overrides=["N=4", "estimation.outcome=2,1"])
    scenario = load_scenario(overrides=["N=4", "estimation.outcome=3,1"])
    assert scenario.estimation.outcome == (3, 1)


def test_missing_file():
    with pytest.raises(ConfigError):
        load_scenario(Path("does/not/exist.conf"))


def test_hash_ignores_output_dir_only():
    base = load_scenario()
    moved = load_scenario(overrides=["output_dir=elsewhere"])
    tilted = load_scenario(overrides=["trap.p4=0.2"])
    assert base.config_hash() == moved.config_hash()
    assert base.config_hash() != tilted.config_hash()
    assert len(base.config_hash()) == 64


def test_updated_revalidates():
    base = load_scenario()
    assert base.updated(N=4, estimation={"outcome": [2, 2]}).N == 4
    with pytest.raises(ConfigError):
        base.updated(N=0)


def test_evolution_section_to_config():
    scenario = load_scenario(overrides=["evolution.frozen_orbitals=true"])
    config = scenario.evolution.to_config(t_final=0.5, keep_states=True)
    assert config.t_final == 0.5
    assert config.frozen_orbitals
    assert config.keep_states
    assert config.dt == scenario.evolution.dt


def test_family_grid():
    scenario = load_scenario(
        overrides=["family.p4_min=0", "family.p4_max=0.25", "family.p4_step=0.0025"]
    )
    grid = scenario.family.p4_grid()
    assert grid.size == 101
    assert grid[0] == 0.0
    assert grid[-1] == pytest.approx(0.25)
    assert np.all(np.diff(grid) > 0)


@pytest.mark.parametrize("name", ["default.conf", "smoke.conf"])
def test_shipped_configs_load(name):
    scenario = load_scenario(CONFIG_DIR / name)
    assert isinstance(scenario, ScenarioConfig)
    assert sum(scenario.estimation.outcome) == scenario.N


def test_default_config_matches_builtin_defaults():
    from_file = load_scenario(CONFIG_DIR / "default.conf")
    assert from_file.config_hash() == load_scenario().config_hash()
