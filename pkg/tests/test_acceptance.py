"""Full-regime runs of the reference scenario (N=10, gN=0.1, p4=0.1)."""

from pathlib import Path

import numpy as np
import pytest

from selfmetro.components.scenario_legs import (
    FISHER_COLUMNS,
    LegContext,
    fisher_rows,
    run_evolve,
)
from selfmetro.core.estimation import build_family, estimator_sweep, mle_estimate
from selfmetro.core.fock import StateKind
from selfmetro.core.scenario import load_scenario

pytestmark = [pytest.mark.slow, pytest.mark.integration]

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def _column(rows, name):
    index = FISHER_COLUMNS.index(name)
    return np.array([values[index] for _, values in rows])


@pytest.fixture(scope="module")
def reference(tmp_path_factory):
    scenario = load_scenario(CONFIG_DIR / "default.conf")
    return scenario.updated(output_dir=str(tmp_path_factory.mktemp("reference")))


@pytest.fixture(scope="module")
def time_sweep(reference):
    stride = int(round(reference.fisher.t_step / reference.evolution.dt))
    return {
        kind: fisher_rows(reference, kind, reference.N, reference.fisher.t_max, stride)
        for kind in (StateKind.COHERENT, StateKind.CAT)
    }


@pytest.fixture(scope="module")
def family(reference):
    return build_family(reference)


def test_two_mode_fraction_dips_only_for_strong_interaction(reference):
    context = LegContext()
    run_evolve(reference, context)
    minima = context.results["min_rho_tm"]
    assert minima["trajectory_coherent_gn0.1"] > 0.99
    assert minima["trajectory_cat_gn0.1"] > 0.99
    assert minima["trajectory_coherent_gn1"] < 0.99


def test_sc_qfi_tracks_the_two_mode_curve(time_sweep):
    rows = time_sweep[StateKind.COHERENT]
    times = np.array([t for t, _ in rows])
    sc = _column(rows, "qfi_sc")[times > 0.0]
    analytic = _column(rows, "qfi_tmi_analytic")[times > 0.0]
    assert times[-1] == pytest.approx(2.0)
    np.testing.assert_array_less(np.abs(sc / analytic - 1.0), 0.05)


def test_cfi_never_exceeds_qfi(time_sweep):
    for rows in time_sweep.values():
        assert all(_column(rows, "cfi_within_qfi"))


def test_cat_state_cfi_is_almost_vanishing(time_sweep):
    cat = _column(time_sweep[StateKind.CAT], "cfi_sc")
    coherent = _column(time_sweep[StateKind.COHERENT], "cfi_sc")
    assert coherent.max() > 0.0
    assert cat.max() < 0.05 * coherent.max()


def test_coherent_cfi_grows_with_particle_number(reference):
    steps = int(round(reference.fisher.t_n_sweep / reference.evolution.dt))
    sizes = list(range(4, 13))
    values = []
    for N in sizes:
        t, row = fisher_rows(
            reference, StateKind.COHERENT, N, reference.fisher.t_n_sweep, steps
        )[-1]
        assert t == pytest.approx(1.77)
        values.append(row[FISHER_COLUMNS.index("cfi_sc")])
    slope = np.polyfit(sizes, values, 1)[0]
    assert slope > 0.0


def test_likelihood_of_seven_three_peaks_near_the_true_tilt(family):
    assert mle_estimate((7, 3), family) == pytest.approx(0.109, abs=0.01)


def test_estimator_statistics_match_reference_values(reference, family):
    estimation = reference.estimation
    reports = estimator_sweep(
        family,
        estimation.x_true,
        estimation.nu_list,
        estimation.trials,
        estimation.seed,
    )
    single, largest = reports[0], reports[-1]
    assert single.nu == 1
    assert largest.nu == 256
    assert single.moe == pytest.approx(0.0926, abs=0.005)
    assert largest.moe == pytest.approx(0.11, abs=0.01)
    assert largest.domoe == pytest.approx(0.6, abs=0.1)

    sigma = largest.ratio * np.sqrt(2.0 / largest.trials)
    assert abs(largest.ratio - 1.0) < max(3.0 * sigma, 0.1)
    assert abs(largest.ratio - 1.0) <= abs(single.ratio - 1.0) + 3.0 * sigma
