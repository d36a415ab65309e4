import logging

import numpy as np
import pytest

from selfmetro.core.errors import ConfigError
from selfmetro.core.fock import StateKind, density_data
from selfmetro.core.grid import PotentialParams, build_grid
from selfmetro.core.likelihood import OutcomeDistribution
from selfmetro.core.mctdh import (
    EvolutionConfig,
    evolve,
    prepare_initial_state,
    quenched,
)
from selfmetro.core.metrology import (
    FisherMethod,
    FisherReport,
    cfi,
    cfi_exceeds_check,
    fidelity_qfi,
    parameter_derivatives,
    qfi_pure_state,
    qfi_term_groups,
)
from selfmetro.core.two_mode import chain_rule_qfi, dipole_difference, tmi_qfi_analytic


def _dist(*values):
    return OutcomeDistribution(probabilities=tuple(values))


def _rotated(state, angle, phase):
    """Orbitals rotated by ``angle`` and coefficients phased by exp(i phase Jz)."""
    c, s = np.cos(angle), np.sin(angle)
    rotation = np.array([[c, -s], [s, c]])
    jz = (state.N - 2.0 * np.arange(state.N + 1)) / 2.0
    return state.evolved(
        state.C * np.exp(1j * phase * jz), rotation @ state.orbitals, state.t
    )


def test_bernoulli_cfi():
    x, delta = 0.3, 1e-3
    report = cfi(
        _dist(1 - x - delta, x + delta),
        _dist(1 - x + delta, x - delta),
        _dist(1 - x, x),
        delta,
    )
    assert report.value == pytest.approx(1.0 / (x * (1 - x)), rel=1e-9)
    assert report.fd_step == delta


def test_cfi_skips_empty_outcomes():
    report = cfi(_dist(0.6, 0.4, 0.0), _dist(0.4, 0.6, 0.0), _dist(0.5, 0.5, 0.0), 0.1)
    assert report.value == pytest.approx(2 * (1.0**2) / 0.5)
    assert report.metadata["skipped_mass"] == 0.0


def test_cfi_warns_about_skipped_mass(caplog):
    with caplog.at_level(logging.WARNING, logger="selfmetro.core.metrology"):
        report = cfi(
            _dist(0.6, 0.4 - 1e-15, 1e-15),
            _dist(0.4, 0.6 - 1e-15, 1e-15),
            _dist(0.5, 0.5 - 1e-15, 1e-15),
            0.1,
        )
    assert report.metadata["skipped_mass"] == pytest.approx(1e-15)
    assert "CFI skipped outcomes carrying mass" in caplog.text


def test_identical_distributions_carry_no_information():
    same = _dist(0.2, 0.5, 0.3)
    assert cfi(same, same, same, 0.01, method=FisherMethod.TMI).value == 0.0


def test_cfi_rejects_bad_input():
    with pytest.raises(ConfigError):
        cfi(_dist(0.5, 0.5), _dist(0.5, 0.5), _dist(0.5, 0.5), 0.0)
    with pytest.raises(ConfigError):
        cfi(_dist(0.5, 0.5), _dist(0.2, 0.3, 0.5), _dist(0.5, 0.5), 0.1)


def test_cfi_bound_check():
    qfi = FisherReport(value=10.0)
    assert cfi_exceeds_check(qfi, FisherReport(value=10.005))
    assert not cfi_exceeds_check(qfi, FisherReport(value=11.0))


def test_derivatives_reject_bad_step(coherent_state):
    with pytest.raises(ConfigError):
        parameter_derivatives(coherent_state, coherent_state, 0.0)
    later = coherent_state.evolved(coherent_state.C, coherent_state.orbitals, 0.5)
    with pytest.raises(ConfigError):
        parameter_derivatives(coherent_state, later, 1e-3)


def test_rotation_derivative_is_anti_hermitian(coherent_state):
    delta = 1e-4
    plus = _rotated(coherent_state, 0.3 * delta, 0.0)
    minus = _rotated(coherent_state, -0.3 * delta, 0.0)
    deriv = parameter_derivatives(plus, minus, delta)
    assert deriv.anti_hermiticity_defect < 1e-10
    assert abs(deriv.overlap_derivative[1, 0]) == pytest.approx(0.3, rel=1e-6)


def test_term_groups_sum_to_truncated_qfi(cat_state):
    delta = 1e-4
    plus = _rotated(cat_state, 0.2 * delta, 0.7 * delta)
    minus = _rotated(cat_state, -0.2 * delta, -0.7 * delta)
    deriv = parameter_derivatives(plus, minus, delta)
    density = density_data(cat_state.C, cat_state.basis)
    groups = qfi_term_groups(cat_state.C, deriv, density, cat_state.basis)
    report = qfi_pure_state(cat_state, deriv, density)
    decomposition = report.metadata["decomposition"]
    assert 4.0 * sum(groups.values()) == pytest.approx(
        decomposition["truncated"], rel=1e-8
    )
    assert decomposition["completion"] == pytest.approx(0.0, abs=1e-8)


def test_phase_only_qfi_matches_variance(cat_state):
    # exp(i X Jz) on the cat state: F = 4 Var(Jz) = N^2
    delta = 1e-4
    plus = _rotated(cat_state, 0.0, delta)
    minus = _rotated(cat_state, 0.0, -delta)
    deriv = parameter_derivatives(plus, minus, delta)
    report = qfi_pure_state(cat_state, deriv, density_data(cat_state.C, cat_state.basis))
    assert report.value == pytest.approx(cat_state.N**2, rel=1e-6)
    assert report.metadata["decomposition"]["orbital"] == pytest.approx(0.0, abs=1e-8)
    assert fidelity_qfi(plus, minus, delta).value == pytest.approx(
        cat_state.N**2, rel=1e-4
    )


def test_fidelity_qfi_rejects_bad_step(cat_state):
    with pytest.raises(ConfigError):
        fidelity_qfi(cat_state, cat_state, -1.0)


def test_frozen_qfi_follows_chain_rule(coherent_state, trap):
    p4, delta, t = 0.1, 1e-3, 0.05
    config = EvolutionConfig(dt=1e-3, t_final=t, sample_stride=50, frozen_orbitals=True)
    plus, _ = evolve(quenched(coherent_state, trap, p4 + delta), config)
    minus, _ = evolve(quenched(coherent_state, trap, p4 - delta), config)
    center, _ = evolve(quenched(coherent_state, trap, p4), config)
    deriv = parameter_derivatives(plus, minus, delta)
    report = qfi_pure_state(center, deriv, density_data(center.C, center.basis))

    slope = dipole_difference(
        coherent_state.grid, coherent_state.orbitals[0], coherent_state.orbitals[1]
    )
    expected = tmi_qfi_analytic("coherent", coherent_state.N, t) * slope**2
    assert report.value == pytest.approx(expected, rel=1e-4)


def test_qfi_ignores_a_parameter_dependent_global_phase(cat_state):
    delta = 1e-4
    plus = _rotated(cat_state, 0.2 * delta, 0.7 * delta)
    minus = _rotated(cat_state, -0.2 * delta, -0.7 * delta)
    density = density_data(cat_state.C, cat_state.basis)
    plain = qfi_pure_state(
        cat_state, parameter_derivatives(plus, minus, delta), density
    )

    phase = np.exp(1j * 1.3 * delta)
    plus = plus.evolved(plus.C * phase, plus.orbitals, plus.t)
    minus = minus.evolved(minus.C / phase, minus.orbitals, minus.t)
    shifted = qfi_pure_state(
        cat_state, parameter_derivatives(plus, minus, delta), density
    )
    assert shifted.value == pytest.approx(plain.value, rel=1e-8)


def test_sc_qfi_is_stable_under_step_halving(coherent_state, trap):
    p4, t = 0.1, 0.05
    config = EvolutionConfig(dt=1e-3, t_final=t, sample_stride=50)
    center, _ = evolve(quenched(coherent_state, trap, p4), config)
    density = density_data(center.C, center.basis)

    def qfi_at(delta):
        plus, _ = evolve(quenched(coherent_state, trap, p4 + delta), config)
        minus, _ = evolve(quenched(coherent_state, trap, p4 - delta), config)
        deriv = parameter_derivatives(plus, minus, delta)
        return qfi_pure_state(center, deriv, density).value

    assert qfi_at(5e-4) == pytest.approx(qfi_at(1e-3), rel=1e-4)


@pytest.mark.slow
@pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
def test_frozen_qfi_follows_chain_rule_at_reference_size(t):
    N, p4, delta = 10, 0.1, 1e-4
    grid = build_grid(8.0, 257)
    trap = PotentialParams(p4=p4)
    state0 = prepare_initial_state(grid, trap, N, 2, 0.1 / N, StateKind.COHERENT)
    config = EvolutionConfig(
        dt=1e-4, t_final=t, sample_stride=100000, frozen_orbitals=True
    )

    def final(tilt):
        state, _ = evolve(quenched(state0, trap, tilt), config)
        return state

    center = final(p4)
    deriv = parameter_derivatives(final(p4 + delta), final(p4 - delta), delta)
    report = qfi_pure_state(center, deriv, density_data(center.C, center.basis))
    slope = dipole_difference(grid, state0.orbitals[0], state0.orbitals[1])
    expected = chain_rule_qfi(tmi_qfi_analytic(StateKind.COHERENT, N, t), slope)
    assert report.value == pytest.approx(expected, rel=1e-4)
