from pathlib import Path

import numpy as np
import pytest

from selfmetro.core.errors import ConfigError, NumericalError
from selfmetro.core.fock import (
    build_condensate,
    density_data,
    enumerate_configs,
    one_body_rdm,
)
from selfmetro.core.grid import (
    eval_potential,
    lowest_eigenstates,
    orthonormality_defect,
    stack_orbitals,
)
from selfmetro.core.mctdh import (
    TRAJECTORY_COLUMNS,
    EvolutionConfig,
    ManyBodyState,
    TrajectoryLog,
    coefficient_rhs,
    evolve,
    keep_states,
    natural_occupations,
    orbital_rhs,
    prepare_initial_state,
    regularized_inverse,
    state_overlap,
    step,
    two_mode_fraction,
    unitary_remix,
)
from selfmetro.core.scenario import load_scenario

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def test_regularized_inverse():
    rho = np.diag([3.0, 1.0])
    np.testing.assert_allclose(regularized_inverse(rho, 1e-8), np.diag([1 / 3.0, 1.0]))
    singular = regularized_inverse(np.diag([4.0, 0.0]), 1e-8)
    assert singular[1, 1] == pytest.approx(1e8)
    assert np.all(np.isfinite(singular))


def test_two_mode_fraction():
    assert two_mode_fraction([0.1, 2.9, 1.0], 4) == pytest.approx(0.975)
    with pytest.raises(ConfigError):
        two_mode_fraction([4.0], 4)


def test_initial_state_is_valid(coherent_state):
    assert coherent_state.N == 4
    assert coherent_state.M == 2
    assert np.vdot(coherent_state.C, coherent_state.C).real == pytest.approx(1.0)
    assert orthonormality_defect(coherent_state.grid, coherent_state.orbitals) < 1e-10
    occupations = natural_occupations(one_body_rdm(coherent_state.C, coherent_state.basis))
    assert occupations.sum() == pytest.approx(4.0)


def test_extra_modes_start_empty(small_grid, trap):
    state = prepare_initial_state(small_grid, trap, 3, 4, 0.05, "cat")
    assert state.M == 4
    rho1 = one_body_rdm(state.C, state.basis)
    np.testing.assert_allclose(np.diag(rho1).real[2:], 0.0, atol=1e-14)
    assert orthonormality_defect(small_grid, state.orbitals) < 1e-10


def test_state_shape_is_checked(coherent_state):
    fields = dict(coherent_state)
    fields["C"] = np.ones(3)
    with pytest.raises(ValueError):
        ManyBodyState(**fields)


def test_self_overlap(cat_state):
    assert abs(state_overlap(cat_state, cat_state) - 1.0) < 1e-12


def test_remix_keeps_the_state(coherent_state):
    angle = 0.4
    U = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    mixed = unitary_remix(coherent_state, U)
    assert abs(abs(state_overlap(coherent_state, mixed)) - 1.0) < 1e-10

    before = natural_occupations(one_body_rdm(coherent_state.C, coherent_state.basis))
    after = natural_occupations(one_body_rdm(mixed.C, mixed.basis))
    np.testing.assert_allclose(after, before, atol=1e-10)
    with pytest.raises(ConfigError):
        unitary_remix(coherent_state, np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_trajectory_conservation(coherent_state, fast_evolution):
    final, log = evolve(coherent_state, fast_evolution)
    assert final.t == pytest.approx(0.05)
    assert log.times[0] == 0.0
    assert log.times[-1] == pytest.approx(0.05)
    assert len(log.samples) == 6
    assert np.all(np.diff(log.times) > 0)
    for sample in log.samples:
        assert sample.norm_defect < 1e-8
        assert sample.trace_defect < 1e-10
        assert sample.energy_drift < 1e-6
        assert sample.rho_tm > 0.98
    assert orthonormality_defect(final.grid, final.orbitals) < 1e-10
    assert len(log.rows()[0]) == len(TRAJECTORY_COLUMNS)


def test_frozen_orbitals_do_not_move(cat_state):
    config = EvolutionConfig(dt=1e-3, t_final=0.02, sample_stride=5, frozen_orbitals=True)
    final, log = evolve(cat_state, config)
    np.testing.assert_array_equal(final.orbitals, cat_state.orbitals)
    np.testing.assert_allclose(np.abs(final.C), np.abs(cat_state.C), atol=1e-6)
    assert all(s.orthonormality_defect == 0.0 for s in log.samples)


def test_sample_times_include_the_end(coherent_state):
    config = EvolutionConfig(dt=1e-3, t_final=0.007, sample_stride=3, keep_states=True)
    _, log = evolve(coherent_state, config)
    assert log.times == pytest.approx([0.0, 0.003, 0.006, 0.007])
    states = keep_states(log, [0.0, 0.006])
    assert states[1].t == pytest.approx(0.006)
    with pytest.raises(ConfigError):
        log.state_at(0.0045)


def test_log_times_must_increase(coherent_state, fast_evolution):
    _, log = evolve(coherent_state, fast_evolution.model_copy(update={"t_final": 0.01}))
    fresh = TrajectoryLog()
    fresh.append(log.samples[1])
    with pytest.raises(NumericalError):
        fresh.append(log.samples[0])


def test_oversized_step_is_rejected(coherent_state):
    with pytest.raises(NumericalError):
        step(coherent_state, EvolutionConfig(dt=0.5, t_final=0.5))


def _random_unitary(rng, size):
    z = rng.normal(size=(size, size)) + 1j * rng.normal(size=(size, size))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def _scrambled(state, rng):
    """Random coefficients on the state's orbitals, remixed by a random unitary."""
    C = rng.normal(size=state.basis.size) + 1j * rng.normal(size=state.basis.size)
    mixed = state.evolved(C / np.linalg.norm(C), state.orbitals, state.t)
    return unitary_remix(mixed, _random_unitary(rng, state.M))


def _free_eigenstate(grid, trap, N, M):
    """g = 0 state of N bosons in the lowest mode, orbitals the untilted eigenstates."""
    potential = eval_potential(trap.with_tilt(0.0), grid)
    eigenpairs = lowest_eigenstates(grid, potential, M)
    basis = enumerate_configs(N, M)
    state = ManyBodyState(
        grid=grid,
        basis=basis,
        C=build_condensate(basis),
        orbitals=stack_orbitals(grid, [psi for _, psi in eigenpairs]),
        potential=potential,
        g=0.0,
    )
    return state, eigenpairs[0][0]


@pytest.mark.parametrize("M", [2, 4])
def test_orbital_rhs_is_orthogonal_to_the_orbitals(small_grid, trap, rng, M):
    state = _scrambled(prepare_initial_state(small_grid, trap, 3, M, 0.05, "cat"), rng)
    density = density_data(state.C, state.basis)
    rhs = orbital_rhs(state, density, state.g, state.potential)
    overlaps = small_grid.spacing * (state.orbitals.conj() @ rhs.T)
    assert np.max(np.abs(overlaps)) < 1e-8
    assert np.max(np.abs(rhs)) > 1e-3


def test_orbital_rhs_vanishes_on_free_eigen_orbitals(small_grid, trap):
    state, _ = _free_eigenstate(small_grid, trap, 3, 2)
    density = density_data(state.C, state.basis)
    rhs = orbital_rhs(state, density, 0.0, state.potential)
    assert np.max(np.abs(rhs)) < 1e-9


def test_frozen_orbital_rhs_is_zero(coherent_state):
    density = density_data(coherent_state.C, coherent_state.basis)
    rhs = orbital_rhs(
        coherent_state,
        density,
        coherent_state.g,
        coherent_state.potential,
        frozen_orbitals=True,
    )
    assert rhs.shape == coherent_state.orbitals.shape
    assert not np.any(rhs)


def test_coefficient_rhs_of_an_eigenstate_is_a_pure_phase(small_grid, trap):
    state, ground = _free_eigenstate(small_grid, trap, 3, 2)
    np.testing.assert_allclose(
        coefficient_rhs(state), -1j * 3 * ground * state.C, atol=1e-9
    )


def test_coefficient_rhs_keeps_the_norm(small_grid, trap, rng):
    state = _scrambled(prepare_initial_state(small_grid, trap, 4, 3, 0.05, "cat"), rng)
    dC = coefficient_rhs(state)
    assert abs(np.vdot(state.C, dC).real) < 1e-12


def test_rk4_error_shrinks_sixteen_fold(coherent_state):
    def final(dt):
        state, _ = evolve(
            coherent_state, EvolutionConfig(dt=dt, t_final=0.08, sample_stride=1000)
        )
        return state

    coarse, medium, fine = final(4e-3), final(2e-3), final(1e-3)

    def distance(a, b):
        orbital = np.sqrt(a.grid.spacing) * np.linalg.norm(a.orbitals - b.orbitals)
        return np.linalg.norm(a.C - b.C) + orbital

    ratio = distance(coarse, medium) / distance(medium, fine)
    assert 13.0 < ratio < 19.0


def test_two_mode_fraction_survives_four_mode_remix(small_grid, trap, rng):
    state = prepare_initial_state(small_grid, trap, 3, 4, 0.05, "coherent")
    C = rng.normal(size=state.basis.size) + 1j * rng.normal(size=state.basis.size)
    state = state.evolved(C / np.linalg.norm(C), state.orbitals, 0.0)
    mixed = unitary_remix(state, _random_unitary(rng, 4))

    def fraction(s):
        return two_mode_fraction(natural_occupations(one_body_rdm(s.C, s.basis)), s.N)

    assert fraction(mixed) == pytest.approx(fraction(state), abs=1e-10)
    assert fraction(state) < 0.99


@pytest.mark.slow
def test_energy_is_conserved_at_reference_parameters():
    scenario = load_scenario(CONFIG_DIR / "default.conf")
    grid = scenario.grid.build()
    state = prepare_initial_state(
        grid, scenario.trap, scenario.N, scenario.M, scenario.g, "coherent"
    )
    config = scenario.evolution.to_config(t_final=2.0, sample_stride=1000)
    _, log = evolve(state, config)
    assert max(sample.energy_drift for sample in log.samples) < 1e-6
