import math

import numpy as np
import pytest

from lilypad_brw.environment import (Environment, ScalingConstants, derive_scaling,
                                     sample_environment, with_potential)
from lilypad_brw.errors import InvalidParameter, SnapshotError
from lilypad_brw.pam_solver import (pam_growth, pam_hitting, pam_maximizer,
                                    small_time_log_u, solve_pam)

from oracles import expm_taylor, generator, log_heat_oracle, oracle_crossing


def flat_env(d, R, c, T=math.e):
    sc = ScalingConstants.lattice_units(d, T=T)
    coords = with_potential(sc, R).coords.copy()
    return Environment(sc, R, coords, np.full(len(coords), float(c)))


def max_log_gap(field, env):
    gap = 0.0
    for k in range(1, len(field.time_grid)):
        ref = log_heat_oracle(env, field.time_grid[k])
        gap = max(gap, float(np.max(np.abs(field.logu[k] - ref))))
    return gap


@pytest.mark.parametrize("d,R,seed", [(1, 12.5, 0), (1, 12.5, 1), (2, 3.5, 2), (2, 3.5, 3)])
def test_matches_matrix_exponential(d, R, seed):
    sc = ScalingConstants.lattice_units(d)
    rng = np.random.default_rng(seed)
    base = with_potential(sc, R)
    env = Environment(sc, R, base.coords.copy(), 1.0 + 4.0 * rng.random(base.n))
    assert env.n <= 25
    field = solve_pam(env, 2.0 / sc.T, 4)
    assert max_log_gap(field, env) <= 1e-6


def test_matches_matrix_exponential_on_pareto_draw():
    sc = derive_scaling(1, 3.0, 10.0)
    env = sample_environment(sc, 12.5 / sc.rT, 5)
    field = solve_pam(env, 0.3, 3)
    assert max_log_gap(field, env) <= 1e-6


def test_initial_condition_is_delta():
    env = flat_env(2, 3.5, 2.0)
    field = solve_pam(env, 1.0, 2)
    assert field.logu[0, env.origin] == 0.0
    assert np.all(np.isneginf(np.delete(field.logu[0], env.origin)))
    zero = solve_pam(env, 0.0, 1)
    assert np.array_equal(zero.logu[0], zero.logu[1])


def test_small_time_series_against_exact_exponential():
    env = flat_env(2, 3.5, 3.0)
    t0 = 1e-3
    ref = np.log(expm_taylor(generator(env), t0)[:, env.origin])
    assert np.max(np.abs(small_time_log_u(env, t0) - ref)) <= 1e-5


def test_zero_potential_conserves_mass_with_leak():
    sc = ScalingConstants.lattice_units(1)
    env = Environment(sc, 4.5, with_potential(sc, 4.5).coords.copy(), np.zeros(9))
    field = solve_pam(env, 3.0 / sc.T, 6)
    for k in range(len(field.time_grid)):
        mass = float(np.exp(field.logu[k]).sum())
        assert abs(mass + field.leak[k] - 1.0) <= 1e-8
    assert field.leak[-1] > 0


def test_constant_potential_multiplies_by_exponential():
    c = 2.5
    zero = Environment(*_coords_and(1, 4.5, 0.0))
    flat = Environment(*_coords_and(1, 4.5, c))
    s = 1.5
    T = zero.scaling.T
    a = solve_pam(zero, s / T, 3)
    b = solve_pam(flat, s / T, 3)
    for k in range(1, 4):
        t = a.time_grid[k]
        ratio = np.exp(b.logu[k] - a.logu[k])
        assert np.max(np.abs(ratio / math.exp(c * t) - 1.0)) <= 1e-8


def _coords_and(d, R, c):
    sc = ScalingConstants.lattice_units(d)
    coords = with_potential(sc, R).coords.copy()
    return sc, R, coords, np.full(len(coords), c)


def test_growth_examples():
    sc = derive_scaling(1, 3.0, 20.0)
    env = sample_environment(sc, 1.0, 1)
    field = solve_pam(env, 0.5, 5)
    k = field.grid_index(0.5)
    lam = pam_growth(field, 0.5)
    expected = np.maximum(field.logu[k], 0) / (sc.aT * sc.T)
    assert np.array_equal(lam, expected)
    assert np.all(pam_growth(field, 0.0) == 0.0)
    with pytest.raises(SnapshotError):
        pam_growth(field, 0.33)
    assert pam_maximizer(field, 0.5) == int(np.argmax(field.logu[k]))


def test_spike_attracts_the_maximum():
    sc = ScalingConstants.lattice_units(1)
    env = with_potential(sc, 4.5, {(2,): 12.0})
    field = solve_pam(env, 4.0 / sc.T, 4)
    assert pam_maximizer(field, 4.0 / sc.T) == env.site_index((2,))
    grid = field.logu[-1]
    assert grid[env.site_index((2,))] > grid[env.site_index((-2,))] + 5


def test_hitting_times_against_oracle_crossing():
    sc = ScalingConstants.lattice_units(1)
    env = with_potential(sc, 4.5, {(2,): 6.0, (-1,): 3.0})
    horizon = 3.0
    field = solve_pam(env, horizon / sc.T, 12)
    hits = pam_hitting(field)
    assert hits[env.origin] == 0.0
    for i in range(env.n):
        if i == env.origin:
            continue
        micro = hits[i] * sc.T
        if math.isfinite(micro):
            assert micro == pytest.approx(oracle_crossing(env, i, horizon), rel=1e-6)
        else:
            assert expm_taylor(generator(env), horizon)[i, env.origin] < 1.0
    coarse = pam_hitting(field, refine=False)
    assert np.all(coarse >= hits - 1e-15)


def test_rejects_bad_arguments():
    env = flat_env(1, 2.5, 2.0)
    with pytest.raises(InvalidParameter):
        solve_pam(env, 1.0, 0)
    with pytest.raises(InvalidParameter):
        solve_pam(env, -1.0, 2)


def test_step_statistics_are_recorded():
    env = flat_env(2, 3.5, 3.0)
    field = solve_pam(env, 1.0, 2)
    st = field.stats
    assert st.accepted > 0
    assert st.activations == env.n - 1
    assert 0 < st.min_step <= st.max_step
