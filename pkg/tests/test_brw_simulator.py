import math

import numpy as np
import pytest

from lilypad_brw.brw_simulator import (Caps, _RateTree, hitting_fields, rescaled_counts,
                                       simulate, simulate_replicates)
from lilypad_brw.environment import (Environment, ScalingConstants, derive_scaling,
                                     sample_environment, with_potential)
from lilypad_brw.errors import InvalidParameter, SnapshotError

from oracles import per_particle_brw


def flat_env(d, R, c, T=math.e):
    sc = ScalingConstants.lattice_units(d, T=T)
    coords = with_potential(sc, R).coords.copy()
    return Environment(sc, R, coords, np.full(len(coords), float(c)))


def test_rate_tree_find_matches_cumulative_search():
    rng = np.random.default_rng(0)
    w = rng.random(37)
    w[[3, 10, 11]] = 0.0
    tree = _RateTree(len(w))
    for i, x in enumerate(w):
        tree.add(i, x)
    cum = np.cumsum(w)
    for u in rng.random(500) * cum[-1]:
        assert tree.find(u) == int(np.searchsorted(cum, u, side="right"))


def test_pure_birth_at_a_single_site():
    # one site with every jump leaving the window: births at rate c, exits at rate 2
    env = flat_env(1, 1.0, 3.0)
    assert env.n == 1
    runs = simulate_replicates(env, 1.0 / env.scaling.T, [1.0 / env.scaling.T], 5, 4000)
    totals = np.array([r.total(1.0 / env.scaling.T) for r in runs])
    se = totals.std(ddof=1) / math.sqrt(len(totals))
    assert abs(totals.mean() - math.e) <= 4 * se  # growth rate c - 2d = 1
    stayers = np.array([r.stayers[1.0 / env.scaling.T] for r in runs])
    assert np.array_equal(stayers, totals)


def test_determinism_and_thread_independence():
    sc = derive_scaling(1, 3.0, 20.0)
    env = sample_environment(sc, 0.3, 3)
    t = 0.2
    a = simulate_replicates(env, t, [t / 2, t], 9, 6)
    b = simulate_replicates(env, t, [t / 2, t], 9, 6, threads=3)
    for x, y in zip(a, b):
        assert x.events == y.events
        assert np.array_equal(x.counts(t), y.counts(t))
        assert np.array_equal(x.first_hit, y.first_hit)
    assert any(x.events != a[0].events for x in a[1:])
    c = simulate(env, t, [t], 10)
    assert c.events != a[0].events or not np.array_equal(c.counts(t), a[0].counts(t))


def test_truncation_marks_missing_snapshots():
    env = flat_env(1, 3.5, 6.0)
    T = env.scaling.T
    rec = simulate(env, 3.0 / T, [0.1 / T, 3.0 / T], 1, Caps(max_population=200))
    assert rec.truncated and "max_population" in rec.reason
    assert rec.counts(0.1 / T).sum() >= 1
    with pytest.raises(SnapshotError):
        rec.counts(3.0 / T)
    with pytest.raises(SnapshotError):
        rec.counts(1.0 / T)
    rec = simulate(env, 3.0 / T, [3.0 / T], 1, Caps(max_events=50))
    assert rec.truncated and rec.events == 50


def test_rejects_bad_arguments():
    env = flat_env(1, 2.5, 2.0)
    with pytest.raises(InvalidParameter):
        simulate(env, -1.0)
    with pytest.raises(InvalidParameter):
        simulate(env, 1.0, [2.0])
    with pytest.raises(InvalidParameter):
        simulate(env, 1.0, caps=Caps(fluid_threshold=100.0))


def test_rescaled_counts_examples():
    env = flat_env(1, 2.5, 2.0)
    rec = simulate(env, 0.0, [0.0], 0)
    assert np.all(rescaled_counts(rec, 0.0) == 0.0)  # one particle: log 1 = 0
    counts = np.zeros(env.n)
    counts[env.origin] = math.e ** 5
    rec.snapshots[0.0] = counts
    out = rescaled_counts(rec, 0.0)
    assert out[env.origin] == pytest.approx(5.0 / env.scaling.T, rel=1e-14)
    sc = derive_scaling(1, 2.0, 20.0)
    env2 = Environment(sc, env.window_radius / sc.rT, env.coords.copy(), env.xi.copy())
    rec2 = simulate(env2, 0.0, [0.0], 0)
    c2 = np.zeros(env2.n)
    c2[env2.origin] = math.exp(sc.aT * sc.T * 0.5)
    rec2.snapshots[0.0] = c2
    assert rescaled_counts(rec2, 0.0)[env2.origin] == pytest.approx(0.5, rel=1e-12)


def test_hitting_fields_and_occupied_set_connectivity():
    env = flat_env(2, 4.5, 2.5)
    T = env.scaling.T
    times = [k / (4 * T) for k in range(1, 5)]
    rec = simulate(env, 1.0 / T, times, 2)
    first, thresh = hitting_fields(rec)
    assert first[env.origin] == 0.0
    assert np.all(thresh >= first)
    reached = np.isfinite(first)
    for i in np.flatnonzero(reached):
        if i == env.origin:
            continue
        nb = env.neighbors[i]
        assert any(w >= 0 and first[w] < first[i] for w in nb)  # arrived from a visited neighbour
    for t in times:
        occupied = rec.counts(t) > 0
        assert np.all(reached[occupied])
        assert np.all(first[occupied] <= t * T)


def test_totals_never_decrease_without_boundary_loss():
    env = flat_env(1, 30.5, 2.0)
    T = env.scaling.T
    times = [k / (10 * T) for k in range(11)]
    for rep in range(20):
        rec = simulate(env, 1.0 / T, times, 4, replicate=rep)
        assert rec.leak == 0
        totals = [rec.total(t) for t in times]
        assert all(b >= a for a, b in zip(totals, totals[1:]))


def test_three_site_law_matches_per_particle_simulation():
    """Site-count and per-particle dynamics agree in law on a 3-site window."""
    sc = ScalingConstants.lattice_units(1)
    env = with_potential(sc, 1.5, {(-1,): 2.0, (0,): 1.0, (1,): 3.0})
    s = 1.0
    reps = 3000
    runs = simulate_replicates(env, s / sc.T, [s / sc.T], 21, reps)
    ours = np.array([[r.total(s / sc.T), r.leak] for r in runs])
    rng = np.random.default_rng(77)
    theirs = np.array([per_particle_brw(env.xi, env.neighbors, env.origin, s, rng)
                       for _ in range(reps)], dtype=float)
    for col in range(2):
        a, b = ours[:, col], theirs[:, col]
        se = math.sqrt(a.var(ddof=1) / reps + b.var(ddof=1) / reps)
        assert abs(a.mean() - b.mean()) <= 4 * se


def test_snapshot_times_are_matched_with_tolerance():
    env = flat_env(1, 2.5, 2.0)
    rec = simulate(env, 0.3, [0.1, 0.3], 0)
    assert rec.counts(0.1 * (1 + 1e-14)) is rec.counts(0.1)


@pytest.mark.parametrize("c,d", [(3.0, 1), (5.0, 2), (2.5, 1)])
def test_stayer_second_moment_formula_matches_birth_death_variance(c, d):
    # stayers breed at rate c and leave at rate 2d: a linear birth-death process
    lam, mu = c, 2.0 * d
    g = lam - mu
    for s in (0.3, 1.0, 2.0):
        mean = math.exp(g * s)
        textbook = mean ** 2 + (lam + mu) / g * mean * (mean - 1)
        closed = 2 * c / g * math.exp(2 * g * s) + (1 - 2 * c / g) * mean
        assert closed == pytest.approx(textbook, rel=1e-13)
