"""Parabolic Anderson equation on a window, integrated in log domain.

``u`` solves ``du/dt = Delta u + xi u`` with ``u(., 0) = delta_0`` and
``u = 0`` off the window.  Raw ``u`` overflows long before the times of
interest, so the solver evolves ``v = log u``:

    dv(z)/dt = xi(z) - 2d + sum_{w ~ z} exp(v(w) - v(z)),

with classical RK4 steps, step-doubling error control and Richardson
extrapolation.  The integration starts at a tiny positive time where
every reachable site already has a finite value given by the small-time
series of ``u``; starting all sites together avoids the artificially stiff
front that switching sites on one shell per step would create.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .environment import Environment
from .errors import InvalidParameter, SnapshotError, StiffnessError

DEFAULT_TOL = 1e-10


@dataclass
class IntegratorStats:
    accepted: int = 0
    rejected: int = 0
    activations: int = 0
    min_step: float = math.inf
    max_step: float = 0.0
    max_error: float = 0.0


@dataclass(eq=False)
class PamField:
    """``log u`` on a grid of microscopic times.

    ``logu[k, i]`` is ``log u(z_i, time_grid[k])``.  ``leak[k]`` is the
    mass absorbed by the boundary up to ``time_grid[k]`` (meaningful while
    it fits in a float).
    """

    env: Environment
    t_end: float
    time_grid: np.ndarray
    logu: np.ndarray
    leak: np.ndarray
    stats: IntegratorStats = field(default_factory=IntegratorStats)
    tol: float = DEFAULT_TOL
    boundary: str = "absorbing"

    @property
    def macro_times(self) -> np.ndarray:
        return self.time_grid / self.env.scaling.T

    def grid_index(self, t: float) -> int:
        """Index of macro time ``t`` in the grid."""
        times = self.macro_times
        k = int(np.argmin(np.abs(times - t)))
        if not math.isclose(times[k], t, rel_tol=1e-9, abs_tol=1e-12):
            raise SnapshotError(f"t={t} is not on the time grid")
        return k


class _LogHeat:
    """Right-hand side and stepping for the log-domain equation."""

    def __init__(self, env: Environment, tol: float, stats: IntegratorStats):
        self.n = env.n
        self.dd = 2 * env.d
        self.growth = env.xi - self.dd
        self.nbr = np.where(env.neighbors < 0, env.n, env.neighbors)
        self.n_out = (env.neighbors < 0).sum(axis=1)
        self.edge = self.n_out > 0
        self.tol = tol
        self.stats = stats

    def rhs(self, v: np.ndarray, live: np.ndarray) -> np.ndarray:
        ext = np.append(v, -np.inf)
        out = np.zeros(self.n)
        vl = v[live]
        with np.errstate(over="raise", invalid="raise"):
            coupling = np.exp(ext[self.nbr[live]] - vl[:, None]).sum(axis=1)
        out[live] = self.growth[live] + coupling
        return out

    def leak_rate(self, v: np.ndarray) -> float:
        ve = v[self.edge]
        with np.errstate(over="ignore"):
            return float((self.n_out[self.edge] * np.exp(ve)).sum())

    def rk4(self, v: np.ndarray, live: np.ndarray, h: float) -> tuple[np.ndarray, float]:
        k1 = self.rhs(v, live)
        k2 = self.rhs(v + 0.5 * h * k1, live)
        k3 = self.rhs(v + 0.5 * h * k2, live)
        k4 = self.rhs(v + h * k3, live)
        out = v.copy()
        out[live] = v[live] + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)[live]
        leak = (h / 6.0) * (self.leak_rate(v) + 2 * self.leak_rate(v + 0.5 * h * k1)
                            + 2 * self.leak_rate(v + 0.5 * h * k2) + self.leak_rate(v + h * k3))
        return out, leak

    def attempt(self, v: np.ndarray, step: float) -> tuple[np.ndarray, float, float]:
        """One step-doubled, extrapolated step: ``(new v, error estimate, leak)``.

        A trial stage that overflows returns an infinite error so the
        caller shrinks the step instead of failing.
        """
        live = np.isfinite(v)
        try:
            full, _ = self.rk4(v, live, step)
            half, l1 = self.rk4(v, live, 0.5 * step)
            two, l2 = self.rk4(half, live, 0.5 * step)
        except FloatingPointError:
            return v, math.inf, 0.0
        if not np.all(np.isfinite(two[live])):
            return v, math.inf, 0.0
        diff = two[live] - full[live]
        err = float(np.max(np.abs(diff))) / 15.0 if live.any() else 0.0
        new = two.copy()
        new[live] = two[live] + diff / 15.0
        return new, err, l1 + l2

    def advance(self, v: np.ndarray, t0: float, t1: float, h: float,
                record: Optional[list] = None) -> tuple[np.ndarray, float, float]:
        """Integrate from ``t0`` to ``t1``; returns ``(v, leak increment, next step)``.

        With ``record`` given, ``(t, v)`` is appended at the start and after
        every accepted step.
        """
        stats = self.stats
        t = t0
        leak = 0.0
        v = v.copy()
        if record is not None:
            record.append((t, v))
        while t < t1:
            last = h >= t1 - t
            step = t1 - t if last else h
            new, err, dl = self.attempt(v, step)
            if err <= self.tol:
                v = new
                leak += dl
                t = t1 if last else t + step
                if record is not None:
                    record.append((t, v))
                stats.accepted += 1
                stats.min_step = min(stats.min_step, step)
                stats.max_step = max(stats.max_step, step)
                stats.max_error = max(stats.max_error, err)
                grow = 5.0 if err == 0 else min(5.0, 0.9 * (self.tol / err) ** 0.2)
                if not last:
                    h = step * max(grow, 1.0)
            else:
                if step <= 1e-13 * t:
                    raise StiffnessError(f"step size underflow at t={t} (error {err:.3g})")
                stats.rejected += 1
                shrink = 0.1 if not math.isfinite(err) else max(0.1, 0.9 * (self.tol / err) ** 0.2)
                h = step * shrink
        return v, leak, h


def small_time_log_u(env: Environment, t0: float) -> np.ndarray:
    """``log u(., t0)`` from the two leading terms of the series of ``exp(t0 H)``.

    For a site at graph distance ``k`` from the origin the first nonzero
    term is ``t0^k/k! * P(z)`` with ``P`` the number of shortest lattice
    paths.  The lattice is bipartite, so the next term comes from the
    diagonal only: ``t0^(k+1)/(k+1)! * Q(z)`` where ``Q`` sums
    ``xi - 2d`` over the vertices of every shortest path.  Sites the origin
    cannot reach stay at ``-inf``.
    """
    g = env.xi - 2 * env.d
    nbrs = env.neighbors
    dist = np.full(env.n, -1, dtype=np.int64)
    log_p = np.full(env.n, -np.inf)
    ratio = np.zeros(env.n)  # Q / P
    o = env.origin
    dist[o], log_p[o], ratio[o] = 0, 0.0, g[o]
    layer = [o]
    k = 0
    while layer:
        k += 1
        nxt = sorted({int(w) for i in layer for w in nbrs[i] if w >= 0 and dist[w] < 0})
        for z in nxt:
            dist[z] = k
        for z in nxt:
            src = [int(w) for w in nbrs[z] if w >= 0 and dist[w] == k - 1]
            lp = np.array([log_p[w] for w in src])
            top = lp.max()
            wts = np.exp(lp - top)
            log_p[z] = top + math.log(wts.sum())
            ratio[z] = float((wts * ratio[src]).sum() / wts.sum()) + g[z]
        layer = nxt
    v = np.full(env.n, -np.inf)
    ok = dist >= 0
    kk = dist[ok].astype(float)
    corr = 1.0 + t0 * ratio[ok] / (kk + 1.0)
    v[ok] = log_p[ok] + kk * math.log(t0) - np.array([math.lgamma(x + 1) for x in kk]) + np.log(corr)
    return v


def start_time(env: Environment, first_grid: float) -> float:
    """Time at which the series start is accurate to well below the tolerance."""
    rate = float(np.max(np.abs(env.xi - 2 * env.d))) + 2 * env.d
    return min(1e-6 / rate, 1e-3 * first_grid)


def solve_pam(env: Environment, t_end: float, grid: int, tol: float = DEFAULT_TOL) -> PamField:
    """Integrate the PAM up to macro time ``t_end`` on ``grid`` equal intervals.

    The state at a tiny time ``t0`` comes from :func:`small_time_log_u`;
    from there every site is live and the log equation is stepped
    explicitly.
    """
    if env.n == 0:
        raise InvalidParameter("empty window")
    if grid < 1:
        raise InvalidParameter(f"grid must be at least 1, got {grid}")
    if t_end < 0:
        raise InvalidParameter(f"t_end must be nonnegative, got {t_end}")
    stats = IntegratorStats()
    eq = _LogHeat(env, tol, stats)
    times = np.linspace(0.0, t_end * env.scaling.T, grid + 1)
    logu = np.empty((grid + 1, env.n))
    leak = np.zeros(grid + 1)
    logu[0] = -np.inf
    logu[0, env.origin] = 0.0
    if t_end == 0:
        logu[:] = logu[0]
        return PamField(env, float(t_end), times, logu, leak, stats, tol)
    t0 = start_time(env, times[1])
    v = small_time_log_u(env, t0)
    stats.activations = int(np.isfinite(v).sum()) - 1
    h = t0 * 1e-3
    t_prev = t0
    for k in range(1, grid + 1):
        v, dl, h = eq.advance(v, t_prev, times[k], h)
        t_prev = times[k]
        logu[k] = v
        leak[k] = leak[k - 1] + dl
    return PamField(env, float(t_end), times, logu, leak, stats, tol)


def pam_growth(field: PamField, t: float) -> np.ndarray:
    """``Lambda_T(z, t) = log_+ u(z, tT) / (a(T) T)`` at a grid time ``t``."""
    k = field.grid_index(t)
    sc = field.env.scaling
    return np.maximum(field.logu[k], 0.0) / (sc.aT * sc.T)


def pam_hitting(field: PamField, refine: bool = True, rtol: float = 1e-9) -> np.ndarray:
    """Macro times ``T_T(z)`` at which ``u(z)`` first reaches 1; ``inf`` if never.

    The first grid time with ``log u >= 0`` is refined by re-integrating the
    bracketing grid interval once, locating the accepted step in which each
    site crosses, and bisecting on the length of a single step from its
    start.
    """
    env = field.env
    T = env.scaling.T
    reached = field.logu >= 0
    out = np.full(env.n, np.inf)
    hit_any = reached.any(axis=0)
    first = np.argmax(reached, axis=0)
    eq = _LogHeat(env, field.tol, IntegratorStats())
    pending: dict = {}
    for i in np.flatnonzero(hit_any):
        k = int(first[i])
        if k == 0 or not refine:
            out[i] = field.time_grid[k] / T
        else:
            pending.setdefault(k, []).append(int(i))
    for k, sites in sorted(pending.items()):
        lo_t, hi_t = field.time_grid[k - 1], field.time_grid[k]
        v0 = field.logu[k - 1]
        if k == 1:
            lo_t = start_time(env, hi_t)
            v0 = small_time_log_u(env, lo_t)
        traj: list = []
        eq.advance(v0, lo_t, hi_t, (hi_t - lo_t) / 64, record=traj)
        ts = np.array([t for t, _ in traj])
        vs = np.array([v for _, v in traj])
        for i in sites:
            above = np.flatnonzero(vs[:, i] >= 0)
            if len(above) == 0:  # re-integration landed a hair below zero
                out[i] = hi_t / T
                continue
            j = int(above[0])
            if j == 0:
                out[i] = ts[0] / T
                continue
            base_t, base_v = ts[j - 1], vs[j - 1]
            a, b = 0.0, ts[j] - base_t
            while b - a > rtol * max(base_t + b, 1.0):
                mid = 0.5 * (a + b)
                vm, _, _ = eq.attempt(base_v, mid)
                if vm[i] >= 0:
                    b = mid
                else:
                    a = mid
            out[i] = (base_t + b) / T
    return out


def pam_maximizer(field: PamField, t: float) -> int:
    """Site index maximising ``u(., tT)``; lowest index on ties."""
    return int(np.argmax(field.logu[field.grid_index(t)]))
