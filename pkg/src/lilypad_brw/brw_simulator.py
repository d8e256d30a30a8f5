"""Exact Gillespie simulation of the branching random walk on a window.

Each particle jumps to each of its ``2d`` neighbours at rate 1 and splits
in two at rate ``xi(z)``.  Particles are exchangeable, so the state is the
vector of per-site counts and the next event site is drawn with weight
``count(z) * (2d + xi(z))`` from a Fenwick tree.  A particle that jumps
off the window is absorbed and counted in ``leak``.

A second, smaller count tracks the particles at the origin that have
never moved; the moment checks on the stay-at-origin process use it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .environment import BRW_STREAM, Environment, rng_stream
from .errors import InvalidParameter, SnapshotError

RATE_CHECK_EVERY = 10_000


@dataclass(frozen=True)
class Caps:
    """Hard limits on a run.  ``fluid_threshold`` must stay ``None``."""

    max_population: int = 10_000_000
    max_events: int = 100_000_000
    fluid_threshold: Optional[float] = None


@dataclass(eq=False)
class BRWRecord:
    """Result of one run.

    Times in ``first_hit`` and ``thresh_hit`` are microscopic; snapshot
    keys are the requested macroscopic times.  A snapshot that the run
    never reached (truncation) maps to ``None``.
    """

    env: Environment
    t_end: float
    snapshot_times: tuple
    snapshots: dict
    stayers: dict
    first_hit: np.ndarray
    thresh_hit: np.ndarray
    leak: int = 0
    events: int = 0
    truncated: bool = False
    reason: str = ""
    seed: Optional[int] = None
    replicate: int = 0

    def counts(self, t: float) -> np.ndarray:
        key = snapshot_key(self, t)
        value = self.snapshots[key]
        if value is None:
            raise SnapshotError(f"snapshot at t={t} is missing: run truncated ({self.reason})")
        return value

    def total(self, t: float) -> float:
        return float(self.counts(t).sum())


def snapshot_key(record: BRWRecord, t: float) -> float:
    for key in record.snapshot_times:
        if key == t or math.isclose(key, t, rel_tol=1e-12, abs_tol=1e-15):
            return key
    raise SnapshotError(f"t={t} is not a snapshot time; have {list(record.snapshot_times)}")


class _RateTree:
    """Fenwick tree over per-site rates with prefix-sum search."""

    def __init__(self, n: int):
        self.n = n
        self.tree = [0.0] * (n + 1)
        self.top = 1 << max(n.bit_length() - 1, 0)

    def add(self, i: int, delta: float) -> None:
        i += 1
        tree = self.tree
        while i <= self.n:
            tree[i] += delta
            i += i & -i

    def find(self, target: float) -> int:
        """Smallest index whose prefix sum exceeds ``target``."""
        pos = 0
        tree = self.tree
        step = self.top
        while step:
            nxt = pos + step
            if nxt <= self.n and tree[nxt] <= target:
                pos = nxt
                target -= tree[nxt]
            step >>= 1
        return min(pos, self.n - 1)


class _Uniforms:
    """Buffered uniforms on (0, 1] from a counter-based stream."""

    def __init__(self, rng: np.random.Generator, block: int = 4096):
        self.rng = rng
        self.block = block
        self.buf: list = []
        self.pos = 0

    def __call__(self) -> float:
        if self.pos >= len(self.buf):
            self.buf = (1.0 - self.rng.random(self.block)).tolist()
            self.pos = 0
        u = self.buf[self.pos]
        self.pos += 1
        return u


def simulate(env: Environment, t_end: float, snapshot_times: Sequence[float] = (),
             seed: int = 0, caps: Caps = Caps(), replicate: int = 0) -> BRWRecord:
    """Run one BRW from a single particle at the origin up to macro time ``t_end``.

    The microscopic horizon is ``t_end * T``.  Snapshots are the counts
    after the last event at or before each requested time.  Hitting caps
    ends the run early with ``truncated`` set; it is not an error.
    """
    if t_end < 0:
        raise InvalidParameter(f"t_end must be nonnegative, got {t_end}")
    if caps.fluid_threshold is not None:
        raise InvalidParameter("the fluid approximation is not available; leave fluid_threshold unset")
    times = tuple(sorted(float(t) for t in snapshot_times))
    if any(t < 0 or t > t_end for t in times):
        raise InvalidParameter(f"snapshot times must lie in [0, t_end]; got {times}")
    sc = env.scaling
    T = sc.T
    horizon = t_end * T
    snap_micro = [t * T for t in times]

    n, dd = env.n, 2 * sc.d
    xi = env.xi.tolist()
    site_rate = [dd + x for x in xi]
    branch_p = [x / (dd + x) for x in xi]
    nbrs = env.neighbors.tolist()
    origin = env.origin
    threshold = math.exp(sc.muT)

    counts = [0] * n
    first_hit = [math.inf] * n
    thresh_hit = [math.inf] * n
    tree = _RateTree(n)
    uniform = _Uniforms(rng_stream(seed, BRW_STREAM, replicate))

    counts[origin] = 1
    stay = 1
    first_hit[origin] = 0.0
    if threshold <= 1:
        thresh_hit[origin] = 0.0
    tree.add(origin, site_rate[origin])
    total, comp = site_rate[origin], 0.0
    population = 1
    leak = 0
    events = 0
    clock = 0.0
    snapshots: dict = {}
    stayers: dict = {}
    next_snap = 0
    truncated, reason = False, ""

    while True:
        wait = -math.log(uniform()) / total
        t_next = clock + wait
        while next_snap < len(times) and snap_micro[next_snap] < t_next:
            snapshots[times[next_snap]] = np.array(counts, dtype=float)
            stayers[times[next_snap]] = stay
            next_snap += 1
        if t_next > horizon:
            break
        if events >= caps.max_events:
            truncated, reason = True, f"max_events={caps.max_events}"
            break
        if population >= caps.max_population:
            truncated, reason = True, f"max_population={caps.max_population}"
            break
        clock = t_next
        events += 1

        z = tree.find(uniform() * total)
        while counts[z] == 0:  # float drift in the tree can land on an empty slot
            z = tree.find(uniform() * total)
        u = uniform()
        if u <= branch_p[z]:
            if z == origin and uniform() * counts[z] < stay:
                stay += 1
            counts[z] += 1
            population += 1
            delta = site_rate[z]
            tree.add(z, delta)
            if counts[z] >= threshold and thresh_hit[z] == math.inf:
                thresh_hit[z] = clock
        else:
            if z == origin and uniform() * counts[z] < stay:
                stay -= 1
            k = min(int((u - branch_p[z]) / (1.0 - branch_p[z]) * dd), dd - 1)
            w = nbrs[z][k]
            counts[z] -= 1
            tree.add(z, -site_rate[z])
            delta = -site_rate[z]
            if w < 0:
                leak += 1
                population -= 1
            else:
                counts[w] += 1
                tree.add(w, site_rate[w])
                delta += site_rate[w]
                if first_hit[w] == math.inf:
                    first_hit[w] = clock
                if counts[w] >= threshold and thresh_hit[w] == math.inf:
                    thresh_hit[w] = clock
        # Kahan-compensated running total
        y = delta - comp
        s = total + y
        comp = (s - total) - y
        total = s
        if events % RATE_CHECK_EVERY == 0:
            exact = math.fsum(c * r for c, r in zip(counts, site_rate))
            if not math.isclose(total, exact, rel_tol=1e-9, abs_tol=1e-9):
                raise RuntimeError(f"rate drift: running {total} vs recomputed {exact}")
            total, comp = exact, 0.0
        if population == 0:
            break

    for t in times[next_snap:]:
        if truncated:
            snapshots[t], stayers[t] = None, None
        else:
            snapshots[t] = np.array(counts, dtype=float)
            stayers[t] = stay
    return BRWRecord(
        env=env, t_end=float(t_end), snapshot_times=times, snapshots=snapshots,
        stayers=stayers, first_hit=np.array(first_hit), thresh_hit=np.array(thresh_hit),
        leak=leak, events=events, truncated=truncated, reason=reason,
        seed=seed, replicate=replicate,
    )


def simulate_replicates(env: Environment, t_end: float, snapshot_times: Sequence[float],
                        seed: int, replicates: int, caps: Caps = Caps(),
                        threads: int = 1) -> list[BRWRecord]:
    """Independent runs on per-replicate streams, returned in replicate order."""
    def one(i: int) -> BRWRecord:
        return simulate(env, t_end, snapshot_times, seed, caps, replicate=i)

    if threads <= 1:
        return [one(i) for i in range(replicates)]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(replicates)))


def rescaled_counts(record: BRWRecord, t: float) -> np.ndarray:
    """``M_T(z, t) = log_+ N(z, tT) / (a(T) T)`` per site."""
    counts = record.counts(t)
    sc = record.env.scaling
    with np.errstate(divide="ignore"):
        logs = np.where(counts > 1, np.log(np.maximum(counts, 1.0)), 0.0)
    return logs / (sc.aT * sc.T)


def hitting_fields(record: BRWRecord) -> tuple[np.ndarray, np.ndarray]:
    """Macro first-hit times ``H_T`` and threshold hitting times ``H'_T``."""
    T = record.env.scaling.T
    return record.first_hit / T, record.thresh_hit / T
