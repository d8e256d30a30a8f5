"""Lilypad hitting times and growth fields.

The BRW lilypad hitting time ``h`` is a first-passage time on the complete
directed graph over the window, with passage time ``q |z - y| / xi_T(y)``
for the edge ``y -> z``.  The PAM lilypad hitting time ``tau`` routes
through a single intermediate site.  Both feed the cone envelopes ``m_T``
and ``lambda_T``.

Every macro distance is computed as ``integer micro distance / r(T)`` and
every edge cost as ``q * (dist / r(T)) / xi_T(y)``.  Keeping this one
operation order everywhere makes the Dijkstra labels reproducible by an
independent Bellman-Ford pass bit for bit.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from .environment import Environment, SiteKey, max_potential
from .errors import InvalidParameter, UnsettledSite

BRW = "BRW"
PAM = "PAM"

_CHUNK = 1024


@dataclass(frozen=True, eq=False)
class LilypadField:
    """Per-site hitting values with predecessor links.

    ``h`` holds ``h_T`` for ``kind == "BRW"`` and ``tau_T`` for
    ``kind == "PAM"``.  ``pred[i]`` is the site index attaining the final
    relaxation (``-1`` at the origin).  ``certified`` marks BRW values that
    the window truncation cannot have affected; it is ``None`` for PAM
    fields, which have no such certificate.
    """

    env: Environment
    h: np.ndarray
    pred: np.ndarray
    settle_order: np.ndarray
    kind: str
    certified: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class MassField:
    """Per-site real field at a fixed macroscopic time."""

    env: Environment
    t: float
    values: np.ndarray
    kind: str  # "mT", "lambdaT", "MT" or "LambdaT"


@dataclass(frozen=True, eq=False)
class SupportSet:
    """Sites whose hitting value is at most ``t``."""

    env: Environment
    mask: np.ndarray
    t: float
    source: str

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @property
    def macro(self) -> np.ndarray:
        return self.env.macro[self.mask]

    def __len__(self) -> int:
        return int(self.mask.sum())


def edge_costs(env: Environment, y: int) -> np.ndarray:
    """Passage times ``q |z - y| / xi_T(y)`` from site ``y`` to every site."""
    sc = env.scaling
    return sc.q * (env.distances_from(y) / sc.rT) / env.xiT[y]


def solve_hitting_times(env: Environment) -> LilypadField:
    """BRW lilypad hitting times by label-setting on the complete graph.

    Each iteration settles the unsettled site with the smallest label
    (lowest index on ties) and relaxes every other unsettled site from it.
    A heap buys nothing here since every settlement touches all sites.
    """
    n = env.n
    h = np.full(n, np.inf)
    pred = np.full(n, -1, dtype=np.int64)
    settled = np.zeros(n, dtype=bool)
    order = np.empty(n, dtype=np.int64)
    h[env.origin] = 0.0
    label = h.copy()
    for k in range(n):
        u = int(np.argmin(label))
        settled[u] = True
        order[k] = u
        label[u] = np.inf
        cand = h[u] + edge_costs(env, u)
        better = ~settled & ((cand < h) | ((cand == h) & (u < pred)))
        h[better] = cand[better]
        pred[better] = u
        label[better] = cand[better]
    field = LilypadField(env, h, pred, order, BRW)
    t_star = exactness_certificate(field, env.window_radius)
    return LilypadField(env, h, pred, order, BRW, certified=h < t_star)


def optimal_path(field: LilypadField, z: SiteKey) -> list[tuple]:
    """Predecessor chain ``[z, y_1, ..., 0]`` as micro-coordinate tuples."""
    env = field.env
    i = env.site_index(z)
    if not np.isfinite(field.h[i]):
        raise UnsettledSite(f"site {tuple(env.coords[i])} was never reached")
    path = [i]
    while field.pred[path[-1]] >= 0:
        path.append(int(field.pred[path[-1]]))
        if len(path) > env.n:
            raise RuntimeError("predecessor links contain a cycle")
    return [tuple(int(c) for c in env.coords[j]) for j in path]


def path_indices(field: LilypadField, i: int) -> list[int]:
    path = [i]
    while field.pred[path[-1]] >= 0:
        path.append(int(field.pred[path[-1]]))
    return path


def _block_distances(env: Environment, start: int, stop: int) -> np.ndarray:
    """Integer l1 micro distances from sites ``start:stop`` to every site."""
    cols = env.coords.T
    dist = np.zeros((stop - start, env.n), dtype=np.int64)
    for axis in range(env.d):
        dist += np.abs(cols[axis, start:stop, None] - cols[axis, None, :])
    return dist


def _cone_sup_naive(env: Environment, f: np.ndarray) -> np.ndarray:
    """``max_y f(y) - q |z - y|`` by direct scan, in row chunks."""
    sc = env.scaling
    out = np.empty(env.n)
    for start in range(0, env.n, _CHUNK):
        stop = min(start + _CHUNK, env.n)
        dist = _block_distances(env, start, stop)
        out[start:stop] = np.max(f[None, :] - sc.q * (dist / sc.rT), axis=1)
    return out


def _orthant_order(env: Environment, signs: tuple) -> np.ndarray:
    keys = [env.coords[:, a] * s for a, s in enumerate(signs)]
    return np.lexsort(keys[::-1])


def _cone_sup_envelope(env: Environment, f: np.ndarray, max_rounds: int = 8) -> np.ndarray:
    """Max-plus cone envelope by chamfer sweeps with source labels.

    Each site keeps the index of its best source ``y``; a neighbour's
    source is adopted if it scores higher when re-evaluated at the site
    with the exact l1 distance.  Values are therefore always of the form
    ``f(y) - q*(dist/r(T))``, identical in float to the direct scan.  One
    round is ``2^d`` orthant raster passes; rounds repeat until nothing
    changes.
    """
    sc = env.scaling
    coords = env.coords
    nbrs = env.neighbors
    src = np.arange(env.n)
    val = f.astype(float).copy()
    # back-neighbour column per axis and sign: the neighbour already visited
    orders = []
    for signs in itertools.product((1, -1), repeat=env.d):
        cols = [2 * a + (0 if s > 0 else 1) for a, s in enumerate(signs)]
        orders.append((_orthant_order(env, signs), cols))
    q, rT = sc.q, sc.rT
    coord_list = [tuple(c) for c in coords.tolist()]
    nbr_list = nbrs.tolist()
    val_list = val.tolist()
    src_list = src.tolist()
    f_list = f.tolist()
    for _ in range(max_rounds):
        changed = False
        for order, cols in orders:
            for i in order.tolist():
                best = val_list[i]
                best_src = src_list[i]
                zi = coord_list[i]
                for c in cols:
                    w = nbr_list[i][c]
                    if w < 0:
                        continue
                    y = src_list[w]
                    if y == best_src:
                        continue
                    zy = coord_list[y]
                    dist = sum(abs(a - b) for a, b in zip(zi, zy))
                    cand = f_list[y] - q * (dist / rT)
                    if cand > best or (cand == best and y < best_src):
                        best, best_src = cand, y
                if best_src != src_list[i]:
                    val_list[i] = best
                    src_list[i] = best_src
                    changed = True
        if not changed:
            return np.array(val_list)
    raise RuntimeError(f"cone envelope did not converge in {max_rounds} rounds")


def growth_sources(field: LilypadField, t: float) -> np.ndarray:
    """Self-terms ``xi_T(y) (t - h(y))_+``; unsettled sites contribute zero."""
    h = field.h
    elapsed = np.where(np.isfinite(h), np.maximum(t - h, 0.0), 0.0)
    return field.env.xiT * elapsed


def mass_field(field: LilypadField, t: float,
               mode: Literal["naive", "envelope"] = "envelope") -> MassField:
    """Lilypad particle field ``m_T(z, t) = sup_y xi_T(y)(t - h(y))_+ - q|z - y|``."""
    if t < 0:
        raise InvalidParameter(f"time must be nonnegative, got {t}")
    if field.kind != BRW:
        raise InvalidParameter("mass_field needs a BRW lilypad field")
    f = growth_sources(field, t)
    if mode == "naive":
        values = _cone_sup_naive(field.env, f)
    elif mode == "envelope":
        values = _cone_sup_envelope(field.env, f)
    else:
        raise InvalidParameter(f"unknown mode {mode!r}")
    return MassField(field.env, float(t), values, "mT")


def pam_tau(env: Environment) -> LilypadField:
    """PAM lilypad hitting times ``tau_T(z) = min_y q(|y| + |z - y|)/xi_T(y)``.

    The argmin ``y`` is stored as predecessor (the first index on ties).
    """
    sc = env.scaling
    via = env.norm / sc.rT
    tau = np.empty(env.n)
    pred = np.empty(env.n, dtype=np.int64)
    for start in range(0, env.n, _CHUNK):
        stop = min(start + _CHUNK, env.n)
        dist = _block_distances(env, start, stop)
        cost = sc.q * (via[None, :] + dist / sc.rT) / env.xiT[None, :]
        j = np.argmin(cost, axis=1)
        pred[start:stop] = j
        tau[start:stop] = cost[np.arange(stop - start), j]
    pred[env.origin] = -1
    order = np.lexsort((np.arange(env.n), tau))
    return LilypadField(env, tau, pred, order, PAM)


def pam_lambda(env: Environment, t: float, tau: LilypadField | None = None,
               check_alternate: bool = False) -> MassField | tuple[MassField, float]:
    """PAM lilypad field ``lambda_T(z, t) = max(sup_y xi_T(y) t - q|y| - q|z - y|, 0)``.

    With ``check_alternate`` the field is also evaluated in the form
    ``sup_y xi_T(y)(t - tau(y))_+ - q|z - y|`` and the largest absolute gap
    between the two is returned alongside.
    """
    if t < 0:
        raise InvalidParameter(f"time must be nonnegative, got {t}")
    sc = env.scaling
    f = env.xiT * t - sc.q * (env.norm / sc.rT)
    values = np.maximum(_cone_sup_naive(env, f), 0.0)
    out = MassField(env, float(t), values, "lambdaT")
    if not check_alternate:
        return out
    tau = tau if tau is not None else pam_tau(env)
    alt = _cone_sup_naive(env, growth_sources(tau, t))
    return out, float(np.max(np.abs(alt - values)))


def support(obj, t: float) -> SupportSet:
    """Sites whose hitting value is at most ``t`` (closed threshold).

    Accepts a :class:`LilypadField`, a BRW record or a PAM field.
    """
    if t < 0:
        raise InvalidParameter(f"time must be nonnegative, got {t}")
    if isinstance(obj, LilypadField):
        values = obj.h
        source = "s_T" if obj.kind == BRW else "s_T^PAM"
    elif hasattr(obj, "first_hit"):
        values = obj.first_hit / obj.env.scaling.T
        source = "S_T"
    elif hasattr(obj, "logu"):
        from .pam_solver import pam_hitting
        values = pam_hitting(obj)
        source = "S_T^PAM"
    else:
        raise InvalidParameter(f"cannot take the support of {type(obj).__name__}")
    return SupportSet(obj.env, values <= t, float(t), source)


def exactness_certificate(field: LilypadField, R: float) -> float:
    """Time ``t* = q R / max xi_T over L_T(0, R)``.

    No site outside ``B(0, R)`` is reached before ``t*``, so hitting times
    below ``t*`` cannot depend on the potential outside that ball.
    """
    if field.kind != BRW:
        raise InvalidParameter("certificate applies to BRW lilypad fields only")
    top = max_potential(field.env, R)
    return field.env.scaling.q * R / top if top > 0 else np.inf
