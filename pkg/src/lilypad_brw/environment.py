"""Pareto random environment on a finite lattice window.

Sites are stored by integer micro-coordinates in ``Z^d``; macro positions
are ``micro / r(T)``.  All distances are l1.  The window is the open l1
ball ``{z : |z| < R}`` in macro units, enumerated in lexicographic order
of the micro-coordinates, which is also the tie-breaking order used by the
solvers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .errors import InvalidParameter, WindowError

SiteKey = Union[int, Sequence[int]]

# spawn-key prefixes keep environment and particle streams apart
ENV_STREAM = 0
BRW_STREAM = 1


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for stream ``key`` derived from ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class ScalingConstants:
    """Rescaling constants for potential, space and time at parameter ``T``."""

    d: int
    alpha: float
    T: float
    q: float
    aT: float
    rT: float
    muT: float
    epsT: float

    @classmethod
    def lattice_units(cls, d: int, q: float = 1.0, T: float = math.e) -> "ScalingConstants":
        """Toy scaling with ``a(T) = r(T) = 1``.

        Macro and micro coordinates coincide and rescaled potentials equal
        raw ones.  ``T`` only sets the micro/macro time conversion.
        """
        if d < 1 or q <= 0:
            raise InvalidParameter(f"need d >= 1 and q > 0, got d={d}, q={q}")
        logT = math.log(T)
        return cls(d=d, alpha=d + d / q, T=T, q=q, aT=1.0, rT=1.0,
                   muT=logT ** 0.25, epsT=(3.0 / q) * logT ** -0.25)

    @property
    def spacing(self) -> float:
        """Macro lattice spacing ``1/r(T)``."""
        return 1.0 / self.rT

    @property
    def floor(self) -> float:
        """Smallest admissible rescaled potential ``1/a(T)``."""
        return 1.0 / self.aT


def derive_scaling(d: int, alpha: float, T: float) -> ScalingConstants:
    """Scaling constants ``q, a(T), r(T), mu_T, eps_T`` for Pareto exponent ``alpha``.

    ``T = e`` is accepted as the boundary case where ``log T = 1``.
    """
    if int(d) != d or d < 1:
        raise InvalidParameter(f"dimension must be a positive integer, got {d}")
    if not alpha > d:
        raise InvalidParameter(f"alpha must exceed d (alpha={alpha}, d={d}); total PAM mass diverges otherwise")
    if not T >= math.e:
        raise InvalidParameter(f"T must be at least e, got {T}")
    d = int(d)
    logT = math.log(T)
    q = d / (alpha - d)
    base = T / logT
    return ScalingConstants(
        d=d, alpha=float(alpha), T=float(T), q=q,
        aT=base ** q, rT=base ** (q + 1),
        muT=logT ** 0.25, epsT=(3.0 / q) * logT ** -0.25,
    )


def l1_ball_count(d: int, rho: float) -> int:
    """Number of points of ``Z^d`` with l1 norm strictly below ``rho``."""
    if rho <= 0:
        return 0
    n = math.ceil(rho) - 1
    return sum(2 ** k * math.comb(d, k) * math.comb(n, k) for k in range(min(d, n) + 1))


def ball_count_bounds(d: int, rho: float) -> tuple[float, float]:
    """Bounds ``rho^d/d! <= #{|z| < rho} <= (3 rho)^d`` valid for ``rho >= 1``."""
    return rho ** d / math.factorial(d), (3.0 * rho) ** d


def pareto_inverse_cdf(u: np.ndarray, alpha: float) -> np.ndarray:
    """Map ``u`` in (0, 1] to Pareto(alpha) values ``u**(-1/alpha) >= 1``."""
    return np.power(u, -1.0 / alpha)


def _window_coords(d: int, rho: float) -> np.ndarray:
    m = max(math.ceil(rho) - 1, 0)
    axes = [np.arange(-m, m + 1, dtype=np.int64)] * d
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    return grid[np.abs(grid).sum(axis=1) < rho]


@dataclass(frozen=True, eq=False)
class Environment:
    """Immutable lattice window carrying raw potentials ``xi >= 1``.

    ``xi`` is the source of truth; ``xiT = xi / a(T)`` is derived from it
    so that serialisation of ``xi`` round-trips every derived quantity.
    """

    scaling: ScalingConstants
    window_radius: float
    coords: np.ndarray
    xi: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        self.coords.setflags(write=False)
        self.xi.setflags(write=False)

    @property
    def d(self) -> int:
        return self.scaling.d

    @property
    def n(self) -> int:
        return len(self.xi)

    @cached_property
    def xiT(self) -> np.ndarray:
        out = self.xi / self.scaling.aT
        out.setflags(write=False)
        return out

    @cached_property
    def norm(self) -> np.ndarray:
        """Integer l1 norm of each site's micro-coordinate."""
        out = np.abs(self.coords).sum(axis=1)
        out.setflags(write=False)
        return out

    @cached_property
    def macro(self) -> np.ndarray:
        return self.coords / self.scaling.rT

    @cached_property
    def half_width(self) -> int:
        return int(np.abs(self.coords).max()) if self.n else 0

    @cached_property
    def index_grid(self) -> np.ndarray:
        """Dense bounding-box array of site indices, ``-1`` outside the window."""
        m = self.half_width
        grid = np.full((2 * m + 1,) * self.d, -1, dtype=np.int64)
        grid[tuple((self.coords + m).T)] = np.arange(self.n)
        return grid

    @cached_property
    def origin(self) -> int:
        return self.site_index((0,) * self.d)

    @cached_property
    def neighbors(self) -> np.ndarray:
        """``(n, 2d)`` table of nearest-neighbour indices, ``-1`` off-window."""
        out = np.full((self.n, 2 * self.d), -1, dtype=np.int64)
        m = self.half_width
        for axis in range(self.d):
            for k, step in enumerate((-1, 1)):
                shifted = self.coords.copy()
                shifted[:, axis] += step
                inside = np.all(np.abs(shifted) <= m, axis=1)
                idx = np.full(self.n, -1, dtype=np.int64)
                idx[inside] = self.index_grid[tuple((shifted[inside] + m).T)]
                out[:, 2 * axis + k] = idx
        return out

    def site_index(self, key: SiteKey) -> int:
        """Index of the site with micro-coordinate ``key``."""
        z = np.atleast_1d(np.asarray(key, dtype=np.int64))
        if z.shape != (self.d,):
            raise InvalidParameter(f"site {key!r} is not a {self.d}-dimensional micro-coordinate")
        m = self.half_width
        if np.any(np.abs(z) > m):
            raise WindowError(f"site {tuple(z)} lies outside the window")
        i = int(self.index_grid[tuple(z + m)])
        if i < 0:
            raise WindowError(f"site {tuple(z)} lies outside the window")
        return i

    def micro_of(self, macro: Sequence[float]) -> tuple:
        """Micro-coordinate of a macro lattice point (rounded to the nearest integer)."""
        return tuple(int(round(c * self.scaling.rT)) for c in np.atleast_1d(macro))

    def macro_of(self, micro: SiteKey) -> np.ndarray:
        return np.atleast_1d(np.asarray(micro, dtype=np.int64)) / self.scaling.rT

    def floor_map(self, point: Sequence[float]) -> tuple:
        """Micro-coordinate of ``[z]_T``, the lattice point obtained by flooring ``r(T) z``."""
        return tuple(int(math.floor(c * self.scaling.rT)) for c in np.atleast_1d(point))

    def distances_from(self, i: int) -> np.ndarray:
        """Integer l1 micro distances from site ``i`` to every site."""
        cols = self.coords.T
        out = np.abs(cols[0] - cols[0, i])
        for axis in range(1, self.d):
            out += np.abs(cols[axis] - cols[axis, i])
        return out

    def ball_mask(self, R: float) -> np.ndarray:
        """Mask of sites in ``L_T(0, R)``; rejects radii beyond the window."""
        if R > self.window_radius:
            raise WindowError(f"radius {R} exceeds window radius {self.window_radius}")
        return self.norm < R * self.scaling.rT

    def restrict(self, R: float) -> "Environment":
        """Sub-window ``L_T(0, R)`` carrying the same raw potentials."""
        mask = self.ball_mask(R)
        return Environment(self.scaling, float(R), self.coords[mask].copy(),
                           self.xi[mask].copy(), self.seed)

    def same_sites(self, other: "Environment") -> bool:
        return (self is other) or (
            self.scaling == other.scaling
            and self.coords.shape == other.coords.shape
            and np.array_equal(self.coords, other.coords)
            and np.array_equal(self.xi, other.xi)
        )


def _check_window(scaling: ScalingConstants, R: float) -> np.ndarray:
    if not R * scaling.rT >= 1:
        raise InvalidParameter(f"window too small: R*r(T) = {R * scaling.rT} < 1")
    return _window_coords(scaling.d, R * scaling.rT)


def sample_environment(scaling: ScalingConstants, R: float, seed: int) -> Environment:
    """Draw i.i.d. Pareto potentials on ``L_T(0, R)`` by inverse CDF.

    Uniforms are taken on (0, 1] so every value is finite; the draw order
    is the lexicographic site order, so the result depends only on
    ``(scaling, R, seed)``.
    """
    coords = _check_window(scaling, R)
    rng = rng_stream(seed, ENV_STREAM)
    u = 1.0 - rng.random(len(coords))
    return Environment(scaling, float(R), coords, pareto_inverse_cdf(u, scaling.alpha), int(seed))


def with_potential(scaling: ScalingConstants, R: float,
                   assignment: Mapping[SiteKey, float] | None = None) -> Environment:
    """Deterministic environment with prescribed rescaled potentials.

    Keys are micro-coordinates; unassigned sites sit at the floor
    ``xi = 1``.  Values below ``1/a(T)`` are rejected.
    """
    coords = _check_window(scaling, R)
    probe = Environment(scaling, float(R), coords, np.ones(len(coords)))
    xi = np.ones(len(coords))
    for key, value in (assignment or {}).items():
        if value < scaling.floor:
            raise InvalidParameter(
                f"rescaled potential {value} at {key!r} is below the floor 1/a(T) = {scaling.floor}")
        i = probe.site_index(key)
        xi[i] = max(value * scaling.aT, 1.0)
    return Environment(scaling, float(R), coords, xi)


def max_potential(env: Environment, R: float) -> float:
    """Largest rescaled potential over ``L_T(0, R)``; zero for an empty ball."""
    mask = env.ball_mask(R)
    return float(env.xiT[mask].max()) if mask.any() else 0.0


def tail_count(env: Environment, R: float, nu: float) -> int:
    """Number of sites of ``L_T(0, R)`` with rescaled potential at least ``nu``."""
    if not nu > 0:
        raise InvalidParameter(f"nu must be positive, got {nu}")
    mask = env.ball_mask(R)
    return int(np.count_nonzero(env.xiT[mask] >= nu))
