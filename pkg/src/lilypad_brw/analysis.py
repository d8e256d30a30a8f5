"""Cross-model statistics, random-walk bound calculators and potential scenarios.

Everything here is a pure function of immutable inputs.  Distances are l1
in macroscopic units, computed from integer micro-coordinates and divided
by ``r(T)`` once at the end.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage, special
from scipy.spatial import cKDTree

from .brw_simulator import BRWRecord, rescaled_counts
from .environment import Environment, ScalingConstants, SiteKey, with_potential
from .errors import (EnvironmentMismatch, InfeasibleScenario, InvalidParameter,
                     LilypadError)
from .lilypad import (BRW, LilypadField, MassField, SupportSet, mass_field,
                      pam_lambda, pam_tau, solve_hitting_times, support)


# ---------------------------------------------------------------------------
# set and field statistics

def _micro_points(S) -> tuple[np.ndarray, float]:
    if isinstance(S, SupportSet):
        return S.env.coords[S.mask], S.env.scaling.rT
    raise InvalidParameter(f"expected a SupportSet, got {type(S).__name__}")


def hausdorff(A: SupportSet, B: SupportSet) -> float:
    """l1 Hausdorff distance between two nonempty finite site sets."""
    a, ra = _micro_points(A)
    b, rb = _micro_points(B)
    if ra != rb:
        raise EnvironmentMismatch("supports live on lattices with different spacing")
    if len(a) == 0 or len(b) == 0:
        raise InvalidParameter("Hausdorff distance of an empty set is undefined")
    da, _ = cKDTree(b).query(a, p=1)
    db, _ = cKDTree(a).query(b, p=1)
    return float(max(da.max(), db.max())) / ra


def maximizer(field: MassField | np.ndarray, env: Optional[Environment] = None) -> tuple:
    """Micro-coordinate of the largest value; the lexicographically first site on ties."""
    if isinstance(field, MassField):
        env, values = field.env, field.values
    else:
        values = np.asarray(field)
        if env is None:
            raise InvalidParameter("a bare value array needs its environment")
    if len(values) == 0:
        raise InvalidParameter("empty field has no maximizer")
    i = int(np.argmax(values))
    return tuple(int(c) for c in env.coords[i])


def l1_distance(env: Environment, a: SiteKey, b: SiteKey) -> float:
    """Macro l1 distance between two micro-coordinates."""
    za = np.atleast_1d(np.asarray(a, dtype=np.int64))
    zb = np.atleast_1d(np.asarray(b, dtype=np.int64))
    return float(np.abs(za - zb).sum()) / env.scaling.rT


def ball_around(env: Environment, center: SiteKey, radius: float) -> np.ndarray:
    """Mask of window sites in the open l1 ball ``B(center, radius)``."""
    c = np.atleast_1d(np.asarray(center, dtype=np.int64))
    return np.abs(env.coords - c).sum(axis=1) < radius * env.scaling.rT


def intermittency_ratio(record: BRWRecord, t: float, center: SiteKey,
                        radius: Optional[float] = None) -> float:
    """Fraction of the particles at time ``t`` lying in ``L_T(center, radius)``.

    ``radius`` defaults to ``eps_T``.
    """
    counts = record.counts(t)
    radius = record.env.scaling.epsT if radius is None else radius
    if not radius > 0:
        raise InvalidParameter(f"radius must be positive, got {radius}")
    total = counts.sum()
    if total <= 0:
        raise InvalidParameter(f"no particles in the window at t={t}; ratio undefined")
    return float(counts[ball_around(record.env, center, radius)].sum() / total)


def connected_components(S: SupportSet) -> int:
    """Number of nearest-neighbour lattice components of a site set."""
    env = S.env
    if len(S) == 0:
        return 0
    m = env.half_width
    grid = np.zeros((2 * m + 1,) * env.d, dtype=bool)
    grid[tuple((env.coords[S.mask] + m).T)] = True
    _, count = ndimage.label(grid, structure=ndimage.generate_binary_structure(env.d, 1))
    return int(count)


# ---------------------------------------------------------------------------
# random-walk bounds

def error_terms(s: float, R: float, scaling: ScalingConstants) -> tuple[float, float]:
    """The two error terms of the random-walk estimates at time ``s`` and distance ``R``.

    The first enters the lower bound on reaching distance ``R``, the second
    the upper bound on making at least ``R r(T)`` jumps.
    """
    if not (s > 0 and R > 0):
        raise InvalidParameter(f"need s > 0 and R > 0, got s={s}, R={R}")
    logT = math.log(scaling.T)
    d, q = scaling.d, scaling.q
    e1 = R / logT * (math.log(R) - math.log(s)) + 2 * d * s / scaling.aT
    e2 = R / logT * (math.log(s) - math.log(R) + 1 + math.log(2 * d) + (q + 1) * math.log(logT))
    return e1, e2


def log_poisson_tail(mu: float, k: int) -> float:
    """``log P(Poisson(mu) >= k)`` without underflow."""
    if k <= 0:
        return 0.0
    if mu <= 0:
        return -math.inf
    if k <= mu:
        return math.log(special.gammainc(k, mu))
    # k > mu: the tail is dominated by its first term; sum ratios in log space
    log_first = k * math.log(mu) - mu - math.lgamma(k + 1)
    total, term, j = 1.0, 1.0, 0
    while True:
        j += 1
        term *= mu / (k + j)
        total += term
        if term < 1e-17 * total:
            break
    return log_first + math.log(total)


def jump_tail(s: float, R: float, scaling: ScalingConstants, log: bool = False) -> float:
    """Probability that a walk makes at least ``R r(T)`` jumps by micro time ``sT``.

    The jump count is Poisson with mean ``2d s T``; ``log=True`` returns the
    natural log, which stays finite far beyond the float range of the
    probability itself.
    """
    if s < 0 or R < 0:
        raise InvalidParameter(f"need s >= 0 and R >= 0, got s={s}, R={R}")
    k = math.ceil(R * scaling.rT - 1e-9 * max(1.0, R * scaling.rT))
    value = log_poisson_tail(2 * scaling.d * s * scaling.T, k)
    return value if log else math.exp(value)


def jump_tail_log_bound(s: float, R: float, scaling: ScalingConstants) -> float:
    """Log of the Stirling upper bound ``exp(-a(T) T (q R - E2(s, R)))``."""
    _, e2 = error_terms(s, R, scaling)
    return -scaling.aT * scaling.T * (scaling.q * R - e2)


# ---------------------------------------------------------------------------
# potential scenarios

VARIANTS = ("S1", "S2", "S3")


@dataclass(frozen=True)
class ScenarioSpec:
    """Parameters of a deterministic scenario with one dominant low-lying peak.

    ``x`` is a micro-coordinate in ``L_T(0, r)`` carrying rescaled potential
    ``x_value`` in ``[eta, 2 eta)``.  ``xprime_value`` overrides the default
    placement value of the far peak for ``S2``/``S3``.
    """

    t: float
    kappa: float
    r: float
    eta: float
    R: float
    variant: str = "S1"
    x: Optional[tuple] = None
    x_value: Optional[float] = None
    xprime_value: Optional[float] = None

    def validate(self, scaling: ScalingConstants) -> None:
        q = scaling.q
        if self.variant not in VARIANTS:
            raise InvalidParameter(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not (self.t > 0 and self.kappa > 0 and self.r > 0):
            raise InfeasibleScenario("need t > 0, kappa > 0 and r > 0")
        if not self.eta >= 8 * q * self.r / self.t:
            raise InfeasibleScenario(f"eta >= 8 q r / t fails: {self.eta} < {8 * q * self.r / self.t}")
        bound = max(2 * self.eta * self.t / q, 3 * self.kappa)
        if not self.R > bound:
            raise InfeasibleScenario(f"R > max(2 eta t / q, 3 kappa) fails: {self.R} <= {bound}")
        if not self.eta / 2 >= scaling.floor:
            raise InfeasibleScenario(
                f"eta/2 >= 1/a(T) fails: {self.eta / 2} < {scaling.floor}; the floor potential breaks (B)")
        if self.variant == "S3" and not self.R > 2:
            raise InfeasibleScenario(f"(2R+1) q/t < 5Rq/(2t) needs R > 2, got R={self.R}")

    def window_radius(self) -> float:
        return {"S1": self.R + 1, "S2": self.R + 1, "S3": 2 * self.R + 1}[self.variant]


def suggest_spec(scaling: ScalingConstants, variant: str = "S1", t: float = 1.0,
                 kappa: float = 0.25, r: Optional[float] = None) -> ScenarioSpec:
    """Smallest-window spec satisfying every construction constraint at this scaling."""
    q = scaling.q
    if r is None:
        r = 1.5 / scaling.rT  # smallest ball holding the origin's neighbours
    eta = max(8 * q * r / t, 2 * scaling.floor)
    R = max(2 * eta * t / q, 3 * kappa, 2.0 if variant == "S3" else 0.0)
    R = R * 1.05 + 0.05
    return ScenarioSpec(t=t, kappa=kappa, r=r, eta=eta, R=R, variant=variant)


def _axis_site(d: int, n: int) -> tuple:
    return (int(n),) + (0,) * (d - 1)


def scenario_xprime(spec: ScenarioSpec, scaling: ScalingConstants) -> Optional[tuple]:
    """Micro-coordinate of the far peak, on the first axis; ``None`` for S1."""
    if spec.variant == "S2":
        n = math.ceil(spec.R * scaling.rT)
        if not n < (spec.R + 1) * scaling.rT:
            raise InfeasibleScenario("no lattice site with R <= |x'| < R+1")
    elif spec.variant == "S3":
        n = math.ceil(2 * spec.R * scaling.rT)
        if not n <= (2 * spec.R + 1) * scaling.rT:
            raise InfeasibleScenario("no lattice site with 2R <= |x'| <= 2R+1")
    else:
        return None
    return _axis_site(scaling.d, n)


def build_scenario(spec: ScenarioSpec, scaling: ScalingConstants) -> Environment:
    """Deterministic environment realising (A), (B), (C) and ``spec.variant``.

    The peak ``x`` defaults to the origin with value ``1.5 eta``; every
    other site sits at the floor ``1/a(T)`` apart from the far peak of S2
    or S3.  The result is checked with :func:`check_scenario` before it is
    returned.
    """
    spec.validate(scaling)
    q, t, R, eta = scaling.q, spec.t, spec.R, spec.eta
    x = spec.x if spec.x is not None else (0,) * scaling.d
    if not np.abs(np.asarray(x)).sum() < spec.r * scaling.rT:
        raise InfeasibleScenario(f"x={x} is not in L_T(0, r)")
    x_value = spec.x_value if spec.x_value is not None else 1.5 * eta
    if not eta <= x_value < 2 * eta:
        raise InfeasibleScenario(f"x value {x_value} is not in [eta, 2 eta)")
    assignment = {tuple(x): x_value}
    xp = scenario_xprime(spec, scaling)
    if spec.variant == "S2":
        value = spec.xprime_value if spec.xprime_value is not None else 3 * eta + q * (R + 1) / t
        assignment[xp] = value
    elif spec.variant == "S3":
        lo, hi = (2 * R + 1) * q / t, 5 * R * q / (2 * t)
        value = spec.xprime_value if spec.xprime_value is not None else 0.5 * (lo + hi)
        assignment[xp] = value
    env = with_potential(scaling, spec.window_radius(), assignment)
    report = check_scenario(env, spec)
    if not report.all():
        failed = [k for k, v in report.conditions.items() if not v]
        raise InfeasibleScenario(f"construction fails conditions {failed}")
    return env


@dataclass
class ScenarioCheck:
    """Outcome of each scenario condition on a given environment."""

    conditions: dict
    x: Optional[tuple] = None
    xprime: Optional[tuple] = None
    max_h_small_ball: float = math.nan

    def all(self) -> bool:
        return all(self.conditions.values())


def check_scenario(env: Environment, spec: ScenarioSpec,
                   field: Optional[LilypadField] = None) -> ScenarioCheck:
    """Evaluate (A), (B), (C) and the variant condition literally on the window.

    Sites outside the window are not seen; ``window`` records whether the
    window is wide enough for the variant at all.  A lilypad solve on the
    window can only overestimate hitting times, so a true (C) is safe.
    """
    sc = env.scaling
    q, t, r, eta, R = sc.q, spec.t, spec.r, spec.eta, spec.R
    xiT = env.xiT
    norm = env.norm / sc.rT
    in_R = env.norm < R * sc.rT
    in_r = env.norm < r * sc.rT
    conds: dict = {"window": env.window_radius >= spec.window_radius()}

    # (A): the candidate is the largest potential in L_T(0, r)
    x_idx = None
    if in_r.any():
        cand = np.flatnonzero(in_r)
        x_idx = int(cand[np.argmax(xiT[cand])])
    conds["A"] = x_idx is not None and eta <= xiT[x_idx] < 2 * eta
    others = in_R.copy()
    if x_idx is not None:
        others[x_idx] = False
    conds["B"] = bool(np.all(xiT[others] <= eta / 2))
    field = field if field is not None else solve_hitting_times(env)
    max_h = float(field.h[in_r].max()) if in_r.any() else math.inf
    conds["C"] = max_h <= t / 8

    outside = ~in_R
    xp_idx = None
    if spec.variant == "S1":
        conds["S1"] = bool(np.all(xiT[outside] < eta + q * (norm[outside] - r) / t))
    elif spec.variant == "S2":
        band = outside & (env.norm < (R + 1) * sc.rT)
        hits = np.flatnonzero(band & (xiT > 2 * eta + q * (R + 1) / t))
        ok = False
        for j in hits:
            rest = outside.copy()
            rest[j] = False
            if np.all(xiT[rest] < eta + q * (norm[rest] - r) / t):
                ok, xp_idx = True, int(j)
                break
        conds["S2"] = ok
    else:
        band = (norm >= 2 * R) & (norm <= 2 * R + 1)
        hits = np.flatnonzero(band & (xiT > (2 * R + 1) * q / t) & (xiT < 5 * R * q / (2 * t)))
        ok = False
        for j in hits:
            rest = outside.copy()
            rest[j] = False
            if np.all(xiT[rest] < q * norm[rest] / t):
                ok, xp_idx = True, int(j)
                break
        conds["S3"] = ok
    as_key = (lambda i: None if i is None else tuple(int(c) for c in env.coords[i]))
    return ScenarioCheck(conds, as_key(x_idx), as_key(xp_idx), max_h)


@dataclass
class ScenarioOutcome:
    """What the lilypad models do at time ``t`` on a scenario environment."""

    check: ScenarioCheck
    brw_maximizer: tuple
    pam_maximizer: tuple
    separation: float
    pam_components: int
    brw_components: int
    pam_support_gap: float


def scenario_outcome(env: Environment, spec: ScenarioSpec) -> ScenarioOutcome:
    """Maximizers of ``m_T`` and ``lambda_T`` and support connectivity at ``spec.t``."""
    field = solve_hitting_times(env)
    check = check_scenario(env, spec, field)
    t = spec.t
    m = mass_field(field, t)
    lam = pam_lambda(env, t)
    w, w_pam = maximizer(m), maximizer(lam)
    tau = pam_tau(env)
    s_pam = support(tau, t)
    s_brw = support(field, t)
    return ScenarioOutcome(
        check=check, brw_maximizer=w, pam_maximizer=w_pam,
        separation=l1_distance(env, w, w_pam),
        pam_components=connected_components(s_pam),
        brw_components=connected_components(s_brw),
        pam_support_gap=component_gap(s_pam),
    )


def component_gap(S: SupportSet) -> float:
    """Smallest l1 distance between two different components; ``inf`` if connected."""
    env = S.env
    if len(S) == 0:
        return math.inf
    m = env.half_width
    grid = np.zeros((2 * m + 1,) * env.d, dtype=bool)
    pts = env.coords[S.mask]
    grid[tuple((pts + m).T)] = True
    labels, count = ndimage.label(grid, structure=ndimage.generate_binary_structure(env.d, 1))
    if count < 2:
        return math.inf
    lab = labels[tuple((pts + m).T)]
    best = math.inf
    for k in range(1, count + 1):
        mine, rest = pts[lab == k], pts[lab != k]
        dist, _ = cKDTree(rest).query(mine, p=1)
        best = min(best, float(dist.min()))
    return best / env.scaling.rT


# ---------------------------------------------------------------------------
# model comparison

@dataclass
class ComparisonReport:
    """Simulation-vs-lilypad statistics.  Each entry is recomputable from exports."""

    times: tuple
    sup_mass_dev: dict
    hausdorff: dict
    brw_maximizer: dict
    lily_maximizer: dict
    maximizer_sep: dict
    intermittency: dict
    sup_hit_dev: float
    ball_radius: float
    certified_fraction: float
    truncated: bool
    leak: int
    flags: list = field(default_factory=list)

    def summary(self) -> dict:
        out = {
            "sup_mass_dev": max(self.sup_mass_dev.values(), default=0.0),
            "sup_hit_dev": self.sup_hit_dev,
            "max_hausdorff": max(self.hausdorff.values(), default=0.0),
            "ball_radius": self.ball_radius,
            "certified_fraction": self.certified_fraction,
            "truncated": self.truncated,
            "leak": self.leak,
        }
        return out

    def rows(self) -> list[dict]:
        return [
            {"t": t, "sup_mass_dev": self.sup_mass_dev[t], "hausdorff": self.hausdorff[t],
             "brw_maximizer": self.brw_maximizer[t], "lily_maximizer": self.lily_maximizer[t],
             "maximizer_sep": self.maximizer_sep[t], "intermittency": self.intermittency[t]}
            for t in self.times
        ]


def compare(brw: BRWRecord, lily: LilypadField, times: Sequence[float],
            ball_radius: Optional[float] = None) -> ComparisonReport:
    """Compare a BRW record with the lilypad field of the same environment.

    Hitting times are compared after censoring both at the record's
    horizon ``t_end``: a site the simulation never reached is only a
    deviation if the lilypad reaches it in time.
    """
    if lily.kind != BRW:
        raise InvalidParameter("compare needs a BRW lilypad field")
    if not brw.env.same_sites(lily.env):
        raise EnvironmentMismatch("record and lilypad field use different environments")
    env = lily.env
    times = tuple(float(t) for t in times)
    flags = []
    if brw.truncated:
        flags.append(f"truncated:{brw.reason}")
    if brw.leak:
        flags.append(f"leak:{brw.leak}")
    R = env.window_radius if ball_radius is None else ball_radius
    ball = ball_around(env, (0,) * env.d, R)
    dev, dh, wb, wl, sep, ratio = {}, {}, {}, {}, {}, {}
    for t in times:
        try:
            M = rescaled_counts(brw, t)
        except LilypadError:
            flags.append(f"missing_snapshot:{t!r}")
            continue
        m = mass_field(lily, t)
        dev[t] = float(np.max(np.abs(M - m.values)))
        dh[t] = hausdorff(support(brw, t), support(lily, t))
        wb[t] = maximizer(brw.counts(t), env)
        wl[t] = maximizer(m)
        sep[t] = l1_distance(env, wb[t], wl[t])
        ratio[t] = intermittency_ratio(brw, t, wl[t]) if brw.total(t) > 0 else math.nan
    horizon = brw.t_end
    H = np.minimum(brw.first_hit / env.scaling.T, horizon)
    h = np.minimum(lily.h, horizon)
    hit_dev = float(np.max(np.abs(H - h)[ball])) if ball.any() else 0.0
    cert = lily.certified
    cert_frac = float(cert[ball].mean()) if cert is not None and ball.any() else math.nan
    return ComparisonReport(
        times=tuple(t for t in times if t in dev), sup_mass_dev=dev, hausdorff=dh,
        brw_maximizer=wb, lily_maximizer=wl, maximizer_sep=sep, intermittency=ratio,
        sup_hit_dev=hit_dev, ball_radius=float(R), certified_fraction=cert_frac,
        truncated=brw.truncated, leak=brw.leak, flags=flags,
    )


def synthetic_record(lily: LilypadField, t_end: float, times: Sequence[float]) -> BRWRecord:
    """A record whose counts and hits are read off the lilypad field itself.

    First hits are ``h T``; the count at ``(z, t)`` is
    ``exp(a(T) T m_T(z, t))``.  Comparing it with ``lily`` must give zero
    deviations up to float rounding, which exercises the comparison
    plumbing independently of any randomness.
    """
    env = lily.env
    sc = env.scaling
    times = tuple(sorted(float(t) for t in times))
    snaps, stay = {}, {}
    for t in times:
        m = mass_field(lily, t).values
        with np.errstate(over="raise"):
            snaps[t] = np.exp(sc.aT * sc.T * m)
        stay[t] = None
    hits = np.where(lily.h <= t_end, lily.h * sc.T, np.inf)
    return BRWRecord(env=env, t_end=float(t_end), snapshot_times=times, snapshots=snaps,
                     stayers=stay, first_hit=hits, thresh_hit=hits.copy())


@dataclass
class PamComparison:
    """PAM-vs-PAM-lilypad statistics at a set of grid times."""

    times: tuple
    sup_growth_dev: dict
    sup_hit_dev: float
    hausdorff: dict
    pam_maximizer: dict
    lily_maximizer: dict


def compare_pam(pam, times: Sequence[float], ball_radius: Optional[float] = None) -> PamComparison:
    """Compare a solved PAM field with the PAM lilypad on the same window.

    Hitting times are censored at the solve horizon, as in :func:`compare`.
    """
    from .pam_solver import pam_growth, pam_hitting

    env = pam.env
    tau = pam_tau(env)
    R = env.window_radius if ball_radius is None else ball_radius
    ball = ball_around(env, (0,) * env.d, R)
    dev, dh, wp, wl = {}, {}, {}, {}
    hit = pam_hitting(pam)
    for t in times:
        lam = pam_lambda(env, t)
        growth = pam_growth(pam, t)
        dev[t] = float(np.max(np.abs(growth - lam.values)))
        hit_set = SupportSet(env, hit <= t, float(t), "S_T^PAM")
        dh[t] = hausdorff(hit_set, support(tau, t))
        wp[t] = maximizer(pam.logu[pam.grid_index(t)], env)
        wl[t] = maximizer(lam)
    horizon = pam.t_end
    gap = np.abs(np.minimum(hit, horizon) - np.minimum(tau.h, horizon))
    return PamComparison(tuple(float(t) for t in times), dev,
                         float(gap[ball].max()) if ball.any() else 0.0, dh, wp, wl)
