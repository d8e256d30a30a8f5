"""Command-line front end.

Each subcommand reads a :class:`RunConfig` (INI file plus flag overrides),
validates it, computes, writes plain-text artifacts into ``--out`` and
finishes with ``manifest.txt``.  Failures print one line
``error=<Class> msg=<text>`` on stderr and exit with status 2.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import io
import math
import os
import platform
import sys
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np
import scipy

from . import __version__
from .analysis import (VARIANTS, ScenarioSpec, build_scenario, compare, compare_pam,
                       scenario_outcome, suggest_spec, synthetic_record)
from .brw_simulator import Caps, simulate_replicates
from .environment import (Environment, ScalingConstants, derive_scaling,
                          sample_environment)
from .errors import InvalidParameter
from .lilypad import (exactness_certificate, mass_field, pam_lambda, pam_tau,
                      solve_hitting_times, support)
from .pam_solver import DEFAULT_TOL, pam_hitting, solve_pam
from .textio import (finite_range, fmt, read_environment, write_csv, write_environment,
                     write_field, write_kv, write_logu, write_pgm, write_record,
                     write_replicate_manifest)

MODES = ("gen-env", "lilypad", "pam-lilypad", "simulate", "pam", "compare", "scenario", "frames")

# config key -> INI section
_SECTIONS = {
    "d": "scaling", "alpha": "scaling", "T": "scaling", "T_ladder": "scaling",
    "units": "scaling", "q": "scaling",
    "R": "window", "seed": "window", "env_file": "window",
    "mode": "run", "threads": "run", "t_end": "run", "times": "run", "grid": "run",
    "replicates": "run", "max_population": "run", "max_events": "run", "tol": "run",
    "self_check": "run", "frames": "run", "frame_field": "run",
    "variant": "scenario", "scenario_t": "scenario", "kappa": "scenario",
    "r": "scenario", "eta": "scenario", "scenario_R": "scenario",
}


@dataclass
class RunConfig:
    """Everything a run depends on.  Unset optional values are ``None``."""

    mode: str = "lilypad"
    d: int = 1
    alpha: float = 3.0
    T: float = 20.0
    T_ladder: tuple = ()
    units: str = "derived"
    q: float = 1.0
    R: float = 1.0
    seed: int = 0
    env_file: Optional[str] = None
    threads: int = 1
    t_end: float = 1.0
    times: tuple = ()
    grid: int = 20
    replicates: int = 1
    max_population: int = 10_000_000
    max_events: int = 100_000_000
    tol: float = DEFAULT_TOL
    self_check: bool = False
    frames: int = 10
    frame_field: str = "mass"
    variant: str = "S1"
    scenario_t: float = 1.0
    kappa: float = 0.25
    r: Optional[float] = None
    eta: Optional[float] = None
    scenario_R: Optional[float] = None

    def scaling(self, T: Optional[float] = None) -> ScalingConstants:
        T = self.T if T is None else T
        if self.units == "lattice":
            return ScalingConstants.lattice_units(self.d, self.q, T)
        return derive_scaling(self.d, self.alpha, T)

    def snapshot_times(self) -> tuple:
        if self.times:
            return tuple(self.times)
        return tuple(self.t_end * k / self.frames for k in range(1, self.frames + 1))

    def validate(self) -> None:
        if self.mode not in MODES:
            raise InvalidParameter(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.units not in ("derived", "lattice"):
            raise InvalidParameter(f"units must be 'derived' or 'lattice', got {self.units!r}")
        for T in (self.T_ladder or (self.T,)):
            sc = self.scaling(T)
            if self.env_file is None and not self.R * sc.rT >= 1:
                raise InvalidParameter(f"window too small at T={T}: R*r(T) < 1")
        if self.t_end < 0:
            raise InvalidParameter("t_end must be nonnegative")
        if any(t < 0 or t > self.t_end for t in self.times):
            raise InvalidParameter("times must lie in [0, t_end]")
        if self.grid < 1 or self.frames < 1 or self.replicates < 1 or self.threads < 1:
            raise InvalidParameter("grid, frames, replicates and threads must be positive")
        if self.variant not in VARIANTS:
            raise InvalidParameter(f"variant must be one of {VARIANTS}")
        if self.frame_field not in ("mass", "support", "hitting"):
            raise InvalidParameter("frame_field must be mass, support or hitting")


def _convert(f: dataclasses.Field, text: str):
    text = text.strip()
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    if text == "none":
        return None
    if kind == "tuple":
        return tuple(float(v) for v in text.split(",") if v.strip())
    if kind == "bool":
        if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise InvalidParameter(f"{f.name}: not a boolean: {text!r}")
        return text.lower() in ("true", "1", "yes")
    if kind == "int":
        return int(text)
    if kind in ("float", "Optional[float]"):
        return float(text)
    return text


def _field_map() -> dict:
    return {f.name: f for f in fields(RunConfig)}


def set_value(config: RunConfig, key: str, text: str) -> None:
    fm = _field_map()
    if key not in fm:
        raise InvalidParameter(f"unknown config key {key!r}")
    try:
        setattr(config, key, _convert(fm[key], text))
    except ValueError as exc:
        raise InvalidParameter(f"{key}: {exc}") from exc


def serialize_config(config: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for f in fields(RunConfig):
        section = _SECTIONS[f.name]
        if not parser.has_section(section):
            parser.add_section(section)
        value = getattr(config, f.name)
        text = ",".join(fmt(v) for v in value) if isinstance(value, tuple) else fmt(value)
        parser.set(section, f.name, text)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def parse_config(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise InvalidParameter(f"bad config: {exc}") from exc
    config = dataclasses.replace(base) if base is not None else RunConfig()
    for section in parser.sections():
        for key, value in parser.items(section):
            set_value(config, key, value)
    return config


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(serialize_config(config).encode()).hexdigest()


# ---------------------------------------------------------------------------
# run

class _Run:
    """Collects artifacts and manifest entries for one output directory."""

    def __init__(self, config: RunConfig, out: str):
        self.config = config
        self.out = out
        self.files: list[str] = []
        self.entries: dict = {}
        os.makedirs(out, exist_ok=True)

    def path(self, name: str) -> str:
        p = os.path.join(self.out, name)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        self.files.append(p)
        return p

    def note(self, key: str, value) -> None:
        self.entries[key] = value

    def finish(self) -> str:
        with open(os.path.join(self.out, "config.ini"), "w", encoding="ascii") as fh:
            fh.write(serialize_config(self.config))
        lines = {
            "config_hash": config_hash(self.config),
            "package_version": __version__,
            "numpy_version": np.__version__,
            "scipy_version": scipy.__version__,
            "python_version": platform.python_version(),
        }
        lines.update(self.entries)
        for p in sorted(set(self.files)):
            with open(p, "rb") as fh:
                lines[f"sha256:{os.path.relpath(p, self.out)}"] = hashlib.sha256(fh.read()).hexdigest()
        manifest = os.path.join(self.out, "manifest.txt")
        write_kv(manifest, lines)
        return manifest


def _environment(config: RunConfig, T: float) -> Environment:
    if config.env_file:
        return read_environment(config.env_file)
    return sample_environment(config.scaling(T), config.R, config.seed)


def _mode_gen_env(run: _Run, env: Environment) -> None:
    write_environment(env, run.path("env.txt"))
    run.note("sites", env.n)


def _mode_lilypad(run: _Run, env: Environment) -> None:
    config = run.config
    field_ = solve_hitting_times(env)
    t_star = exactness_certificate(field_, env.window_radius)
    pred = np.array([-1 if p < 0 else p for p in field_.pred])
    write_field(run.path("hitting.txt"), env,
                {"h": field_.h, "pred": pred, "certified": field_.certified.astype(int)},
                {"kind": "BRW", "t_star": t_star})
    for k, t in enumerate(config.snapshot_times()):
        m = mass_field(field_, t)
        write_field(run.path(f"mass_{k:03d}.txt"), env, {"m": m.values}, {"t": t})
    run.note("t_star", t_star)
    run.note("certified_sites", int(field_.certified.sum()))
    run.note("sites", env.n)


def _mode_pam_lilypad(run: _Run, env: Environment) -> None:
    config = run.config
    tau = pam_tau(env)
    write_field(run.path("tau.txt"), env, {"tau": tau.h, "via": tau.pred}, {"kind": "PAM"})
    worst = 0.0
    for k, t in enumerate(config.snapshot_times()):
        lam, gap = pam_lambda(env, t, tau, check_alternate=True)
        worst = max(worst, gap)
        write_field(run.path(f"lambda_{k:03d}.txt"), env, {"lambda": lam.values}, {"t": t})
    run.note("alternate_form_gap", worst)


def _mode_simulate(run: _Run, env: Environment) -> None:
    config = run.config
    caps = Caps(config.max_population, config.max_events)
    times = config.snapshot_times()
    records = simulate_replicates(env, config.t_end, times, config.seed, config.replicates,
                                  caps, config.threads)
    for rec in records:
        for p in write_record(rec, os.path.join(run.out, f"rep_{rec.replicate:04d}")):
            run.files.append(p)
    write_replicate_manifest(run.path("replicates.csv"), records)
    run.note("replicates", len(records))
    run.note("truncated", sum(r.truncated for r in records))
    run.note("leak_total", sum(r.leak for r in records))


def _mode_pam(run: _Run, env: Environment) -> None:
    config = run.config
    pam = solve_pam(env, config.t_end, config.grid, config.tol)
    write_logu(run.path("logu.txt"), pam)
    write_field(run.path("pam_hitting.txt"), env, {"hit": pam_hitting(pam)})
    s = pam.stats
    for key in ("accepted", "rejected", "activations", "min_step", "max_step", "max_error"):
        run.note(f"integrator_{key}", getattr(s, key))
    run.note("leak", float(pam.leak[-1]))


def _mode_compare(run: _Run, env: Environment) -> None:
    config = run.config
    times = config.snapshot_times()
    lily = solve_hitting_times(env)
    if config.self_check:
        records = [synthetic_record(lily, config.t_end, times)]
    else:
        caps = Caps(config.max_population, config.max_events)
        records = simulate_replicates(env, config.t_end, times, config.seed, config.replicates,
                                      caps, config.threads)
    rows = []
    worst: dict = {}
    for rec in records:
        report = compare(rec, lily, times)
        for row in report.rows():
            rows.append({"replicate": rec.replicate, **row})
        for key, value in report.summary().items():
            if isinstance(value, bool):
                worst[key] = worst.get(key, False) or value
            else:
                worst[key] = max(worst.get(key, -math.inf), value)
        for flag in report.flags:
            run.note(f"flag_{rec.replicate}", flag)
    write_csv(run.path("report.csv"), rows)
    write_kv(run.path("report.txt"), {"self_check": config.self_check, **worst})
    run.note("self_check", config.self_check)
    for key, value in worst.items():
        run.note(key, value)


def _scenario_spec(config: RunConfig, sc: ScalingConstants) -> ScenarioSpec:
    spec = suggest_spec(sc, config.variant, config.scenario_t, config.kappa, config.r)
    changes = {k: v for k, v in (("eta", config.eta), ("R", config.scenario_R)) if v is not None}
    return dataclasses.replace(spec, **changes)


def _mode_scenario(run: _Run, config: RunConfig, sc: ScalingConstants) -> None:
    spec = _scenario_spec(config, sc)
    env = build_scenario(spec, sc)
    out = scenario_outcome(env, spec)
    write_environment(env, run.path("env.txt"))
    report = {"variant": spec.variant, "t": spec.t, "kappa": spec.kappa, "r": spec.r,
              "eta": spec.eta, "R": spec.R}
    report.update({f"condition_{k}": bool(v) for k, v in out.check.conditions.items()})
    report.update({
        "x": ",".join(map(str, out.check.x)),
        "brw_maximizer": ",".join(map(str, out.brw_maximizer)),
        "pam_maximizer": ",".join(map(str, out.pam_maximizer)),
        "maximizer_separation": out.separation,
        "components": out.pam_components,
        "brw_components": out.brw_components,
        "component_gap": out.pam_support_gap,
    })
    write_kv(run.path("report.txt"), report)
    run.note("components", out.pam_components)
    run.note("conditions_hold", out.check.all())


def _mode_frames(run: _Run, env: Environment) -> None:
    config = run.config
    field_ = solve_hitting_times(env)
    times = config.snapshot_times()
    if config.frame_field == "mass":
        frames = [mass_field(field_, t).values for t in times]
    elif config.frame_field == "support":
        frames = [support(field_, t).mask.astype(float) for t in times]
    else:
        frames = [np.where(field_.h <= t, field_.h, np.inf) for t in times]
    lo, hi = finite_range(frames)
    if config.frame_field == "support":
        lo, hi = 0.0, 1.0
    rows = []
    for k, (t, values) in enumerate(zip(times, frames)):
        write_pgm(run.path(f"frames/frame_{k:03d}.pgm"), env, values, lo, hi,
                  {"t": t, "field": config.frame_field})
        rows.append({"frame": k, "t": t, "settled": len(support(field_, t))})
    write_csv(run.path("frames.csv"), rows)
    run.note("frames", len(times))


def run(config: RunConfig, out: str) -> list[str]:
    """Execute ``config`` into ``out``; returns the manifest paths written."""
    config.validate()
    ladder = config.T_ladder or (config.T,)
    manifests = []
    trend = []
    for T in ladder:
        sub = out if len(ladder) == 1 else os.path.join(out, f"T_{fmt(float(T))}")
        one = dataclasses.replace(config, T=float(T), T_ladder=())
        r = _Run(one, sub)
        sc = one.scaling()
        if one.mode == "scenario":
            _mode_scenario(r, one, sc)
        else:
            env = _environment(one, T)
            r.note("sites", env.n)
            {"gen-env": _mode_gen_env, "lilypad": _mode_lilypad,
             "pam-lilypad": _mode_pam_lilypad, "simulate": _mode_simulate,
             "pam": _mode_pam, "compare": _mode_compare, "frames": _mode_frames}[one.mode](r, env)
            if one.mode == "pam" and len(ladder) > 1:
                trend.append(_pam_trend(env, one))
        manifests.append(r.finish())
    if trend:
        write_csv(os.path.join(out, "trend.csv"), trend)
    return manifests


def _pam_trend(env: Environment, config: RunConfig) -> dict:
    pam = solve_pam(env, config.t_end, config.grid, config.tol)
    times = [config.t_end * k / config.grid for k in range(1, config.grid + 1)]
    cmp = compare_pam(pam, times)
    return {"T": env.scaling.T, "sup_growth_dev": max(cmp.sup_growth_dev.values()),
            "sup_hit_dev": cmp.sup_hit_dev}


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lilypad-brw", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        p = sub.add_parser(mode)
        p.add_argument("--config", help="INI file with [scaling], [window], [run], [scenario]")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default="out")
        p.add_argument("--threads", type=int, help="worker threads (fallback: LILYPAD_THREADS)")
        p.add_argument("--T-ladder", dest="T_ladder", help="comma-separated T values")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key")
        if mode == "scenario":
            p.add_argument("--variant", choices=VARIANTS)
        if mode == "compare":
            p.add_argument("--self-check", action="store_true",
                           help="compare the lilypad field with a record synthesised from it")
    return parser


def config_from_args(args: argparse.Namespace, environ=os.environ) -> RunConfig:
    config = RunConfig()
    if args.config:
        with open(args.config, encoding="ascii") as fh:
            config = parse_config(fh.read())
    config.mode = args.mode
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise InvalidParameter(f"--set expects KEY=VALUE, got {item!r}")
        set_value(config, key.strip(), value)
    if args.seed is not None:
        config.seed = args.seed
    if args.threads is not None:
        config.threads = args.threads
    elif environ.get("LILYPAD_THREADS"):
        try:
            config.threads = int(environ["LILYPAD_THREADS"])
        except ValueError as exc:
            raise InvalidParameter(f"LILYPAD_THREADS is not an integer: {exc}") from exc
    if args.T_ladder:
        try:
            config.T_ladder = tuple(float(v) for v in args.T_ladder.split(",") if v.strip())
        except ValueError as exc:
            raise InvalidParameter(f"--T-ladder: {exc}") from exc
    if getattr(args, "variant", None):
        config.variant = args.variant
    if getattr(args, "self_check", False):
        config.self_check = True
    return config


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = config_from_args(args)
        manifests = run(config, args.out)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one parseable line
        msg = " ".join(str(exc).split())
        kind = type(exc).__name__
        print(f"error={kind} msg={msg}", file=sys.stderr)
        return 2
    for m in manifests:
        print(f"manifest={m}")
    return 0
