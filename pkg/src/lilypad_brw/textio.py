"""Plain-text artifacts: environments, site fields, records, reports and frames.

Every float is written with 17 significant digits, which round-trips an
IEEE double exactly.  Header lines start with ``#`` and carry
``key=value`` metadata; data rows are whitespace-separated columns.
"""
from __future__ import annotations

import csv
import math
import os
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .environment import Environment, ScalingConstants
from .errors import FormatError, InvalidParameter

FLOAT_FMT = "%.17g"
SCALING_KEYS = ("d", "alpha", "T", "q", "aT", "rT", "muT", "epsT")


def fmt(x) -> str:
    """Canonical text form of a scalar."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return FLOAT_FMT % float(x)
    if x is None:
        return "none"
    return str(x)


def _write_lines(path: str, lines: Iterable[str]) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")


def _split_header(path: str) -> tuple[dict, list[str], list[str]]:
    meta: dict = {}
    columns: list[str] = []
    rows: list[str] = []
    with open(path, encoding="ascii") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("columns:"):
                    columns = body[len("columns:"):].split()
                elif "=" in body:
                    key, _, value = body.partition("=")
                    meta[key.strip()] = value.strip()
                continue
            rows.append(line)
    return meta, columns, rows


def _parse_rows(rows: list[str], ncols: int, path: str) -> np.ndarray:
    out = np.empty((len(rows), ncols))
    for k, line in enumerate(rows):
        parts = line.split()
        if len(parts) != ncols:
            raise FormatError(f"{path}: row {k + 1} has {len(parts)} columns, expected {ncols}")
        try:
            out[k] = [float(p) for p in parts]
        except ValueError as exc:
            raise FormatError(f"{path}: row {k + 1}: {exc}") from exc
    return out


def _env_header(env: Environment) -> list[str]:
    sc = env.scaling
    lines = [f"# {key}={fmt(getattr(sc, key))}" for key in SCALING_KEYS]
    lines.append(f"# R={fmt(env.window_radius)}")
    lines.append(f"# seed={fmt(env.seed)}")
    lines.append(f"# n={env.n}")
    return lines


def _scaling_from(meta: Mapping[str, str], path: str) -> ScalingConstants:
    try:
        values = {k: float(meta[k]) for k in SCALING_KEYS}
    except KeyError as exc:
        raise FormatError(f"{path}: header lacks {exc.args[0]!r}") from exc
    values["d"] = int(values["d"])
    return ScalingConstants(**values)


def write_environment(env: Environment, path: str) -> None:
    """Header with scaling, radius and seed; then one row ``micro..., xi`` per site."""
    cols = " ".join([f"z{a}" for a in range(env.d)] + ["xi"])
    lines = ["# lilypad environment"] + _env_header(env) + [f"# columns: {cols}"]
    for c, x in zip(env.coords.tolist(), env.xi.tolist()):
        lines.append(" ".join([str(v) for v in c] + [FLOAT_FMT % x]))
    _write_lines(path, lines)


def read_environment(path: str) -> Environment:
    meta, _, rows = _split_header(path)
    sc = _scaling_from(meta, path)
    data = _parse_rows(rows, sc.d + 1, path)
    coords = data[:, :sc.d].astype(np.int64)
    if not np.array_equal(coords, data[:, :sc.d]):
        raise FormatError(f"{path}: non-integer coordinates")
    seed = None if meta.get("seed", "none") == "none" else int(meta["seed"])
    try:
        R = float(meta["R"])
    except KeyError as exc:
        raise FormatError(f"{path}: header lacks 'R'") from exc
    env = Environment(sc, R, coords, data[:, sc.d].copy(), seed)
    if np.any(env.xi < 1):
        raise FormatError(f"{path}: raw potential below 1")
    return env


def write_field(path: str, env: Environment, columns: Mapping[str, np.ndarray],
                meta: Optional[Mapping[str, object]] = None) -> None:
    """Per-site table: micro-coordinates then one column per named array."""
    names = list(columns)
    arrays = [np.asarray(columns[k]) for k in names]
    for k, a in zip(names, arrays):
        if len(a) != env.n:
            raise InvalidParameter(f"column {k!r} has {len(a)} entries for {env.n} sites")
    lines = ["# lilypad field"] + _env_header(env)
    for key, value in (meta or {}).items():
        lines.append(f"# {key}={fmt(value)}")
    lines.append("# columns: " + " ".join([f"z{a}" for a in range(env.d)] + names))
    cells = [[fmt(v) for v in a.tolist()] for a in arrays]
    for i, c in enumerate(env.coords.tolist()):
        lines.append(" ".join([str(v) for v in c] + [col[i] for col in cells]))
    _write_lines(path, lines)


def read_field(path: str) -> tuple[dict, np.ndarray, dict]:
    """Returns ``(meta, micro coords, {column: values})``."""
    meta, columns, rows = _split_header(path)
    if not columns:
        raise FormatError(f"{path}: missing columns header")
    d = int(meta.get("d", sum(c.startswith("z") and c[1:].isdigit() for c in columns)))
    data = _parse_rows(rows, len(columns), path)
    coords = data[:, :d].astype(np.int64)
    return meta, coords, {name: data[:, d + k] for k, name in enumerate(columns[d:])}


def write_logu(path: str, field) -> None:
    """``log u`` table with one column per grid time; times listed in the header."""
    cols = {f"t{k}": field.logu[k] for k in range(len(field.time_grid))}
    meta = {"times": ",".join(fmt(t) for t in field.time_grid), "tol": field.tol,
            "boundary": field.boundary}
    write_field(path, field.env, cols, meta)


def write_record(record, directory: str) -> list[str]:
    """Summary, hit times and one count grid per snapshot; returns written paths."""
    os.makedirs(directory, exist_ok=True)
    env = record.env
    paths = []
    summary = {
        "seed": record.seed, "replicate": record.replicate, "t_end": record.t_end,
        "events": record.events, "leak": record.leak, "truncated": record.truncated,
        "reason": record.reason or "none",
        "snapshot_times": ",".join(fmt(t) for t in record.snapshot_times),
    }
    p = os.path.join(directory, "summary.txt")
    write_kv(p, summary)
    paths.append(p)
    p = os.path.join(directory, "hits.txt")
    write_field(p, env, {"first_hit": record.first_hit, "thresh_hit": record.thresh_hit},
                {"time_unit": "micro"})
    paths.append(p)
    for k, t in enumerate(record.snapshot_times):
        counts = record.snapshots[t]
        if counts is None:
            continue
        p = os.path.join(directory, f"counts_{k:03d}.txt")
        write_field(p, env, {"count": counts.astype(np.int64)},
                    {"t": t, "stayers": record.stayers[t]})
        paths.append(p)
    return paths


def write_replicate_manifest(path: str, records: Sequence) -> None:
    rows = [{"seed": r.seed, "stream": f"1/{r.replicate}", "replicate": r.replicate,
             "truncated": r.truncated, "leak": r.leak, "events": r.events} for r in records]
    write_csv(path, rows)


def write_kv(path: str, items: Mapping[str, object]) -> None:
    _write_lines(path, [f"{k}={fmt(v)}" for k, v in items.items()])


def read_kv(path: str) -> dict:
    out = {}
    with open(path, encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"{path}: expected key=value, got {line!r}")
            k, _, v = line.partition("=")
            out[k] = v
    return out


def write_csv(path: str, rows: Sequence[Mapping[str, object]]) -> None:
    if not rows:
        _write_lines(path, [])
        return
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: fmt(v) for k, v in row.items()})


def read_csv(path: str) -> list[dict]:
    with open(path, encoding="ascii", newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# grayscale frames

def frame_grid(env: Environment, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values laid out on the window's bounding box (rows = second axis in 2d).

    Returns ``(grid, inside)``; cells outside the window are ``nan``.
    """
    if env.d > 2:
        raise InvalidParameter("frames are only drawn for d = 1 or 2")
    m = env.half_width
    shape = (1, 2 * m + 1) if env.d == 1 else (2 * m + 1, 2 * m + 1)
    grid = np.full(shape, np.nan)
    if env.d == 1:
        grid[0, env.coords[:, 0] + m] = values
    else:
        grid[env.coords[:, 1] + m, env.coords[:, 0] + m] = values
    return grid, ~np.isnan(grid)


def quantize(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Map ``[lo, hi]`` linearly onto levels 0..255 (constant input maps to 0)."""
    if hi > lo:
        scaled = np.floor((values - lo) / (hi - lo) * 255.0 + 0.5)
    else:
        scaled = np.zeros_like(values)
    return np.clip(scaled, 0, 255).astype(np.int64)


def write_pgm(path: str, env: Environment, values: np.ndarray, lo: float, hi: float,
              meta: Optional[Mapping[str, object]] = None) -> None:
    """ASCII PGM (P2) with the level mapping documented in comments.

    ``level = round(255 (v - lo) / (hi - lo))`` clipped to 0..255; cells
    outside the window get level 0.  Rows run from the most negative second
    coordinate upwards.
    """
    finite = np.where(np.isfinite(values), values, lo)
    grid, inside = frame_grid(env, finite)
    levels = np.where(inside, quantize(np.nan_to_num(grid, nan=lo), lo, hi), 0)
    h, w = levels.shape
    lines = ["P2", f"# min={fmt(lo)}", f"# max={fmt(hi)}",
             "# level=round(255*(v-min)/(max-min)) clipped to 0..255; outside window=0"]
    for key, value in (meta or {}).items():
        lines.append(f"# {key}={fmt(value)}")
    lines += [f"{w} {h}", "255"]
    lines += [" ".join(str(v) for v in row) for row in levels.tolist()]
    _write_lines(path, lines)


def read_pgm(path: str) -> tuple[dict, np.ndarray]:
    meta: dict = {}
    tokens: list[str] = []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body and not body.startswith("level="):
                    k, _, v = body.partition("=")
                    meta[k] = v
                continue
            tokens += line.split()
    if not tokens or tokens[0] != "P2":
        raise FormatError(f"{path}: not an ASCII PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = np.array([int(v) for v in tokens[4:]], dtype=np.int64)
    if data.size != w * h or maxval != 255:
        raise FormatError(f"{path}: bad PGM dimensions")
    return meta, data.reshape(h, w)


def finite_range(arrays: Iterable[np.ndarray]) -> tuple[float, float]:
    lo, hi = math.inf, -math.inf
    for a in arrays:
        a = np.asarray(a)
        a = a[np.isfinite(a)]
        if a.size:
            lo, hi = min(lo, float(a.min())), max(hi, float(a.max()))
    if lo > hi:
        return 0.0, 0.0
    return lo, hi
