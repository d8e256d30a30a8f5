import math

import numpy as np
import pytest

from lilypad_brw.brw_simulator import simulate
from lilypad_brw.environment import ScalingConstants, derive_scaling, sample_environment, with_potential
from lilypad_brw.errors import FormatError, InvalidParameter
from lilypad_brw.lilypad import mass_field, solve_hitting_times, support
from lilypad_brw.pam_solver import solve_pam
from lilypad_brw.textio import (fmt, quantize, read_csv, read_environment, read_field,
                                read_kv, read_pgm, write_csv, write_environment,
                                write_field, write_kv, write_logu, write_pgm, write_record)


def test_fmt_round_trips_doubles():
    rng = np.random.default_rng(0)
    for x in rng.standard_normal(200) * 10.0 ** rng.integers(-300, 300, 200):
        assert float(fmt(float(x))) == x
    assert fmt(True) == "true" and fmt(None) == "none" and fmt(np.int64(3)) == "3"


@pytest.mark.parametrize("d", [1, 2, 3])
def test_environment_round_trip_is_bit_exact(tmp_path, d):
    sc = derive_scaling(d, d + 1.3, 17.0)
    env = sample_environment(sc, 6.5 / sc.rT, 12)
    p = tmp_path / "env.txt"
    write_environment(env, str(p))
    back = read_environment(str(p))
    assert back.scaling == env.scaling
    assert back.window_radius == env.window_radius and back.seed == env.seed
    assert np.array_equal(back.coords, env.coords)
    assert np.array_equal(back.xi, env.xi)
    assert np.array_equal(back.xiT, env.xiT)
    assert np.array_equal(solve_hitting_times(back).h, solve_hitting_times(env).h)


def test_environment_reader_rejects_bad_files(tmp_path):
    env = with_potential(ScalingConstants.lattice_units(1), 2.5)
    p = tmp_path / "env.txt"
    write_environment(env, str(p))
    text = p.read_text()
    (tmp_path / "short.txt").write_text(text + "7\n")
    with pytest.raises(FormatError):
        read_environment(str(tmp_path / "short.txt"))
    (tmp_path / "nohead.txt").write_text("\n".join(l for l in text.splitlines() if "alpha" not in l))
    with pytest.raises(FormatError):
        read_environment(str(tmp_path / "nohead.txt"))
    (tmp_path / "low.txt").write_text(text.replace("\n0 1\n", "\n0 0.5\n"))
    with pytest.raises(FormatError):
        read_environment(str(tmp_path / "low.txt"))


def test_field_round_trip(tmp_path):
    sc = derive_scaling(2, 4.0, 10.0)
    env = sample_environment(sc, 1.0, 3)
    field = solve_hitting_times(env)
    m = mass_field(field, 0.3).values
    p = tmp_path / "f.txt"
    write_field(str(p), env, {"h": field.h, "m": m}, {"t": 0.3})
    meta, coords, cols = read_field(str(p))
    assert float(meta["t"]) == 0.3
    assert np.array_equal(coords, env.coords)
    assert np.array_equal(cols["h"], field.h)
    assert np.array_equal(cols["m"], m)
    with pytest.raises(InvalidParameter):
        write_field(str(p), env, {"x": np.zeros(3)})


def test_logu_table_keeps_negative_infinity(tmp_path):
    env = with_potential(ScalingConstants.lattice_units(1), 3.5, {(1,): 4.0})
    pam = solve_pam(env, 0.5, 2)
    p = tmp_path / "logu.txt"
    write_logu(str(p), pam)
    meta, _, cols = read_field(str(p))
    assert np.array_equal(cols["t0"], pam.logu[0])
    assert np.array_equal(cols["t2"], pam.logu[2])
    assert [float(v) for v in meta["times"].split(",")] == list(pam.time_grid)


def test_record_export_recomputes_statistics(tmp_path):
    sc = ScalingConstants.lattice_units(1)
    env = with_potential(sc, 5.5, {(1,): 3.0})
    t = 1.5 / sc.T
    rec = simulate(env, t, [t / 2, t], 6)
    write_record(rec, str(tmp_path))
    summary = read_kv(str(tmp_path / "summary.txt"))
    assert int(summary["events"]) == rec.events
    _, _, hits = read_field(str(tmp_path / "hits.txt"))
    assert np.array_equal(hits["first_hit"], rec.first_hit)
    _, _, counts = read_field(str(tmp_path / "counts_001.txt"))
    assert np.array_equal(counts["count"], rec.counts(t))
    on_disk = hits["first_hit"] / sc.T <= t
    assert np.array_equal(on_disk, support(rec, t).mask)


def test_kv_and_csv_round_trip(tmp_path):
    write_kv(str(tmp_path / "a.txt"), {"x": 0.1, "flag": False})
    assert read_kv(str(tmp_path / "a.txt")) == {"x": "0.10000000000000001", "flag": "false"}
    write_csv(str(tmp_path / "b.csv"), [{"t": 0.5, "n": 2}, {"t": math.inf, "n": 3}])
    rows = read_csv(str(tmp_path / "b.csv"))
    assert rows[1] == {"t": "inf", "n": "3"}


def test_quantize_levels():
    levels = quantize(np.array([0.0, 0.5, 1.0, 2.0, -1.0]), 0.0, 1.0)
    assert levels.tolist() == [0, 128, 255, 255, 0]
    assert quantize(np.array([3.0]), 3.0, 3.0).tolist() == [0]


def test_pgm_layout(tmp_path):
    env = with_potential(ScalingConstants.lattice_units(2), 2.5)
    values = np.zeros(env.n)
    values[env.site_index((1, 0))] = 1.0
    p = tmp_path / "f.pgm"
    write_pgm(str(p), env, values, 0.0, 1.0, {"t": 0.25})
    meta, grid = read_pgm(str(p))
    assert grid.shape == (5, 5)
    assert float(meta["min"]) == 0.0 and float(meta["max"]) == 1.0 and float(meta["t"]) == 0.25
    assert grid[2, 3] == 255  # row = second coordinate, column = first
    assert grid.sum() == 255
    with pytest.raises(InvalidParameter):
        write_pgm(str(p), with_potential(ScalingConstants.lattice_units(3), 1.5),
                  np.zeros(7), 0.0, 1.0)
