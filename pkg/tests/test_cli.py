import dataclasses
import os
import subprocess
import sys

import numpy as np
import pytest

from lilypad_brw.cli import (RunConfig, build_parser, config_from_args, main, parse_config,
                             serialize_config)
from lilypad_brw.errors import InvalidParameter
from lilypad_brw.textio import read_csv, read_kv, read_pgm


def read_manifest(directory):
    return read_kv(os.path.join(directory, "manifest.txt"))


def test_config_round_trip():
    config = RunConfig(mode="compare", d=2, alpha=4.5, T=33.0, T_ladder=(20.0, 50.0),
                       R=0.7, seed=9, times=(0.1, 0.25), self_check=True, r=0.01,
                       tol=1e-9, variant="S3", frame_field="support")
    assert parse_config(serialize_config(config)) == config
    assert parse_config(serialize_config(RunConfig())) == RunConfig()


def test_config_rejects_unknown_keys_and_bad_values():
    with pytest.raises(InvalidParameter):
        parse_config("[run]\nspeed = 3\n")
    with pytest.raises(InvalidParameter):
        parse_config("[run]\nself_check = maybe\n")
    with pytest.raises(InvalidParameter):
        parse_config("[scaling]\nd = two\n")
    with pytest.raises(InvalidParameter):
        RunConfig(mode="lilypad", alpha=0.5).validate()


def test_rerun_reproduces_manifest(tmp_path):
    args = ["simulate", "--seed", "4", "--set", "R=0.5", "--set", "t_end=0.1",
            "--set", "replicates=3", "--set", "frames=2"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b"), "--threads", "2"]) == 0
    ma, mb = read_manifest(tmp_path / "a"), read_manifest(tmp_path / "b")
    assert ma["sha256:rep_0002/counts_001.txt"] == mb["sha256:rep_0002/counts_001.txt"]
    ma.pop("config_hash"), mb.pop("config_hash")
    assert ma == mb


def test_identical_configs_give_identical_manifests(tmp_path):
    for name in ("a", "b"):
        assert main(["lilypad", "--set", "R=1.0", "--set", "frames=3", "--out",
                     str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "manifest.txt").read_bytes() == (tmp_path / "b" / "manifest.txt").read_bytes()


def test_frames_are_nested(tmp_path):
    out = tmp_path / "f"
    assert main(["frames", "--set", "d=2", "--set", "alpha=5", "--set", "R=1.0",
                 "--set", "frame_field=support", "--set", "frames=6", "--out", str(out)]) == 0
    names = sorted(os.listdir(out / "frames"))
    assert len(names) == 6
    grids = [read_pgm(str(out / "frames" / n))[1] for n in names]
    for a, b in zip(grids, grids[1:]):
        assert np.all(b[a > 0] > 0)
    settled = [int(r["settled"]) for r in read_csv(str(out / "frames.csv"))]
    assert settled == sorted(settled)


def test_compare_self_check_reports_zero(tmp_path):
    out = tmp_path / "c"
    assert main(["compare", "--self-check", "--set", "d=2", "--set", "alpha=4",
                 "--set", "T=10", "--set", "R=1.0", "--set", "frames=3", "--out", str(out)]) == 0
    report = read_kv(str(out / "report.txt"))
    assert report["self_check"] == "true"
    assert float(report["sup_mass_dev"]) <= 1e-12
    assert float(report["sup_hit_dev"]) <= 1e-12
    assert float(report["max_hausdorff"]) == 0.0


def test_scenario_s3_reports_two_components(tmp_path, capsys):
    out = tmp_path / "s"
    code = main(["scenario", "--variant", "S3", "--set", "T=2.718281828459045",
                 "--out", str(out)])
    assert code == 0
    report = read_kv(str(out / "report.txt"))
    assert int(report["components"]) >= 2
    assert report["condition_S3"] == "true"
    assert "manifest=" in capsys.readouterr().out


def test_errors_become_one_parseable_line(tmp_path, capsys):
    code = main(["lilypad", "--set", "alpha=0.5", "--out", str(tmp_path / "e")])
    assert code == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error=InvalidParameter msg=")
    assert main(["lilypad", "--set", "nonsense", "--out", str(tmp_path / "e")]) == 2


def test_threads_fall_back_to_environment_variable():
    parser = build_parser()
    args = parser.parse_args(["simulate"])
    assert config_from_args(args, {"LILYPAD_THREADS": "3"}).threads == 3
    args = parser.parse_args(["simulate", "--threads", "2"])
    assert config_from_args(args, {"LILYPAD_THREADS": "3"}).threads == 2
    with pytest.raises(InvalidParameter):
        config_from_args(parser.parse_args(["simulate"]), {"LILYPAD_THREADS": "x"})


def test_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(serialize_config(dataclasses.replace(RunConfig(), seed=5, R=0.8)))
    args = build_parser().parse_args(["gen-env", "--config", str(cfg), "--seed", "7"])
    config = config_from_args(args, {})
    assert (config.mode, config.seed, config.R) == ("gen-env", 7, 0.8)


def test_t_ladder_writes_one_directory_per_value(tmp_path):
    out = tmp_path / "ladder"
    assert main(["pam", "--T-ladder", "10,20", "--set", "R=0.6", "--set", "t_end=0.2",
                 "--set", "grid=2", "--out", str(out)]) == 0
    assert sorted(os.listdir(out)) == ["T_10", "T_20", "trend.csv"]
    rows = read_csv(str(out / "trend.csv"))
    assert [float(r["T"]) for r in rows] == [10.0, 20.0]
    assert read_manifest(out / "T_20")["package_version"]


def test_pam_lilypad_and_gen_env_modes(tmp_path):
    assert main(["gen-env", "--set", "R=0.5", "--out", str(tmp_path / "g")]) == 0
    env_file = tmp_path / "g" / "env.txt"
    assert main(["pam-lilypad", "--set", f"env_file={env_file}", "--set", "frames=2",
                 "--out", str(tmp_path / "p")]) == 0
    assert float(read_manifest(tmp_path / "p")["alternate_form_gap"]) <= 1e-9


def test_module_entry_point(tmp_path):
    result = subprocess.run([sys.executable, "-m", "lilypad_brw", "gen-env", "--set", "R=0.3",
                             "--out", str(tmp_path / "m")], capture_output=True, text=True)
    assert result.returncode == 0, result.stderr
    assert result.stdout.startswith("manifest=")
