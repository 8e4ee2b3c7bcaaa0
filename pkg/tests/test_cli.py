"""CLI surface tests: scenarios, resolution, exit codes, determinism."""

import json
import pathlib
import subprocess
import sys

import numpy as np
import pytest

from cgamotion import fixtures, skinning
from cgamotion.cli import main

REPO = pathlib.Path(__file__).resolve().parent.parent


def run_main(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def run_proc(*argv, cwd=None):
    return subprocess.run([sys.executable, "-m", "cgamotion.cli", *argv],
                          capture_output=True, text=True, cwd=cwd)


class TestSkin:
    def test_identity_pose_outputs_rest_vertices(self, capsys):
        code, out, _ = run_main(capsys, "run", "skin", "--model",
                                str(REPO / "fixtures" / "arm"),
                                "--pose", "identity")
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "vertex,x,y,z"
        got = np.array([[float(c) for c in ln.split(",")[1:]]
                        for ln in lines[1:]])
        rest = fixtures.arm_model().rest_vertices
        assert np.max(np.abs(got - rest)) <= 1e-9

    def test_builtin_name_fallback(self, capsys):
        code, out, _ = run_main(capsys, "run", "skin", "--model", "arm",
                                "--pose", "wave:0.3")
        assert code == 0
        assert len(out.strip().splitlines()) == 37

    def test_walk_pose(self, capsys):
        code, out, _ = run_main(capsys, "run", "skin", "--model", "walk",
                                "--pose", "walk:12")
        assert code == 0
        model = fixtures.walk_model()
        got = np.array([[float(c) for c in ln.split(",")[1:]]
                        for ln in out.strip().splitlines()[1:]])
        want = skinning.skin_model(model, fixtures.walk_pose(12))
        assert np.array_equal(got, want)

    def test_unknown_model_is_config_error(self, capsys):
        code, _, err = run_main(capsys, "run", "skin", "--model", "nope")
        assert code == 2
        assert "error[ConfigError]" in err

    def test_bad_pose_spec(self, capsys):
        code, _, err = run_main(capsys, "run", "skin", "--model", "arm",
                                "--pose", "sideways")
        assert code == 2
        assert "unknown pose" in err

    def test_corrupt_model_file_is_io_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.model"
        bad.write_text("format nonsense 9\n")
        code, _, err = run_main(capsys, "run", "skin", "--model", str(bad))
        assert code == 3
        assert "error[IoError]" in err


class TestCodec:
    def test_walk_track_report(self, capsys):
        code, out, _ = run_main(capsys, "run", "codec", "--track", "walk",
                                "--epsilon", "1e-3")
        assert code == 0
        metrics = dict(ln.split(",", 1) for ln in out.strip().splitlines()[1:])
        assert float(metrics["compression_ratio"]) >= 2.0
        assert float(metrics["max_vertex_error"]) <= 1e-3

    def test_jsonl_round_trips_floats(self, capsys):
        code, out, _ = run_main(capsys, "run", "codec", "--track", "smooth",
                                "--format", "jsonl")
        assert code == 0
        rows = [json.loads(ln) for ln in out.strip().splitlines()]
        report = {r["metric"]: r["value"] for r in rows}
        assert report["frames"] == 120
        assert 0.0 < report["max_vertex_error"] <= 1e-3

    def test_file_track_requires_model(self, tmp_path, capsys):
        from cgamotion import anim_codec
        path = tmp_path / "custom.track"
        anim_codec.save_track(fixtures.smooth_track(frames=16), path)
        code, _, err = run_main(capsys, "run", "codec", "--track", str(path))
        assert code == 2
        assert "--model is required" in err
        code, out, _ = run_main(capsys, "run", "codec", "--track", str(path),
                                "--model", "arm")
        assert code == 0
        assert "compression_ratio" in out


class TestNet:
    def test_seeded_runs_write_identical_files(self, tmp_path):
        args = ("run", "net", "--fixture", "walk", "--snapshot-every", "30",
                "--loss", "0.1", "--seed", "7")
        paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
        for p in paths:
            proc = run_proc(*args, "--out", str(p))
            assert proc.returncode == 0, proc.stderr
            assert "protocol_ratio" in proc.stdout
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_harness_file_with_flag_override(self, tmp_path, capsys):
        cfg = tmp_path / "s.harness"
        cfg.write_text("format harness 1\nframes 30\nloss 0.5\nseed 1\n")
        code, out, _ = run_main(capsys, "run", "net", "--harness", str(cfg),
                                "--loss", "0.0", "--out",
                                str(tmp_path / "m.csv"))
        assert code == 0
        rows = (tmp_path / "m.csv").read_text().strip().splitlines()
        assert rows[0] == ("time_ms,bytes_protocol,bytes_baseline,"
                           "rendered_error,dropped,delivered")
        assert len(rows) == 1 + 30
        assert all(ln.split(",")[4] == "0" for ln in rows[1:])  # no drops

    def test_unknown_fixture(self, capsys):
        code, _, err = run_main(capsys, "run", "net", "--fixture", "dance")
        assert code == 2
        assert "unknown net fixture" in err


class TestSoftRopeKnot:
    def test_soft_trajectory_shape(self, capsys):
        code, out, _ = run_main(capsys, "run", "soft", "--body", "jello",
                                "--steps", "6", "--sample-every", "3")
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "step,particle,x,y,z"
        assert len(lines) == 1 + 3 * 64      # steps 0, 3, 6
        assert lines[1].startswith("0,0,")

    def test_soft_builtin_matches_fixture_file(self, capsys):
        argv = ("run", "soft", "--steps", "12")
        _, out_a, _ = run_main(capsys, *argv, "--body", "jello")
        _, out_b, _ = run_main(capsys, *argv, "--body",
                               str(REPO / "fixtures" / "jello.body"))
        assert out_a == out_b

    def test_rope_trajectory(self, capsys):
        code, out, _ = run_main(capsys, "run", "rope", "--rope", "hanging",
                                "--steps", "4", "--sample-every", "2")
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "step,node,x,y,z"
        assert len(lines) == 1 + 3 * 30

    def test_sample_every_validated(self, capsys):
        code, _, err = run_main(capsys, "run", "rope", "--sample-every", "0")
        assert code == 2
        assert "--sample-every" in err

    def test_knot_report(self, capsys):
        code, out, _ = run_main(capsys, "run", "knot", "--steps", "50")
        assert code == 0
        metrics = dict(ln.split(",", 1) for ln in out.strip().splitlines()[1:])
        assert metrics["passed"] == "1"
        assert float(metrics["min_distance"]) >= 0.022
        assert float(metrics["radius"]) == 0.022


class TestVerify:
    def test_codec_suite_passes(self, capsys):
        code, out, _ = run_main(capsys, "verify", "codec")
        assert code == 0
        lines = out.strip().splitlines()
        assert len(lines) == 4
        assert all(ln.startswith("PASS codec.") for ln in lines)
        assert all("measured=" in ln for ln in lines)

    def test_unknown_suite_exit_code(self, capsys):
        code, _, err = run_main(capsys, "verify", "bogus")
        assert code == 2
        assert "error[UnknownSuite]" in err


class TestFixtures:
    def test_list_catalogue(self, capsys):
        code, out, _ = run_main(capsys, "fixtures", "list")
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "name,kind,description"
        names = {tuple(ln.split(",")[:2]) for ln in lines[1:]}
        assert ("trefoil", "rope") in names
        assert ("golden", "wire") in names

    def test_write_round_trips(self, tmp_path, capsys):
        code, out, _ = run_main(capsys, "fixtures", "write", "--dir",
                                str(tmp_path))
        assert code == 0
        written = out.strip().splitlines()
        assert len(written) == 11
        committed = REPO / "fixtures"
        for path in written:
            rel = pathlib.Path(path).relative_to(tmp_path)
            assert (committed / rel).read_bytes() == \
                pathlib.Path(path).read_bytes()


class TestReport:
    def test_renders_figures_and_summary(self, tmp_path, capsys):
        metrics = tmp_path / "m.csv"
        code, _, _ = run_main(capsys, "run", "net", "--frames", "60",
                              "--loss", "0.1", "--seed", "3",
                              "--out", str(metrics))
        assert code == 0
        out_dir = tmp_path / "report"
        code, out, _ = run_main(capsys, "report", "--metrics", str(metrics),
                                "--out-dir", str(out_dir))
        assert code == 0
        assert len(out.strip().splitlines()) == 4
        for name in ("bandwidth.png", "rendered_error.png", "delivery.png"):
            data = (out_dir / name).read_bytes()
            assert data[:8] == b"\x89PNG\r\n\x1a\n"
        summary = dict(
            ln.split(",", 1)
            for ln in (out_dir / "summary.csv").read_text().splitlines()[1:])
        assert float(summary["bandwidth_ratio"]) > 1.0
        assert float(summary["rows"]) == 60.0

    def test_missing_metrics_is_io_error(self, tmp_path, capsys):
        code, _, err = run_main(capsys, "report", "--metrics",
                                str(tmp_path / "none.csv"),
                                "--out-dir", str(tmp_path))
        assert code == 3
        assert "error[IoError]" in err


class TestEntryPoint:
    def test_console_script_help(self):
        proc = run_proc("--help")
        assert proc.returncode == 0
        for word in ("run", "verify", "fixtures", "report"):
            assert word in proc.stdout

    def test_argparse_usage_error_exits_2(self):
        proc = run_proc("run")
        assert proc.returncode == 2
