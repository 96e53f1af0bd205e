"""Command line: help, exit codes, config precedence and an end-to-end run."""
import csv
import json
import os

import numpy as np
import pytest

from prop3d import cli
from prop3d.ground import GroundPlane
from prop3d.io import kitti
from prop3d.pipeline import read_plane
from prop3d.sampler import read_proposals_csv


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth-gen -> fit-templates -> fit-stats -> train-weights -> propose -> eval-recall."""
    d = tmp_path_factory.mktemp("cli")
    data, tpl, model, trained = d / "data", d / "tpl.json", d / "m.json", d / "mt.json"
    assert run("synth-gen", "--out", data, "--n", 4, "--n-objects", "1,3", "--distance", "8,25") == 0
    assert run("fit-templates", "--data", data, "--out", tpl) == 0
    assert run("fit-stats", "--data", data, "--templates", tpl, "--out", model) == 0
    assert run("train-weights", "--data", data, "--model", model, "--out", trained,
               "--max-rounds", 10, "--log", d / "trace.csv") == 0
    props = d / "props"
    assert run("propose", "--input", data / "velodyne", "--calib", data / "calib", "--plane", data / "planes",
               "--model", trained, "--out", props, "--k", 100) == 0
    assert run("eval-recall", "--props", props, "--gt", data / "label_2", "--calib", data / "calib",
               "--out", d / "recall.csv", "--budgets", "1,10,100", "--summary", d / "summary.json") == 0
    return d


class TestHelp:
    def test_top_level(self, capsys):
        assert run("--help") == 0
        out = capsys.readouterr().out
        for name in cli.COMMANDS:
            assert name in out

    def test_paper_defaults_marked(self, capsys):
        assert run("propose", "--help") == 0
        out = " ".join(capsys.readouterr().out.split())
        for flag in ("--voxel-size", "--delta", "--k", "--far-threshold", "--margin"):
            assert flag in out
        assert out.count("[paper]") == sum(1 for n in ("voxel_size", "delta", "k", "far_threshold", "margin")
                                           if cli.OPTIONS[n][2])
        assert "(default: 0.75)" in out and "(default: 2000)" in out

    def test_unmarked_option(self, capsys):
        run("train-weights", "--help")
        out = " ".join(capsys.readouterr().out.split())
        i = out.index("--C C")
        assert "[paper]" not in out[i:i + 80]


class TestExitCodes:
    def test_no_command(self):
        assert run() == 2

    def test_unknown_flag(self):
        assert run("propose", "--bogus") == 2

    def test_bad_choice(self):
        assert run("eval-recall", "--props", ".", "--gt", ".", "--out", "x", "--space", "4d") == 2

    def test_missing_model(self, tmp_path):
        scan = tmp_path / "s.csv"
        scan.write_text("x,y,z\n0,1,10\n")
        assert run("propose", "--input", scan, "--model", tmp_path / "none.json", "--out", tmp_path / "o.csv") == 2

    @pytest.mark.parametrize("flag,value", [("--delta", "1.5"), ("--k", "0"), ("--voxel-size", "-0.2"),
                                            ("--grid-lo", "1,2")])
    def test_bad_values(self, pipeline, tmp_path, capsys, flag, value):
        code = run("propose", "--input", pipeline / "data/velodyne/000000.bin", "--calib",
                   pipeline / "data/calib/000000.txt", "--model", pipeline / "mt.json",
                   "--out", tmp_path / "o.csv", flag, value)
        assert code == 2
        assert "error" in capsys.readouterr().err

    def test_bin_without_calib(self, pipeline, tmp_path):
        assert run("propose", "--input", pipeline / "data/velodyne/000000.bin", "--model", pipeline / "mt.json",
                   "--out", tmp_path / "o.csv") == 2

    def test_malformed_cloud(self, pipeline, tmp_path, capsys):
        bad = tmp_path / "s.csv"
        bad.write_text("x,y\n1,2\n")
        code = run("propose", "--input", bad, "--model", pipeline / "mt.json", "--out", tmp_path / "o.csv")
        assert code == 1
        assert "DepthError" in capsys.readouterr().err

    def test_no_labels_is_runtime_error(self, tmp_path, capsys):
        (tmp_path / "label_2").mkdir()
        assert run("fit-templates", "--data", tmp_path, "--out", tmp_path / "t.json") == 1
        assert "RuntimeError" in capsys.readouterr().err


class TestConfig:
    def test_precedence(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"k": 7, "delta": 0.5}))
        args = cli.build_parser().parse_args(["propose", "--input", "a", "--model", "m", "--out", "o",
                                              "--config", str(cfg), "--k", "9"])
        resolved = cli.resolve(args)
        assert resolved["k"] == 9
        assert resolved["delta"] == 0.5
        assert resolved["voxel_size"] == cli.OPTIONS["voxel_size"][0]

    def test_unknown_key(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"nope": 1}))
        assert run("propose", "--input", "a", "--model", "m", "--out", "o", "--config", cfg) == 2

    def test_invalid_json(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text("{")
        assert run("propose", "--input", "a", "--model", "m", "--out", "o", "--config", cfg) == 2


class TestPipeline:
    def test_synth_layout(self, pipeline):
        for sub in ("velodyne", "label_2", "calib", "planes"):
            assert len(os.listdir(pipeline / "data" / sub)) == 4
        labels = kitti.read_labels(pipeline / "data/label_2/000000.txt")
        assert 1 <= len(labels) <= 3

    def test_templates_and_model(self, pipeline):
        tpl = json.loads((pipeline / "tpl.json").read_text())
        assert 1 <= len(tpl["templates"]) <= 3
        trained = json.loads((pipeline / "mt.json").read_text())
        untrained = json.loads((pipeline / "m.json").read_text())
        assert trained != untrained

    def test_training_trace(self, pipeline):
        rows = list(csv.DictReader(open(pipeline / "trace.csv")))
        assert rows

    def test_propose_contract(self, pipeline):
        for name in sorted(os.listdir(pipeline / "props")):
            boxes, energies, _ = read_proposals_csv(pipeline / "props" / name)
            assert 0 < len(boxes) <= 100
            assert np.all(np.diff(energies) >= 0)

    def test_recall_csv(self, pipeline):
        rows = list(csv.DictReader(open(pipeline / "recall.csv")))
        assert [int(r["budget"]) for r in rows] == [1, 10, 100]
        rec = [float(r["recall"]) for r in rows]
        assert rec == sorted(rec) and 0 <= rec[0] and rec[-1] <= 1
        summary = json.loads((pipeline / "summary.json").read_text())
        assert 0 <= summary["AR"] <= 1

    def test_propose_idempotent(self, pipeline, tmp_path):
        args = ["propose", "--input", pipeline / "data/velodyne/000001.bin", "--calib",
                pipeline / "data/calib/000001.txt", "--plane", pipeline / "data/planes/000001.txt",
                "--model", pipeline / "mt.json", "--k", 50]
        assert run(*args, "--out", tmp_path / "a.csv") == 0
        assert run(*args, "--out", tmp_path / "b.csv", "--threads", 4) == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert run(*args, "--out", tmp_path / "a.txt") == 0
        assert run(*args, "--out", tmp_path / "b.txt") == 0
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()

    def test_kitti_format_evaluates(self, pipeline, tmp_path):
        props = tmp_path / "kp"
        assert run("propose", "--input", pipeline / "data/velodyne", "--calib", pipeline / "data/calib",
                   "--plane", pipeline / "data/planes", "--model", pipeline / "mt.json", "--out", props,
                   "--k", 100, "--format", "kitti") == 0
        assert run("eval-recall", "--props", props, "--gt", pipeline / "data/label_2",
                   "--out", tmp_path / "r.csv", "--budgets", "1,10,100") == 0
        a = (tmp_path / "r.csv").read_text()
        b = (pipeline / "recall.csv").read_text()
        assert a.splitlines()[-1] == b.splitlines()[-1]

    def test_missing_proposal_file(self, pipeline, tmp_path):
        (tmp_path / "p").mkdir()
        assert run("eval-recall", "--props", tmp_path / "p", "--gt", pipeline / "data/label_2",
                   "--out", tmp_path / "r.csv") == 2

    def test_estimate_ground(self, pipeline, tmp_path, capsys):
        out = tmp_path / "plane.json"
        assert run("estimate-ground", "--input", pipeline / "data/velodyne/000000.bin",
                   "--calib", pipeline / "data/calib/000000.txt", "--out", out) == 0
        est = GroundPlane.from_dict(json.loads(out.read_text()))
        ref = read_plane(str(pipeline / "data/planes/000000.txt"))
        assert est.angle_to(ref) < 1.0
        assert abs(est.offset - ref.offset) < 0.02
