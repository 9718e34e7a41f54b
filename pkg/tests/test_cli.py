import json

import numpy as np
import pytest

from abcdcp.cli import EXIT_ERROR, EXIT_NOT_SIGNIFICANT, EXIT_OK, EXIT_USAGE, main
from abcdcp.core import SeriesTensor, save_series
from abcdcp.pipeline import BandStack, LabelArray, save_labels, save_stack


@pytest.fixture
def sim_csv(tmp_path, rng):
    x = rng.standard_normal((60, 12))
    x[30:, :4] += 2.0
    path = tmp_path / "sim.csv"
    save_series(SeriesTensor(x), path)
    return path


def run(*args):
    return main([str(a) for a in args])


def test_detect_writes_result_and_is_repeatable(tmp_path, sim_csv):
    out = tmp_path / "run.json"
    args = ["detect", "--input", sim_csv, "--blocks", "1,3", "--k", 10, "--permutations", 50,
            "--seed", 7, "-o", out, "--threads", 2]
    assert run(*args) == EXIT_OK
    first = out.read_bytes()
    assert run(*args) == EXIT_OK
    assert out.read_bytes() == first
    data = json.loads(first)
    assert data["tau_hat"] == 30 and data["run_config"]["seed"] == 7
    manifest = json.loads((tmp_path / "run.json.manifest.json").read_text())
    assert manifest["run_config"]["outputs"] == [str(out)]


def test_detect_not_significant(tmp_path, rng):
    path = tmp_path / "null.csv"
    save_series(SeriesTensor(rng.standard_normal((40, 5))), path)
    code = run("detect", "--input", path, "--blocks", "1", "--k", 5, "--permutations", 19,
               "--alpha", 0.01, "-o", tmp_path / "r.json")
    assert code == EXIT_NOT_SIGNIFICANT


def test_errors_and_usage(tmp_path, capsys):
    assert run("detect", "--input", tmp_path / "missing.csv", "-o", tmp_path / "r.json") == EXIT_ERROR
    assert "missing.csv" in capsys.readouterr().err
    assert run("detect", "--input", "x.csv", "--blocks", "1,,y") == EXIT_USAGE
    assert "1,4,10,20" in capsys.readouterr().err
    assert run("detect") == EXIT_USAGE
    assert run("frobnicate") == EXIT_USAGE


def test_generate_and_segment(tmp_path):
    series = tmp_path / "g.json"
    assert run("generate", "--n", 90, "--shape", 10, "--tau", 45, "--D", 5, "--mean-norm", 6,
               "--seed", 2, "-o", series) == EXIT_OK
    meta = json.loads(series.read_text())
    assert meta["changed_components"] == [1, 2, 3, 4, 5]
    out = tmp_path / "seg.json"
    code = run("segment", "--input", tmp_path / "g.bin", "--blocks", "1,2", "--permutations", 50,
               "--min-len", 30, "--alpha", 0.05, "-o", out, "--threads", 1)
    assert code == EXIT_OK
    rep = json.loads(out.read_text())
    assert any(abs(c["tau_hat"] - 45) <= 3 for c in rep["change_points"])
    assert rep["config"]["trimming"] == "per interval"


def test_simulate_and_power_alias(tmp_path, capsys):
    design = tmp_path / "d.toml"
    design.write_text('[experiment]\nn = 30\nshape = [6]\ntrials = 2\n'
                      '[change]\nmean_norm = 4.0\nD = 6\n[[detector]]\nblocks = "1,2"\nk = 4\n')
    for cmd in ("simulate", "power"):
        out = tmp_path / f"{cmd}.csv"
        assert run(cmd, "--design", design, "--trials", 3, "--seed", 1, "--permutations", 9,
                   "-o", out) == EXIT_OK
        assert out.read_text().startswith("cell,detector")
    assert (tmp_path / "simulate.csv").read_text() == (tmp_path / "power.csv").read_text()


def test_image_pipeline_end_to_end(tmp_path, rng):
    n, d1, d2 = 40, 8, 8
    raw = rng.gamma(2.0, 1.0, size=(3, d1, d2, n))
    raw[:, :4, :4, 20:] += 3.0
    labels = np.zeros((d1, d2, n), dtype=np.uint8)
    labels[:4, :4, 20:] = 1
    labels[0, 7, 10:] = 1
    save_stack(BandStack(raw, ("B4", "B3", "B2")), tmp_path / "raw.json")
    save_labels(LabelArray(labels), tmp_path / "labels.json")

    assert run("preprocess", "--stack", tmp_path / "raw.json", "-o", tmp_path / "std.json") == EXIT_OK
    assert run("fuse", "--stack", tmp_path / "std.json", "--labels", tmp_path / "labels.json",
               "-o", tmp_path / "fused.json") == EXIT_OK
    fit = json.loads((tmp_path / "fused.fit.json").read_text())
    assert len(fit["flagged_pixels"]["degenerate-labels"]) == d1 * d2 - 17
    assert json.loads((tmp_path / "fused.json").read_text())["source_stack"].endswith("std.json")

    assert run("detect", "--input", tmp_path / "fused.json", "--blocks", "1x1,2x2", "--k", 5,
               "--permutations", 19, "-o", tmp_path / "run.json") == EXIT_OK
    assert run("heatmap", "--result", tmp_path / "run.json", "--window", 5,
               "--out-dir", tmp_path / "maps") == EXIT_OK
    side = json.loads((tmp_path / "maps" / "heatmap.json").read_text())
    assert side["after"][0] == side["tau_hat"] + 1
    assert (tmp_path / "maps" / "heatmap_difference.pgm").exists()
