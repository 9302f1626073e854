"""End-to-end harness and CLI tests on a deliberately small problem."""

import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from odeident import cli, harness

TINY = {
    "name": "tiny",
    "problem": {
        "rhs": "cubic_cos",
        "t_start": 0.0,
        "t_end": 0.16,
        "dt": 0.04,
        "n_trajectories": 30,
        "ic_box": [[-0.7, 0.9]],
        "ic_seed": 3,
    },
    "noise_levels": [0.0, 0.02],
    "seed": 11,
    "methods": {
        "ensemble": {
            "generator": {"hidden_widths": [8, 8], "epochs": 150,
                          "learning_rate": 5.0e-3},
            "interpolation": {"hidden_widths": [12, 12], "epochs": 200,
                              "learning_rate": 5.0e-3, "alpha": 0.0},
        },
        "splines": {
            "lambda": None,
            "interpolation": {"hidden_widths": [12, 12], "epochs": 200,
                              "learning_rate": 5.0e-3},
        },
        "multistep": {"hidden_widths": [12, 12], "epochs": 150,
                      "learning_rate": 5.0e-3},
        "polyfit": {"degree": 5, "targets": "splines"},
        "sindy": {"targets": "splines", "threshold": 0.05,
                  "library": {"poly_degree": 4, "elementary": ["cos"]}},
    },
    "metrics": {"grid_counts": {"t": 10, "x": 20}, "solution_n_ics": 3,
                "solution_seed": 99},
    "output_dir": "PLACEHOLDER",
}


@pytest.fixture
def tiny_config(tmp_path):
    cfg = json.loads(json.dumps(TINY))
    cfg["output_dir"] = str(tmp_path / "out")
    p = tmp_path / "tiny.yaml"
    p.write_text(yaml.safe_dump(cfg))
    return p


def test_malformed_config_exits_1(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("methods: [not, a, mapping\n")
    assert cli.main(["generate", "-c", str(p)]) == 1
    p2 = tmp_path / "bad2.yaml"
    p2.write_text("name: x\n")   # missing problem section
    assert cli.main(["generate", "-c", str(p2)]) == 1
    assert not (tmp_path / "out").exists()


def test_unknown_rhs_label_exits_1(tmp_path, tiny_config):
    cfg = yaml.safe_load(tiny_config.read_text())
    cfg["problem"]["rhs"] = "not_a_system"
    p = tmp_path / "bad3.yaml"
    p.write_text(yaml.safe_dump(cfg))
    assert cli.main(["generate", "-c", str(p)]) == 1


def test_empty_sindy_library_exits_1(tmp_path, tiny_config):
    cfg = yaml.safe_load(tiny_config.read_text())
    cfg["methods"]["sindy"]["library"] = {"poly_degree": 0, "elementary": []}
    p = tmp_path / "bad4.yaml"
    p.write_text(yaml.safe_dump(cfg))
    assert cli.main(["train", "-c", str(p), "--method", "sindy",
                     "--noise", "0.0"]) == 1


def test_train_before_generate_exits_3(tiny_config):
    assert cli.main(["train", "-c", str(tiny_config), "--method", "polyfit",
                     "--noise", "0.0"]) == 3


def test_compare_before_reports_exits_3(tiny_config):
    assert cli.main(["generate", "-c", str(tiny_config)]) == 0
    assert cli.main(["compare", "-c", str(tiny_config)]) == 3


def test_generate_writes_one_file_per_level(tiny_config, tmp_path):
    assert cli.main(["generate", "-c", str(tiny_config)]) == 0
    files = sorted((tmp_path / "out" / "datasets").glob("*.csv"))
    assert len(files) == 2
    # row count: n_trajectories * n_times data rows plus the header
    lines = files[0].read_text().splitlines()
    assert len(lines) == 1 + 30 * 5


def test_full_pipeline_and_determinism(tiny_config, tmp_path):
    assert cli.main(["generate", "-c", str(tiny_config)]) == 0
    for method in ("ensemble", "splines", "multistep", "polyfit", "sindy"):
        assert cli.main(["train", "-c", str(tiny_config), "--method", method,
                         "--noise", "0.02"]) == 0, method
        assert cli.main(["train", "-c", str(tiny_config), "--method", method,
                         "--noise", "0.0"]) == 0, method

    report = tmp_path / "out" / "reports" / "ensemble_noise0p02.json"
    first = report.read_bytes()
    assert cli.main(["train", "-c", str(tiny_config), "--method", "ensemble",
                     "--noise", "0.02"]) == 0
    assert report.read_bytes() == first

    assert cli.main(["compare", "-c", str(tiny_config), "--jobs", "1"]) == 0
    txt = tmp_path / "out" / "tables" / "tiny_compare.txt"
    csv = tmp_path / "out" / "tables" / "tiny_compare.csv"
    t1, c1 = txt.read_bytes(), csv.read_bytes()
    assert cli.main(["compare", "-c", str(tiny_config), "--jobs", "1"]) == 0
    assert txt.read_bytes() == t1
    assert csv.read_bytes() == c1
    # table shape: 5 method rows under each of the two metric headers
    lines = t1.decode().splitlines()
    assert sum(1 for ln in lines if ln.startswith("ensemble")) == 2

    rep = json.loads(first)
    assert rep["recovery_rel_mse"] > 0.0
    assert abs(rep["generalization_gap"] -
               (rep["test_mse"] - rep["train_mse"])) <= 1e-12

    out_csv = tmp_path / "sol.csv"
    assert cli.main(["solve", "-c", str(tiny_config), "--method", "ensemble",
                     "--noise", "0.0", "--ic", "0.3", "--out",
                     str(out_csv)]) == 0
    lines = out_csv.read_text().splitlines()
    assert lines[0] == "ic_id,t,x1"
    assert len(lines) == 1 + 5


def test_single_method_compare(tmp_path):
    cfg = json.loads(json.dumps(TINY))
    cfg["output_dir"] = str(tmp_path / "out")
    cfg["methods"] = {"polyfit": {"degree": 4, "targets": "quotients"}}
    cfg["noise_levels"] = [0.0]
    p = tmp_path / "one.yaml"
    p.write_text(yaml.safe_dump(cfg))
    assert cli.main(["generate", "-c", str(p)]) == 0
    assert cli.main(["train", "-c", str(p), "--method", "polyfit",
                     "--noise", "0.0"]) == 0
    assert cli.main(["compare", "-c", str(p)]) == 0
    txt = (tmp_path / "out" / "tables" / "tiny_compare.txt").read_text()
    assert sum(1 for ln in txt.splitlines() if ln.startswith("polyfit")) == 2


def test_noise_level_not_in_config(tiny_config):
    assert cli.main(["generate", "-c", str(tiny_config)]) == 0
    assert cli.main(["train", "-c", str(tiny_config), "--method", "polyfit",
                     "--noise", "0.07"]) == 1


def test_train_unlisted_method_exits_1(tmp_path):
    cfg = json.loads(json.dumps(TINY))
    cfg["output_dir"] = str(tmp_path / "out")
    cfg["methods"] = {"polyfit": {"degree": 4, "targets": "quotients"}}
    p = tmp_path / "one.yaml"
    p.write_text(yaml.safe_dump(cfg))
    assert cli.main(["generate", "-c", str(p)]) == 0
    assert cli.main(["train", "-c", str(p), "--method", "sindy",
                     "--noise", "0.0"]) == 1
