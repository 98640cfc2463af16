import json

import pytest

from cli_runs import GEN, mismatches, pipeline, run
from rayocc.cli import EXIT_RUNTIME, EXIT_USAGE


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    a, b = tmp_path_factory.mktemp("a"), tmp_path_factory.mktemp("b")
    pipeline(a)
    pipeline(b)
    return a, b


def test_pipeline_is_reproducible(runs):
    assert mismatches(*runs) == []


def test_seed_changes_dataset(runs, tmp_path):
    assert run("gen", "--out", tmp_path / "d", "--seed", 4, *GEN) == 0
    a = (runs[0] / "data/scene000_view000.ppm").read_bytes()
    assert (tmp_path / "d/scene000_view000.ppm").read_bytes() != a


def test_artifacts_and_resolved_configs(runs):
    a = runs[0]
    gen = json.loads((a / "data/resolved_config.json").read_text())
    assert gen["scenes"] == 1 and gen["seed"] == 3 and gen["dist_range"] == [1.0, 1.8]
    assert json.loads((a / "m.obj.config.json").read_text())["plane"] == [16, 16]
    head = (a / "eval.csv").read_text().splitlines()
    assert head[0] == "scene,view,iou,chamfer_l1,nc,n_iou,n_surf,seed" and len(head) == 3
    bench = (a / "bench.csv").read_text().splitlines()
    assert bench[0].startswith("mode,N,S_u,S_v,M,forwards")
    assert [ln.split(",")[5] for ln in bench[1:7]] == ["16", "64", "25", "125", "36", "216"]


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "gen.json"
    cfg.write_text(json.dumps({"views": 3, "rays": 32, "dist_range": "1.1,1.5"}))
    assert run("gen", "--out", tmp_path / "d", "--config", cfg, *GEN) == 0
    got = json.loads((tmp_path / "d/resolved_config.json").read_text())
    # --views 2 on the command line beats the file, rays comes from the file
    assert got["views"] == 2 and got["rays"] == 64 and got["dist_range"] == [1.1, 1.5]
    cfg.write_text(json.dumps({"colour": 1}))
    assert run("gen", "--out", tmp_path / "e", "--config", cfg) == EXIT_USAGE
    assert "unknown key 'colour'" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    [],
    ["gen"],
    ["gen", "--out", "x", "--scenes", "0"],
    ["gen", "--out", "x", "--threads", "0"],
    ["infer", "--ckpt", "a", "--image", "b", "--out", "c", "--plane", "12"],
    ["gen", "--out", "x", "--dist-range", "1.0"],
    ["train", "--data", "a", "--out", "b", "--preset", "huge"],
])
def test_usage_errors_exit_one(argv, capsys):
    assert run(*argv) == EXIT_USAGE
    assert capsys.readouterr().err.strip()


def test_runtime_errors_exit_two_and_name_the_module(tmp_path, capsys):
    assert run("train", "--data", tmp_path / "missing", "--out", tmp_path / "r", "--threads", 1) == EXIT_RUNTIME
    err = capsys.readouterr().err
    assert err.startswith("rayocc train: dataset.")


def test_bad_image_is_runtime_error(runs, tmp_path, capsys):
    bad = tmp_path / "bad.ppm"
    bad.write_bytes(b"P6\n2 2\n255\n\x00")
    code = run("infer", "--ckpt", runs[0] / "run/model.ronw", "--image", bad, "--out", tmp_path / "m.obj")
    assert code == EXIT_RUNTIME
    assert "rayocc infer:" in capsys.readouterr().err


def test_help_exits_zero(capsys):
    assert run("bench", "--help") == 0
    assert "--sweep-planes" in capsys.readouterr().out


def test_gradcheck_command(tmp_path, capsys):
    assert run("gradcheck", "--coords", 1, "--threads", 1, "--out", tmp_path / "g.json") == 0
    rep = json.loads((tmp_path / "g.json").read_text())
    assert rep["max_rel_error"] < 1e-4
    assert "max relative error" in capsys.readouterr().out
