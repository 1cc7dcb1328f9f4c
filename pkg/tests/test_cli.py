import json

import numpy as np
import pytest
from PIL import Image

from multipose.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, default_run_config, main

SMALL = {
    "data.splits.train": 16, "data.splits.val": 4, "data.splits.test": 6,
    "data.mix": "occlusion", "data.seed": 2,
    "model.stem_widths": [8, 8, 16, 16], "model.mid_widths": [16, 16], "model.up_widths": [8, 8],
    "train.epochs": 1, "train.batch_size": 8,
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "cfg.json").write_text(json.dumps(SMALL))
    assert main(["gen-data", "--config", str(root / "cfg.json"), "--out", str(root / "data")]) == EXIT_OK
    assert main(["train", "--config", str(root / "cfg.json"), "--data", str(root / "data"),
                 "--out", str(root / "run")]) == EXIT_OK
    return root


def test_gen_data_writes_manifest_and_settings(workspace):
    assert (workspace / "data" / "manifest.json").is_file()
    doc = json.loads((workspace / "data" / "run_config.json").read_text())
    assert doc["command"] == "gen-data" and doc["settings"]["data.splits.train"] == 16


def test_train_outputs(workspace, capsys):
    run = workspace / "run"
    assert (run / "checkpoint_last.ckpt").is_file()
    assert (run / "loss_curve.csv").read_text().startswith("epoch,split,loss")
    assert json.loads((run / "run_config.json").read_text())["N"] == 2


def test_eval_writes_report(workspace, capsys):
    out = workspace / "eval"
    code = main(["eval", "--checkpoint", str(workspace / "run" / "checkpoint_last.ckpt"),
                 "--data", str(workspace / "data"), "--per-difficulty", "--out", str(out)])
    assert code == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert 0.0 <= report["ap"] <= 1.0 and report["n_images"] == 6
    assert json.loads((out / "predictions.json").read_text())
    assert "AP" in capsys.readouterr().out


def test_infer_with_sweep_and_heatmaps(workspace):
    img = (np.random.default_rng(0).random((96, 96)) * 255).astype(np.uint8)
    Image.fromarray(img).save(workspace / "img.png")
    (workspace / "boxes.json").write_text(json.dumps([[10, 10, 30, 50], [30, 20, 30, 50]]))
    out = workspace / "infer"
    code = main(["infer", "--checkpoint", str(workspace / "run" / "checkpoint_last.ckpt"),
                 "--image", str(workspace / "img.png"), "--boxes", str(workspace / "boxes.json"),
                 "--out", str(out), "--dump-heatmaps", "--lambda-sweep", "5"])
    assert code == EXIT_OK
    sweep = json.loads((out / "lambda_sweep.json").read_text())
    assert len(sweep) == 2 and len(sweep[0]["snapshots"]) == 5
    assert len(list((out / "heatmaps").glob("*.pgm"))) == 2 * 2 * 5
    assert (out / "lambda_sweep_box0.png").is_file()


def test_benchmark_subset(workspace, capsys):
    out = workspace / "bench"
    code = main(["benchmark", "--config", str(workspace / "cfg.json"), "--data", str(workspace / "data"),
                 "--out", str(out), "--configs", "baseline_n1", "mipnet_n2", "--no-plots"])
    assert code == EXIT_OK
    rows = (out / "comparison.csv").read_text().splitlines()
    assert rows[0].startswith("config,") and len(rows) == 3
    assert not list(out.glob("*.png"))


@pytest.mark.parametrize("argv", [
    ["train", "--data", "x", "--out", "y", "--variant", "baseline", "--n", "2"],
    ["train", "--data", "x", "--out", "y", "--variant", "two-heads", "--n", "3"],
    ["gen-data", "--out", "y", "--workers", "0"],
    ["frobnicate"],
    ["eval", "--data", "x"],
])
def test_usage_errors_exit_1(argv, tmp_path):
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    assert code == EXIT_USAGE


def test_unknown_config_key_is_usage_error(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"train.epoch": 3}))
    assert main(["gen-data", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "d")]) == EXIT_USAGE


def test_missing_files_exit_2(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "nope.ckpt"), "--data", str(tmp_path)]) == EXIT_RUNTIME
    assert main(["train", "--data", str(tmp_path), "--out", str(tmp_path / "o")]) == EXIT_RUNTIME


def test_seed_flag_sets_every_seed(tmp_path):
    from multipose.cli import _overrides, build_parser, load_run_config

    args = build_parser().parse_args(["gen-data", "--out", "x", "--seed", "5"])
    cfg = load_run_config(None, _overrides(args))
    assert cfg["data.seed"] == cfg["train.seed"] == cfg["model.seed"] == 5
    assert set(cfg) == set(default_run_config())
