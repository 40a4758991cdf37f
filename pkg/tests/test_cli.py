"""Subprocess-level exercises of every command and exit path."""

from __future__ import annotations

import csv
import json
import re
from pathlib import Path

import pytest
import torch

from shadowcycle import binarize_difference, load_dataset, load_image, load_mask, save_image


def _run_dir_from(stdout: str) -> Path:
    match = re.search(r"run directory: (.+)", stdout)
    assert match is not None, stdout
    return Path(match.group(1).strip())


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, cli):
    """One fixture dataset plus one finished two-epoch training run."""
    root = tmp_path_factory.mktemp("cliws")
    data = root / "data"
    result = cli(["fixture", "--out", data, "--count", 3, "--size", 32, "--seed", 0])
    assert result.returncode == 0, result.stderr
    result = cli(
        [
            "train",
            "--data", data,
            "--layout", "istd",
            "--split", "train",
            "--epochs", 2,
            "--resolution", 32,
            "--depth", 3,
            "--batch-size", 1,
            "--lr", 0.001,
            "--seed", 0,
            "--out", root / "runs",
            "--tag", "ws",
        ]
    )
    assert result.returncode == 0, result.stderr
    return {
        "root": root,
        "data": data,
        "run": _run_dir_from(result.stdout),
        "train_stdout": result.stdout,
    }


# ---------------------------------------------------------------------------
# Parser plumbing
# ---------------------------------------------------------------------------


def test_help_lists_every_command(cli):
    result = cli(["--help"])
    assert result.returncode == 0
    assert "usage" in result.stdout.lower()
    for command in ("train", "infer", "eval", "mask", "fixture", "report"):
        assert command in result.stdout


def test_subcommand_help(cli):
    result = cli(["train", "--help"])
    assert result.returncode == 0
    assert "--resolution" in result.stdout
    assert "--resume" in result.stdout


def test_no_arguments_prints_help_and_fails(cli):
    result = cli([])
    assert result.returncode == 1
    assert "usage" in result.stdout.lower()


def test_unknown_command_is_usage_error(cli):
    result = cli(["frobnicate"])
    assert result.returncode == 1
    assert "error" in result.stderr.lower()


def test_unknown_flag_is_usage_error(cli):
    result = cli(["train", "--bogus", "1"])
    assert result.returncode == 1


# ---------------------------------------------------------------------------
# fixture
# ---------------------------------------------------------------------------


def test_fixture_writes_paired_istd_layout(workspace):
    dataset = load_dataset(workspace["data"], layout="istd", split="train")
    assert len(dataset) == 3
    assert dataset.paired


def test_fixture_seed_controls_content(cli, tmp_path):
    for name, seed in (("a", 0), ("b", 0), ("c", 1)):
        result = cli(["fixture", "--out", tmp_path / name, "--count", 2, "--size", 32, "--seed", seed])
        assert result.returncode == 0, result.stderr

    def contents(root: Path) -> dict:
        return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*.png"))}

    assert contents(tmp_path / "a") == contents(tmp_path / "b")
    assert contents(tmp_path / "a") != contents(tmp_path / "c")


def test_fixture_rejects_bad_parameters(cli, tmp_path):
    result = cli(["fixture", "--out", tmp_path / "x", "--count", 0])
    assert result.returncode == 1
    assert "count" in result.stderr
    result = cli(["fixture", "--out", tmp_path / "y", "--size", 16])
    assert result.returncode == 1
    assert "size" in result.stderr


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def test_train_requires_dataset(cli):
    result = cli(["train", "--epochs", 1])
    assert result.returncode == 1
    assert "no dataset" in result.stderr


def test_train_missing_data_dir(cli, tmp_path):
    result = cli(["train", "--data", tmp_path / "nope", "--epochs", 1, "--out", tmp_path / "runs"])
    assert result.returncode == 2


def test_train_writes_run_artifacts(workspace):
    run = workspace["run"]
    for name in ("manifest.txt", "train_log.csv", "ckpt_1.bin", "ckpt_2.bin", "completed.txt"):
        assert (run / name).is_file(), name
    with open(run / "train_log.csv", newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == 6  # 2 epochs x 3 images, batch 1
    assert "trained 6 steps" in workspace["train_stdout"]


def test_config_file_values_yield_to_flags(cli, workspace, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "epochs = 2\nresolution = 32\ndepth = 3\nbatch_size = 1\nlr = 0.001\nseed = 0\n",
        encoding="utf-8",
    )
    result = cli(
        [
            "train",
            "--config", cfg,
            "--data", workspace["data"],
            "--epochs", 1,
            "--out", tmp_path / "runs",
            "--tag", "cfg",
        ]
    )
    assert result.returncode == 0, result.stderr
    run = _run_dir_from(result.stdout)
    with open(run / "train_log.csv", newline="") as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == 3  # the flag's single epoch, not the file's two


def test_config_file_rejects_unknown_key(cli, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("bogus = 1\n", encoding="utf-8")
    result = cli(["train", "--config", cfg, "--data", tmp_path])
    assert result.returncode == 1
    assert "unknown config key" in result.stderr


def test_train_resume_continues_from_checkpoint(cli, workspace, tmp_path):
    result = cli(
        [
            "train",
            "--resume", workspace["run"] / "ckpt_1.bin",
            "--data", workspace["data"],
            "--steps", 1,
            "--out", tmp_path / "runs",
            "--tag", "resumed",
        ]
    )
    assert result.returncode == 0, result.stderr
    assert "trained 1 steps" in result.stdout
    run = _run_dir_from(result.stdout)
    assert (run / "manifest.txt").is_file()


# ---------------------------------------------------------------------------
# infer
# ---------------------------------------------------------------------------


def test_infer_directory(cli, workspace, tmp_path):
    out = tmp_path / "infer"
    result = cli(
        [
            "infer",
            "--checkpoint", workspace["run"] / "ckpt_2.bin",
            "--input", workspace["data"] / "train_A",
            "--out", out,
        ]
    )
    assert result.returncode == 0, result.stderr
    assert "wrote 3/3" in result.stdout
    outputs = sorted(out.glob("*.png"))
    assert len(outputs) == 3
    image = load_image(outputs[0])
    assert image.shape == (3, 32, 32)
    assert 0.0 <= float(image.min()) and float(image.max()) <= 1.0


def test_infer_single_file(cli, workspace, tmp_path):
    source = sorted((workspace["data"] / "train_A").glob("*.png"))[0]
    result = cli(
        ["infer", "--checkpoint", workspace["run"] / "ckpt_2.bin", "--input", source, "--out", tmp_path]
    )
    assert result.returncode == 0, result.stderr
    assert (tmp_path / source.name).is_file()


def test_infer_missing_inputs(cli, workspace, tmp_path):
    result = cli(
        ["infer", "--checkpoint", tmp_path / "no.bin", "--input", workspace["data"], "--out", tmp_path]
    )
    assert result.returncode == 2
    result = cli(
        [
            "infer",
            "--checkpoint", workspace["run"] / "ckpt_2.bin",
            "--input", tmp_path / "missing",
            "--out", tmp_path,
        ]
    )
    assert result.returncode == 2


# ---------------------------------------------------------------------------
# mask
# ---------------------------------------------------------------------------


def test_mask_matches_library_binarization(cli, workspace, tmp_path):
    free_dir = workspace["data"] / "train_C"
    shadow_dir = workspace["data"] / "train_A"
    out = tmp_path / "masks"
    result = cli(["mask", "--free", free_dir, "--shadow", shadow_dir, "--out", out])
    assert result.returncode == 0, result.stderr
    for shadow_path in sorted(shadow_dir.glob("*.png")):
        expected = binarize_difference(
            load_image(free_dir / shadow_path.name), load_image(shadow_path)
        )
        written = load_mask(out / shadow_path.name)
        assert torch.equal(written, expected)

    out_otsu = tmp_path / "masks_otsu"
    result = cli(
        [
            "mask",
            "--free", free_dir,
            "--shadow", shadow_dir,
            "--out", out_otsu,
            "--method", "otsu",
            "--dilate", 1,
        ]
    )
    assert result.returncode == 0, result.stderr
    name = sorted(shadow_dir.glob("*.png"))[0].name
    expected = binarize_difference(
        load_image(free_dir / name),
        load_image(shadow_dir / name),
        method="otsu",
        dilation_radius=1,
    )
    assert torch.equal(load_mask(out_otsu / name), expected)


def test_mask_skips_unmatched_stems(cli, tmp_path):
    free_dir = tmp_path / "free"
    shadow_dir = tmp_path / "shadow"
    free_dir.mkdir()
    shadow_dir.mkdir()
    rng = torch.Generator().manual_seed(0)
    for directory, names in ((free_dir, ("a", "b")), (shadow_dir, ("b", "c"))):
        for name in names:
            save_image(directory / f"{name}.png", torch.rand((3, 16, 16), generator=rng))
    result = cli(["mask", "--free", free_dir, "--shadow", shadow_dir, "--out", tmp_path / "out"])
    assert result.returncode == 0, result.stderr
    assert "no counterpart" in result.stderr
    assert sorted(p.name for p in (tmp_path / "out").glob("*.png")) == ["b.png"]


def test_mask_disjoint_stems_is_usage_error(cli, tmp_path):
    free_dir = tmp_path / "free"
    shadow_dir = tmp_path / "shadow"
    free_dir.mkdir()
    shadow_dir.mkdir()
    save_image(free_dir / "a.png", torch.zeros((3, 16, 16)))
    save_image(shadow_dir / "z.png", torch.zeros((3, 16, 16)))
    result = cli(["mask", "--free", free_dir, "--shadow", shadow_dir, "--out", tmp_path / "out"])
    assert result.returncode == 1


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def test_eval_writes_full_report(cli, workspace, tmp_path):
    out = tmp_path / "eval"
    result = cli(
        [
            "eval",
            "--checkpoint", workspace["run"] / "ckpt_2.bin",
            "--data", workspace["data"],
            "--layout", "istd",
            "--split", "train",
            "--out", out,
        ]
    )
    assert result.returncode == 0, result.stderr
    assert "rmse_rgb:" in result.stdout
    assert "uncalibrated" in result.stdout
    report = json.loads((out / "eval_report.json").read_text())
    assert report["count"] == 3
    assert report["generator_kind"] == "unet"
    assert report["failures"] == []
    assert isinstance(report["aggregate"]["rmse_rgb"], float)
    with open(out / "eval_summary.csv", newline="") as handle:
        rows = list(csv.reader(handle))
    assert len(rows) == 4  # header + one row per image
    assert len(list((out / "heatmaps").glob("*.png"))) == 3


def test_eval_max_images(cli, workspace, tmp_path):
    out = tmp_path / "eval"
    result = cli(
        [
            "eval",
            "--checkpoint", workspace["run"] / "ckpt_2.bin",
            "--data", workspace["data"],
            "--split", "train",
            "--out", out,
            "--max-images", 1,
        ]
    )
    assert result.returncode == 0, result.stderr
    report = json.loads((out / "eval_report.json").read_text())
    assert report["count"] == 1


def test_eval_missing_data_dir(cli, workspace, tmp_path):
    result = cli(
        [
            "eval",
            "--checkpoint", workspace["run"] / "ckpt_2.bin",
            "--data", tmp_path / "nope",
            "--out", tmp_path / "eval",
        ]
    )
    assert result.returncode == 2


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def test_report_plots_loss_curves(cli, workspace):
    result = cli(["report", "--run", workspace["run"]])
    assert result.returncode == 0, result.stderr
    out = workspace["run"] / "report"
    assert (out / "gen_total.png").is_file()
    assert (out / "lr.png").is_file()
    assert (out / "disc_free.png").is_file()
    # bookkeeping columns are not plotted
    assert not (out / "step.png").exists()
    assert not (out / "bank_size.png").exists()


def test_report_requires_training_log(cli, tmp_path):
    result = cli(["report", "--run", tmp_path])
    assert result.returncode == 2
