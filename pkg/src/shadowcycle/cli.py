"""Command-line interface.

Commands: ``train``, ``infer``, ``eval``, ``mask``, ``fixture``,
``report``.  Exit codes: 0 success, 1 usage, 2 data or configuration
problems, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import config as config_mod
from . import data as data_mod
from .errors import DataError, ShadowCycleError, UsageError, exit_code_for


class _Parser(argparse.ArgumentParser):
    """argparse variant that reports bad usage through our exit codes."""

    def error(self, message: str):  # type: ignore[override]
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="shadowcycle", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    train = sub.add_parser("train", parents=[], help="train a model", add_help=True)
    train.add_argument("--config", type=Path, help="key = value config file")
    train.add_argument("--data", dest="data_root", help="dataset root directory")
    train.add_argument("--layout", choices=("istd", "usr", "flat"))
    train.add_argument("--split", help="dataset split name (default train)")
    train.add_argument("--epochs", type=int)
    train.add_argument("--steps", type=int, help="stop after this many steps")
    train.add_argument("--resolution", type=int)
    train.add_argument("--depth", type=int)
    train.add_argument("--regime", choices=("paired", "unpaired"))
    train.add_argument("--batch-size", dest="batch_size", type=int)
    train.add_argument("--lr", type=float)
    train.add_argument("--seed", type=int)
    train.add_argument("--gamma5", type=float, help="shadow-mask loss weight")
    train.add_argument("--tag", help="run directory suffix")
    train.add_argument("--out", type=Path, default=Path("runs"), help="runs root directory")
    train.add_argument("--resume", type=Path, help="checkpoint to continue from")
    train.set_defaults(func=cmd_train)

    infer = sub.add_parser("infer", help="remove shadows from images")
    infer.add_argument("--checkpoint", type=Path, required=True)
    infer.add_argument("--input", type=Path, required=True, help="image file or directory")
    infer.add_argument("--out", type=Path, required=True)
    infer.set_defaults(func=cmd_infer)

    evaluate = sub.add_parser("eval", help="score a checkpoint on paired data")
    evaluate.add_argument("--checkpoint", type=Path, required=True)
    evaluate.add_argument("--data", dest="data_root", required=True)
    evaluate.add_argument("--layout", choices=("istd", "usr", "flat"), default="istd")
    evaluate.add_argument("--split", default="test")
    evaluate.add_argument("--out", type=Path, required=True)
    evaluate.add_argument("--calibration", type=Path, help="perceptual scorer weights")
    evaluate.add_argument("--max-images", dest="max_images", type=int)
    evaluate.set_defaults(func=cmd_eval)

    mask = sub.add_parser("mask", help="binarize shadow masks from image pairs")
    mask.add_argument("--free", type=Path, required=True, help="shadow-free image directory")
    mask.add_argument("--shadow", type=Path, required=True, help="shadow image directory")
    mask.add_argument("--out", type=Path, required=True)
    mask.add_argument("--method", choices=("median", "otsu"), default="median")
    mask.add_argument("--dilate", type=int, default=0, help="mask dilation radius")
    mask.set_defaults(func=cmd_mask)

    fixture = sub.add_parser("fixture", help="write a synthetic paired dataset")
    fixture.add_argument("--out", type=Path, required=True)
    fixture.add_argument("--count", type=int, default=8)
    fixture.add_argument("--size", type=int, default=64)
    fixture.add_argument("--seed", type=int, default=0)
    fixture.add_argument("--split", default="train")
    fixture.set_defaults(func=cmd_fixture)

    report = sub.add_parser("report", help="plot loss curves from a training run")
    report.add_argument("--run", type=Path, required=True, help="run directory")
    report.add_argument("--out", type=Path, help="plot directory (default <run>/report)")
    report.set_defaults(func=cmd_report)

    return parser


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_train(args: argparse.Namespace) -> int:
    from .engine import Trainer

    overrides = {
        key: getattr(args, key)
        for key in (
            "data_root",
            "layout",
            "split",
            "epochs",
            "resolution",
            "depth",
            "regime",
            "batch_size",
            "lr",
            "seed",
            "gamma5",
            "tag",
        )
        if getattr(args, key, None) is not None
    }
    merged = config_mod.merge_config(args.config, overrides)
    data_root = merged.get("data_root")
    if data_root is None:
        raise UsageError("no dataset given; pass --data or set data_root in the config")
    layout = merged.get("layout", "istd")
    split = merged.get("split", "train")
    dataset = data_mod.load_dataset(data_root, layout=layout, split=split)

    if args.resume is not None:
        run_dir = _new_run_dir(args.out, merged.get("tag", "resume"))
        trainer = Trainer.resume(args.resume, dataset, run_dir=run_dir)
    else:
        train_config = config_mod.train_config_from(merged)
        run_dir = _new_run_dir(args.out, merged.get("tag", train_config.regime))
        trainer = Trainer(train_config, dataset, run_dir=run_dir)
    print(f"run directory: {run_dir}")
    try:
        reports = trainer.fit(max_steps=args.steps)
    finally:
        trainer.close()
    if reports:
        print(
            f"trained {len(reports)} steps; last generator loss "
            f"{reports[-1]['gen_total']:.4f}"
        )
    return 0


def _new_run_dir(root: Path, tag: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    run_dir = Path(root) / f"{stamp}_{tag}"
    suffix = 1
    while run_dir.exists():  # same-second runs get a counter
        run_dir = Path(root) / f"{stamp}_{tag}.{suffix}"
        suffix += 1
    return run_dir


def cmd_infer(args: argparse.Namespace) -> int:
    from .metrics import Deshadower

    deshadower = Deshadower(args.checkpoint)
    if args.input.is_dir():
        files = [p for p in sorted(args.input.iterdir()) if p.suffix.lower() in data_mod.IMAGE_EXTENSIONS]
    elif args.input.is_file():
        files = [args.input]
    else:
        raise DataError(f"input not found: {args.input}")
    if not files:
        raise DataError(f"no images under {args.input}")
    args.out.mkdir(parents=True, exist_ok=True)
    succeeded = 0
    for path in files:
        try:
            image = data_mod.load_image(path)
            result = deshadower.remove(image)
            data_mod.save_image(args.out / f"{path.stem}.png", result)
            succeeded += 1
        except ShadowCycleError as exc:
            print(f"warning: skipping {path.name}: {exc}", file=sys.stderr)
    print(f"wrote {succeeded}/{len(files)} images to {args.out}")
    if succeeded == 0:
        raise DataError("no input image could be processed")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    from .metrics import PerceptualScorer, evaluate_dataset

    dataset = data_mod.load_dataset(args.data_root, layout=args.layout, split=args.split)
    scorer = PerceptualScorer(calibration_path=args.calibration)
    report = evaluate_dataset(
        dataset, args.checkpoint, args.out, scorer=scorer, max_images=args.max_images
    )
    aggregate = report["aggregate"]
    for key in ("rmse_rgb", "psnr_rgb", "rmse_lab", "psnr_lab", "perceptual"):
        if aggregate.get(key) is not None:
            print(f"{key}: {aggregate[key]:.4f}")
    if not scorer.calibrated:
        print("note: perceptual scores are uncalibrated (no calibration file)")
    if report["failures"]:
        for failure in report["failures"]:
            print(f"error: {failure['identifier']}: {failure['error']}", file=sys.stderr)
        raise DataError(f"{len(report['failures'])} image(s) failed to evaluate")
    print(f"evaluated {report['count']} images; report under {args.out}")
    return 0


def cmd_mask(args: argparse.Namespace) -> int:
    if not args.free.is_dir():
        raise DataError(f"missing directory: {args.free}")
    if not args.shadow.is_dir():
        raise DataError(f"missing directory: {args.shadow}")
    free_files = {p.stem: p for p in sorted(args.free.iterdir()) if p.suffix.lower() in data_mod.IMAGE_EXTENSIONS}
    shadow_files = {p.stem: p for p in sorted(args.shadow.iterdir()) if p.suffix.lower() in data_mod.IMAGE_EXTENSIONS}
    for stem in sorted(set(free_files) ^ set(shadow_files)):
        print(f"warning: no counterpart for {stem!r}, skipped", file=sys.stderr)
    common = sorted(set(free_files) & set(shadow_files))
    if not common:
        raise UsageError("the two directories share no image stems")
    args.out.mkdir(parents=True, exist_ok=True)
    for stem in common:
        free = data_mod.load_image(free_files[stem])
        shadow = data_mod.load_image(shadow_files[stem])
        mask = data_mod.binarize_difference(
            free, shadow, method=args.method, dilation_radius=args.dilate
        )
        data_mod.save_mask(args.out / f"{stem}.png", mask)
    print(f"wrote {len(common)} masks to {args.out}")
    return 0


def cmd_fixture(args: argparse.Namespace) -> int:
    if args.count < 1:
        raise UsageError(f"count must be positive, got {args.count}")
    if args.size < 32:
        raise UsageError(f"size must be at least 32, got {args.size}")
    dataset = data_mod.write_fixture(
        args.out, count=args.count, size=args.size, seed=args.seed, split=args.split
    )
    print(f"wrote {len(dataset)} paired samples to {args.out}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    import csv

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    log_path = args.run / "train_log.csv"
    if not log_path.is_file():
        raise DataError(f"no training log at {log_path}")
    with open(log_path, newline="", encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    if not rows:
        raise DataError(f"training log {log_path} is empty")
    out_dir = args.out if args.out is not None else args.run / "report"
    out_dir.mkdir(parents=True, exist_ok=True)
    steps = [int(float(row["step"])) for row in rows]
    skip = {"step", "epoch", "buffer_free_size", "buffer_shadow_size", "bank_size"}
    written = 0
    for column in rows[0]:
        if column in skip:
            continue
        values = [float(row[column]) for row in rows]
        figure, axis = plt.subplots(figsize=(6, 3.5))
        axis.plot(steps, values, linewidth=1.0)
        axis.set_xlabel("step")
        axis.set_ylabel(column)
        axis.set_title(column)
        figure.tight_layout()
        figure.savefig(out_dir / f"{column}.png", dpi=100)
        plt.close(figure)
        written += 1
    print(f"wrote {written} plots to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            parser.print_help()
            return 1
        return args.func(args)
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except ShadowCycleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
