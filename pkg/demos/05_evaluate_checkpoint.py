#!/usr/bin/env python3
"""Score a checkpoint with the paired evaluation harness.

Without arguments this evaluates the built-in identity checkpoint,
whose scores are exactly the shadow-vs-free gap of the dataset and make
a useful reference line.  Point ``--checkpoint`` at a run from the
training demo to score an actual model against that line.
"""

from __future__ import annotations

import argparse
from pathlib import Path

from shadowcycle import (
    TrainConfig,
    evaluate_dataset,
    load_dataset,
    make_identity_checkpoint,
    rmse,
    write_fixture,
)
from shadowcycle.errors import UndefinedRegionError


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("demo_out/evaluate"))
    parser.add_argument("--checkpoint", type=Path, default=None,
                        help="trained checkpoint; defaults to the identity baseline")
    parser.add_argument("--size", type=int, default=64)
    args = parser.parse_args()

    data_root = args.out / "dataset"
    write_fixture(data_root, count=4, size=args.size, seed=3)
    dataset = load_dataset(data_root, layout="istd", split="train")

    if args.checkpoint is None:
        checkpoint = make_identity_checkpoint(
            args.out / "identity.bin", config=TrainConfig(resolution=args.size, depth=4)
        )
        print("no checkpoint given; scoring the do-nothing identity baseline")
    else:
        checkpoint = args.checkpoint

    report = evaluate_dataset(dataset, checkpoint, args.out / "scores")
    print(f"\ngenerator kind: {report['generator_kind']}")
    print(f"perceptual scorer: {report['scorer']['kind']} "
          f"(calibrated: {report['scorer']['calibrated']})")

    print(f"\n{'image':<8} {'rmse_rgb':>9} {'psnr_rgb':>9} {'rmse_lab':>9} "
          f"{'shadow':>8} {'clean':>8}")
    for record in report["images"]:
        shadow_part = record["rmse_rgb_shadow"]
        free_part = record["rmse_rgb_free"]
        print(f"{record['identifier']:<8} {record['rmse_rgb']:>9.2f} "
              f"{record['psnr_rgb']:>9.2f} {record['rmse_lab']:>9.2f} "
              f"{shadow_part:>8.2f} {free_part:>8.2f}")
    aggregate = report["aggregate"]
    print(f"{'mean':<8} {aggregate['rmse_rgb']:>9.2f} {aggregate['psnr_rgb']:>9.2f} "
          f"{aggregate['rmse_lab']:>9.2f}")

    # the same split is available directly on the metric functions
    sample = dataset[0]
    mask = sample.mask()
    shadow_image = sample.shadow()
    free_image = sample.shadow_free()
    print(f"\nregion split on sample {sample.identifier} (baseline pair):")
    print(f"  whole frame rmse {rmse(shadow_image, free_image):.2f}")
    try:
        print(f"  shadow region    {rmse(shadow_image, free_image, region_mask=mask):.2f}")
        print(f"  clean region     {rmse(shadow_image, free_image, region_mask=1 - mask):.2f}")
    except UndefinedRegionError as error:  # a mask can cover everything
        print(f"  region undefined: {error}")

    out = args.out / "scores"
    print(f"\nreport: {out / 'eval_report.json'}")
    print(f"summary: {out / 'eval_summary.csv'}")
    print(f"heatmaps: {out / 'heatmaps'}")


if __name__ == "__main__":
    main()
