#!/usr/bin/env python3
"""One full training cycle, dissected term by term.

Runs fresh untrained networks through the forward and reconstruction
halves of the cycle on fixture images, then prints the weighted
breakdown of the generator objective for both regimes and shows what an
ablation flag removes.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import torch

from shadowcycle import (
    ConvFeatureExtractor,
    LossWeights,
    TrainConfig,
    build_networks,
    forward_step,
    load_dataset,
    reconstruction_step,
    total_loss_paired,
    total_loss_unpaired,
    write_fixture,
)
from shadowcycle.data import to_model_range
from shadowcycle.losses import hard_mask


def print_breakdown(title: str, total: torch.Tensor, breakdown: dict) -> None:
    print(f"\n{title}: total {float(total):.4f}")
    for name, value in breakdown.items():
        share = 100.0 * value / float(total) if float(total) else 0.0
        print(f"  {name:<24} {value:>10.4f}  ({share:5.1f}%)")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("demo_out/loss_anatomy"))
    args = parser.parse_args()

    data_root = args.out / "dataset"
    write_fixture(data_root, count=4, size=32, seed=0)
    dataset = load_dataset(data_root, layout="istd", split="train")
    config = TrainConfig(resolution=32, depth=3, seed=0)
    nets = build_networks(config)

    batch = [dataset[i] for i in (0, 1)]
    free = torch.stack([to_model_range(s.shadow_free()) for s in batch])
    shadow = torch.stack([to_model_range(s.shadow()) for s in batch])
    mask = torch.stack([s.mask() for s in batch])

    with torch.no_grad():
        state = forward_step(free, shadow, mask, nets.g_f, nets.g_s)
        state = reconstruction_step(state, nets.g_f, nets.g_s)

        # an untrained cycle has nothing to replay yet, so the fakes
        # themselves stand in as the buffered negatives
        state.buffer_fake_free = state.fake_free.detach()
        state.buffer_fake_shadow = state.fake_shadow.detach()
        state.bank_mask = mask

        soft = state.removal_mask
        print(f"soft removal mask: mean {float(soft.mean()):.3f}, "
              f"hard coverage {100 * float(hard_mask(soft).mean()):.1f}%")

        fx = ConvFeatureExtractor(seed=0)
        total, breakdown = total_loss_unpaired(state, nets, LossWeights.unpaired(), fx)
        print_breakdown("unpaired objective", total, breakdown)

        total, breakdown = total_loss_paired(state, nets, LossWeights.paired(), fx)
        print_breakdown("paired objective", total, breakdown)

        # ablation flags silence whole term families
        silenced = LossWeights.unpaired(gamma5=0.0)
        total, breakdown = total_loss_unpaired(state, nets, silenced, fx)
        print_breakdown("unpaired with the mask family off (gamma5=0)", total, breakdown)


if __name__ == "__main__":
    main()
