#!/usr/bin/env python3
"""Layer-by-layer look at the generators and the patch discriminator.

Prints the full-depth layer table, traces a forward pass to show the
shape at every stage, and probes the discriminator's patch geometry at
a few input sizes.  No training happens here; weights stay random.
"""

from __future__ import annotations

import torch

from shadowcycle import PatchDiscriminator, UNetGenerator, generator_layer_table
from shadowcycle.nets import architecture_fingerprint


def parameter_count(module: torch.nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def main() -> None:
    print("removal generator, depth 8, 3-channel input")
    print(f"{'layer':>5} {'op':<7} {'in':>5} {'out':>5} {'norm':>5} "
          f"{'drop':>5} {'act':<10} {'skip':>4}")
    for row in generator_layer_table(3, 8):
        skip = row.skip_from if row.skip_from is not None else "-"
        print(f"{row.index:>5} {row.operation:<7} {row.channels_in:>5} "
              f"{row.channels_out:>5} {str(row.normalized):>5} "
              f"{str(row.dropout):>5} {row.activation:<10} {skip:>4}")

    generator = UNetGenerator(input_channels=3, depth=8)
    with torch.no_grad():
        shapes = generator.trace(torch.zeros((1, 3, 256, 256)))
    print("\nforward trace at 256x256:")
    for index, shape in enumerate(shapes, start=1):
        print(f"  layer {index:>2}: {shape}")

    insertion = UNetGenerator(input_channels=4, depth=8)
    print(f"\nremoval generator parameters:   {parameter_count(generator):,}")
    print(f"insertion generator parameters: {parameter_count(insertion):,}")
    # the two differ only in the first convolution's input channels
    delta = parameter_count(insertion) - parameter_count(generator)
    print(f"difference (one extra input channel in layer 1): {delta:,}")

    discriminator = PatchDiscriminator(input_channels=6)
    print(f"\npatch discriminator parameters: {parameter_count(discriminator):,}")
    for size in (256, 64, 32):
        with torch.no_grad():
            patches = discriminator(torch.zeros((1, 6, size, size)))
        print(f"  {size}x{size} input -> {tuple(patches.shape)} patch map")

    print("\narchitecture fingerprints (checkpoint compatibility keys):")
    for depth in (8, 4, 3):
        print(f"  depth {depth}: {architecture_fingerprint(depth)}")


if __name__ == "__main__":
    main()
