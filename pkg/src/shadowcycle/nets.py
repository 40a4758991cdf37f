"""Generator and discriminator architectures.

The generator is an encoder/decoder with skip connections built from a
declarative layer table, so tests and checkpoints can reason about the
architecture without instantiating modules.  Depth 8 is the full-size
network for 256 pixel training; smaller depths shrink the same recipe
for desk-scale runs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional, Sequence

import torch
from torch import nn

from .errors import ConfigurationError, InvalidInputError

DISCRIMINATOR_WIDTHS = (64, 128, 256, 512)


@dataclass(frozen=True)
class LayerSpec:
    """One row of the generator layer table."""

    index: int
    operation: str  # "down", "up", or "output"
    channels_in: int
    channels_out: int
    normalized: bool
    activation: str  # "leaky_relu", "relu", or "tanh"
    dropout: bool
    skip_from: Optional[int]  # down layer whose output joins this input


def _encoder_widths(depth: int) -> list[int]:
    return [min(64 * 2 ** k, 512) for k in range(depth)]


def generator_layer_table(input_channels: int = 3, depth: int = 8) -> list[LayerSpec]:
    """Build the generator's layer table.

    The encoder halves the spatial size ``depth`` times with stride 2
    convolutions; the decoder mirrors it with transposed convolutions,
    concatenating each intermediate encoder output onto the decoder
    layer of matching size.  The first encoder layer, the bottleneck,
    and the output layer skip normalization; dropout covers the middle
    of the network.

    Args:
        input_channels: 3 for the removal generator, 4 for the
            mask-conditioned insertion generator.
        depth: number of encoder layers; the input must be divisible by
            ``2 ** depth``.

    Returns:
        ``2 * depth`` rows, one per layer, in forward order.
    """
    if input_channels not in (3, 4):
        raise ConfigurationError(f"generator input channels must be 3 or 4, got {input_channels}")
    if depth < 2:
        raise ConfigurationError(f"generator depth must be at least 2, got {depth}")
    widths = _encoder_widths(depth)
    rows: list[LayerSpec] = []
    for k in range(1, depth + 1):
        rows.append(
            LayerSpec(
                index=k,
                operation="down",
                channels_in=input_channels if k == 1 else widths[k - 2],
                channels_out=widths[k - 1],
                normalized=1 < k < depth,
                activation="leaky_relu",
                dropout=k >= 4,
                skip_from=None,
            )
        )
    for i in range(1, depth):
        skip = None if i == 1 else depth - i + 1
        channels_in = widths[depth - 1] if i == 1 else 2 * widths[depth - i]
        rows.append(
            LayerSpec(
                index=depth + i,
                operation="up",
                channels_in=channels_in,
                channels_out=widths[depth - i - 1],
                normalized=True,
                activation="relu",
                dropout=i <= depth - 4,
                skip_from=skip,
            )
        )
    # The output layer consumes only the previous layer, not a skip.
    rows.append(
        LayerSpec(
            index=2 * depth,
            operation="output",
            channels_in=widths[0],
            channels_out=3,
            normalized=False,
            activation="tanh",
            dropout=False,
            skip_from=None,
        )
    )
    return rows


def _activation(name: str) -> nn.Module:
    if name == "leaky_relu":
        return nn.LeakyReLU(0.2)
    if name == "relu":
        return nn.ReLU()
    if name == "tanh":
        return nn.Tanh()
    raise ConfigurationError(f"unknown activation: {name!r}")


def _block_from_spec(spec: LayerSpec) -> nn.Sequential:
    layers: list[nn.Module] = []
    if spec.operation == "down":
        layers.append(nn.Conv2d(spec.channels_in, spec.channels_out, 4, stride=2, padding=1))
    elif spec.operation == "up":
        layers.append(
            nn.ConvTranspose2d(spec.channels_in, spec.channels_out, 4, stride=2, padding=1)
        )
    elif spec.operation == "output":
        # Kernel 4 at stride 1 needs 3 pixels of padding per axis to keep
        # the size; an odd total cannot be split symmetrically, so pad
        # 1 before and 2 after.
        layers.append(nn.Upsample(scale_factor=2, mode="nearest"))
        layers.append(nn.ZeroPad2d((1, 2, 1, 2)))
        layers.append(nn.Conv2d(spec.channels_in, spec.channels_out, 4, stride=1, padding=0))
    else:
        raise ConfigurationError(f"unknown operation: {spec.operation!r}")
    if spec.normalized:
        layers.append(nn.InstanceNorm2d(spec.channels_out, affine=True))
    layers.append(_activation(spec.activation))
    if spec.dropout:
        layers.append(nn.Dropout(0.5))
    return nn.Sequential(*layers)


class UNetGenerator(nn.Module):
    """Encoder/decoder generator with skip connections.

    The forward pass maps ``(N, C, H, W)`` inputs in ``[-1, 1]`` to
    ``(N, 3, H, W)`` outputs in ``(-1, 1)``; ``H`` and ``W`` must be
    divisible by ``2 ** depth``.
    """

    def __init__(self, input_channels: int = 3, depth: int = 8) -> None:
        super().__init__()
        self.input_channels = input_channels
        self.depth = depth
        self.table = generator_layer_table(input_channels, depth)
        self.down_blocks = nn.ModuleList(
            _block_from_spec(s) for s in self.table if s.operation == "down"
        )
        self.up_blocks = nn.ModuleList(
            _block_from_spec(s) for s in self.table if s.operation == "up"
        )
        self.output_block = _block_from_spec(self.table[-1])

    def _check_input(self, x: torch.Tensor) -> None:
        if x.dim() != 4 or x.shape[1] != self.input_channels:
            raise InvalidInputError(
                f"expected (N, {self.input_channels}, H, W) input, got {tuple(x.shape)}"
            )
        multiple = 2 ** self.depth
        if x.shape[-2] % multiple or x.shape[-1] % multiple or x.shape[-2] == 0 or x.shape[-1] == 0:
            raise InvalidInputError(
                f"spatial size {tuple(x.shape[-2:])} must be a positive multiple of {multiple}"
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self._check_input(x)
        skips: list[torch.Tensor] = []
        out = x
        for block in self.down_blocks:
            out = block(out)
            skips.append(out)
        out = self.up_blocks[0](skips[-1])
        for i, block in enumerate(self.up_blocks[1:], start=2):
            out = block(torch.cat([out, skips[self.depth - i]], dim=1))
        return self.output_block(out)

    def trace(self, x: torch.Tensor) -> list[tuple[int, ...]]:
        """Run a forward pass and return each layer's output shape."""
        self._check_input(x)
        shapes: list[tuple[int, ...]] = []
        skips: list[torch.Tensor] = []
        out = x
        for block in self.down_blocks:
            out = block(out)
            skips.append(out)
            shapes.append(tuple(out.shape))
        out = self.up_blocks[0](skips[-1])
        shapes.append(tuple(out.shape))
        for i, block in enumerate(self.up_blocks[1:], start=2):
            out = block(torch.cat([out, skips[self.depth - i]], dim=1))
            shapes.append(tuple(out.shape))
        out = self.output_block(out)
        shapes.append(tuple(out.shape))
        return shapes


class PatchDiscriminator(nn.Module):
    """Patch classifier over an (image, reference) channel stack.

    Four stride 2 convolution blocks shrink the input by 16x, then a
    1x1 head scores each patch, so ``(N, 6, H, W)`` maps to
    ``(N, 1, H // 16, W // 16)``.  Inputs must be at least 32 pixels a
    side so the patch map keeps the 2x2 minimum that instance
    normalization needs.
    """

    def __init__(
        self, input_channels: int = 6, widths: Sequence[int] = DISCRIMINATOR_WIDTHS
    ) -> None:
        super().__init__()
        self.input_channels = input_channels
        self.widths = tuple(widths)
        blocks: list[nn.Module] = []
        previous = input_channels
        for position, width in enumerate(self.widths):
            blocks.append(nn.Conv2d(previous, width, 4, stride=2, padding=1))
            if position > 0:
                blocks.append(nn.InstanceNorm2d(width, affine=True))
            blocks.append(nn.LeakyReLU(0.2))
            previous = width
        blocks.append(nn.Conv2d(previous, 1, kernel_size=1))
        self.body = nn.Sequential(*blocks)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.input_channels:
            raise InvalidInputError(
                f"expected (N, {self.input_channels}, H, W) input, got {tuple(x.shape)}"
            )
        # 2x the shrink factor: a 1x1 patch map has no instance statistics.
        minimum = 2 ** (len(self.widths) + 1)
        if x.shape[-2] < minimum or x.shape[-1] < minimum:
            raise InvalidInputError(
                f"spatial size {tuple(x.shape[-2:])} must be at least {minimum}"
            )
        return self.body(x)


class IdentityGenerator(nn.Module):
    """Debug generator that passes its image channels through unchanged.

    A fixed 1x1 convolution copies the first three channels and ignores
    any mask channel, giving an exact do-nothing model for pipeline
    tests.  Unlike the real generator it has no output squashing.
    """

    def __init__(self, input_channels: int = 3) -> None:
        super().__init__()
        self.input_channels = input_channels
        self.depth = 0
        conv = nn.Conv2d(input_channels, 3, kernel_size=1, bias=False)
        with torch.no_grad():
            conv.weight.zero_()
            for channel in range(3):
                conv.weight[channel, channel, 0, 0] = 1.0
        self.conv = conv

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.input_channels:
            raise InvalidInputError(
                f"expected (N, {self.input_channels}, H, W) input, got {tuple(x.shape)}"
            )
        return self.conv(x)


def init_weights(
    network: nn.Module,
    std: float = 0.02,
    mean: float = 0.0,
    rng: Optional[torch.Generator] = None,
) -> nn.Module:
    """Gaussian-initialize convolution weights and norm scales in place.

    Convolution weights draw from ``N(mean, std**2)``, norm scales from
    ``N(1, std**2)``, and every bias resets to zero.  Passing a seeded
    ``torch.Generator`` makes the draw reproducible.
    """
    with torch.no_grad():
        for module in network.modules():
            if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
                noise = torch.randn(module.weight.shape, generator=rng)
                module.weight.copy_(noise * std + mean)
                if module.bias is not None:
                    module.bias.zero_()
            elif isinstance(module, nn.InstanceNorm2d) and module.affine:
                noise = torch.randn(module.weight.shape, generator=rng)
                module.weight.copy_(noise * std + 1.0)
                module.bias.zero_()
    return network


def build_generator(
    input_channels: int = 3,
    depth: int = 8,
    init_std: float = 0.02,
    rng: Optional[torch.Generator] = None,
) -> UNetGenerator:
    """Construct and initialize a generator."""
    return init_weights(UNetGenerator(input_channels, depth), std=init_std, rng=rng)


def build_discriminator(
    input_channels: int = 6,
    init_std: float = 0.02,
    rng: Optional[torch.Generator] = None,
) -> PatchDiscriminator:
    """Construct and initialize a patch discriminator."""
    return init_weights(PatchDiscriminator(input_channels), std=init_std, rng=rng)


def set_requires_grad(network: nn.Module, flag: bool) -> None:
    for parameter in network.parameters():
        parameter.requires_grad_(flag)


def count_parameters(network: nn.Module) -> int:
    return sum(p.numel() for p in network.parameters())


def architecture_fingerprint(depth: int, disc_widths: Sequence[int] = DISCRIMINATOR_WIDTHS) -> str:
    """Short stable hash of the architecture layout at a given depth.

    Checkpoints store this so a load against a differently shaped
    network fails fast instead of mid state-dict.
    """
    removal = generator_layer_table(3, depth)
    insertion = generator_layer_table(4, depth)
    blob = repr((removal, insertion, tuple(disc_widths)))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
