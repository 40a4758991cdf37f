"""Training objectives: pixel, color, content, style, adversarial, mask.

All losses accept ``(C, H, W)`` or ``(N, C, H, W)`` tensors and return
scalar tensors, so they compose under autograd.  The two ``total_loss_*``
functions assemble the full generator objective for the unpaired and
paired regimes and report a per-component breakdown whose weighted
entries sum to the returned scalar.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError, ContractViolationError, InvalidInputError


@dataclass(frozen=True)
class LossWeights:
    """Weights of the total objective and the perceptual ensemble."""

    gamma1: float = 250.0  # adversarial group
    gamma2: float = 10.0  # content group
    gamma3: float = 100.0  # pixel cycle group
    gamma4: float = 30.0  # perceptual cycle group
    gamma5: float = 60.0  # mask group
    beta1: float = 0.0  # forward pixel term, inside the gamma3 group
    beta2: float = 100.0  # forward mask term, inside the gamma5 group
    alpha1: float = 1.0  # color
    alpha2: float = 0.1  # content
    alpha3: float = 10000.0  # style

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if value < 0:
                raise ConfigurationError(f"loss weight {name} must be non-negative, got {value}")

    @classmethod
    def unpaired(cls, **overrides: float) -> "LossWeights":
        return cls(**overrides)

    @classmethod
    def paired(cls, **overrides: float) -> "LossWeights":
        values = dict(gamma2=20.0, gamma3=60.0, gamma4=50.0, beta1=10.0)
        values.update(overrides)
        return cls(**values)

    @property
    def alphas(self) -> tuple[float, float, float]:
        return (self.alpha1, self.alpha2, self.alpha3)


def _as_batch(t: torch.Tensor) -> torch.Tensor:
    if t.dim() == 3:
        return t.unsqueeze(0)
    if t.dim() == 4:
        return t
    raise InvalidInputError(f"expected a 3-d or 4-d tensor, got shape {tuple(t.shape)}")


def _check_same_shape(a: torch.Tensor, b: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    a = _as_batch(a)
    b = _as_batch(b)
    if a.shape != b.shape:
        raise InvalidInputError(f"tensor shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    return a, b


# ---------------------------------------------------------------------------
# Elementwise losses
# ---------------------------------------------------------------------------


def pixel_loss(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over all pixels and channels."""
    a, b = _check_same_shape(a, b)
    return (a - b).abs().mean()


def mask_loss(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """L1 distance between two (soft or hard) masks."""
    a, b = _check_same_shape(a, b)
    return (a - b).abs().mean()


def gaussian_kernel1d(sigma: float, radius: int, dtype: torch.dtype, device) -> torch.Tensor:
    xs = torch.arange(-radius, radius + 1, dtype=dtype, device=device)
    kernel = torch.exp(-(xs ** 2) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def gaussian_blur(image: torch.Tensor, sigma: float) -> torch.Tensor:
    """Separable Gaussian blur with reflective borders.

    Kernel radius is ``ceil(3 * sigma)``, shrunk on tiny inputs so the
    reflection window stays inside the image.
    """
    if sigma <= 0:
        raise InvalidInputError(f"sigma must be positive, got {sigma}")
    batch = _as_batch(image)
    channels, height, width = batch.shape[1], batch.shape[2], batch.shape[3]
    radius = min(math.ceil(3.0 * sigma), min(height, width) - 1)
    if radius < 1:
        return image
    kernel = gaussian_kernel1d(sigma, radius, batch.dtype, batch.device)
    row = kernel.reshape(1, 1, 1, -1).expand(channels, 1, 1, -1)
    col = kernel.reshape(1, 1, -1, 1).expand(channels, 1, -1, 1)
    padded = F.pad(batch, (radius, radius, 0, 0), mode="reflect")
    blurred = F.conv2d(padded, row, groups=channels)
    padded = F.pad(blurred, (0, 0, radius, radius), mode="reflect")
    blurred = F.conv2d(padded, col, groups=channels)
    return blurred if image.dim() == 4 else blurred.squeeze(0)


def color_loss(a: torch.Tensor, b: torch.Tensor, sigma: float = 3.0) -> torch.Tensor:
    """MSE between Gaussian-smoothed copies of the two images."""
    a, b = _check_same_shape(a, b)
    return F.mse_loss(gaussian_blur(a, sigma), gaussian_blur(b, sigma))


# ---------------------------------------------------------------------------
# Feature extractors
# ---------------------------------------------------------------------------


class FeatureExtractor(nn.Module):
    """Maps an image batch to an ordered list of feature blocks.

    Inputs are model-range ``[-1, 1]`` images.  ``calibrated`` marks
    extractors whose weights came from a trained model rather than a
    random draw; reports surface the distinction.
    """

    calibrated: bool = False
    min_input: int = 1

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:  # pragma: no cover
        raise NotImplementedError

    def check_input(self, x: torch.Tensor) -> torch.Tensor:
        x = _as_batch(x)
        if min(x.shape[-2], x.shape[-1]) < self.min_input:
            raise InvalidInputError(
                f"input {tuple(x.shape[-2:])} below extractor minimum {self.min_input}"
            )
        return x


class IdentityExtractor(FeatureExtractor):
    """Single tap returning the input itself; reduces content loss to MSE."""

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        return [self.check_input(x)]


class ConvFeatureExtractor(FeatureExtractor):
    """Frozen randomly initialized convolution stack with one tap per stage.

    Stands in for a pretrained backbone when no weights file is
    available; deterministic for a fixed seed, labeled uncalibrated.
    ``feature_scale`` multiplies every tap; it exists because loss
    weights balanced against pretrained-backbone feature magnitudes do
    not transfer verbatim to unit-scale random features (content grows
    with the square of the scale, Gram statistics with its fourth
    power), so callers can move the ensemble into the regime their
    weights expect.
    """

    min_input = 16

    def __init__(
        self,
        seed: int = 0,
        widths: Sequence[int] = (16, 32, 64, 128),
        feature_scale: float = 1.0,
    ) -> None:
        super().__init__()
        rng = torch.Generator().manual_seed(seed)
        stages: list[nn.Module] = []
        previous = 3
        for width in widths:
            conv = nn.Conv2d(previous, width, 3, stride=2, padding=1)
            with torch.no_grad():
                fan_in = previous * 9
                conv.weight.copy_(
                    torch.randn(conv.weight.shape, generator=rng) * math.sqrt(2.0 / fan_in)
                )
                conv.bias.zero_()
            stages.append(nn.Sequential(conv, nn.LeakyReLU(0.2)))
            previous = width
        self.stages = nn.ModuleList(stages)
        self.feature_scale = float(feature_scale)
        for parameter in self.parameters():
            parameter.requires_grad_(False)
        self.eval()

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        out = self.check_input(x)
        taps = []
        for stage in self.stages:
            out = stage(out)
            taps.append(out * self.feature_scale)
        return taps


class VggExtractor(FeatureExtractor):
    """VGG-16 taps at the classic perceptual-loss stages.

    Requires torchvision and a locally available weights file; nothing
    is downloaded.
    """

    calibrated = True
    min_input = 32
    TAPS = (3, 8, 15, 22)  # post-activation blocks 1-4

    def __init__(self, weights_path: str) -> None:
        super().__init__()
        try:
            from torchvision.models import vgg16
        except ImportError as exc:  # pragma: no cover
            raise ConfigurationError("torchvision is required for the VGG extractor") from exc
        if not Path(weights_path).is_file():
            raise ConfigurationError(f"VGG weights file not found: {weights_path}")
        network = vgg16(weights=None)
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        network.load_state_dict(state)
        self.features = network.features[: self.TAPS[-1] + 1]
        for parameter in self.parameters():
            parameter.requires_grad_(False)
        self.eval()
        self.register_buffer("mean", torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        out = self.check_input(x)
        out = ((out + 1.0) * 0.5 - self.mean) / self.std
        taps = []
        for index, layer in enumerate(self.features):
            out = layer(out)
            if index in self.TAPS:
                taps.append(out)
        return taps


# ---------------------------------------------------------------------------
# Feature-space losses
# ---------------------------------------------------------------------------


def content_loss(a: torch.Tensor, b: torch.Tensor, fx: FeatureExtractor) -> torch.Tensor:
    """Mean over extractor taps of feature-block MSE."""
    a, b = _check_same_shape(a, b)
    taps_a = fx(a)
    taps_b = fx(b)
    losses = [F.mse_loss(fa, fb) for fa, fb in zip(taps_a, taps_b)]
    return torch.stack(losses).mean()


def gram_matrix(features: torch.Tensor, normalize: bool = True) -> torch.Tensor:
    """Channel correlation matrix of a ``(N, D, H, W)`` feature block.

    With ``normalize`` the product is divided by (spatial positions x
    channels), keeping magnitudes comparable across resolutions; the
    raw product is available for the literal unnormalized form.
    """
    if features.dim() != 4:
        raise InvalidInputError(f"expected a (N, D, H, W) block, got {tuple(features.shape)}")
    batch, depth, height, width = features.shape
    flat = features.reshape(batch, depth, height * width)
    gram = torch.bmm(flat, flat.transpose(1, 2))
    if normalize:
        gram = gram / float(depth * height * width)
    return gram


def style_loss(
    a: torch.Tensor, b: torch.Tensor, fx: FeatureExtractor, normalize: bool = True
) -> torch.Tensor:
    """Mean over taps of MSE between Gram matrices."""
    a, b = _check_same_shape(a, b)
    taps_a = fx(a)
    taps_b = fx(b)
    losses = [
        F.mse_loss(gram_matrix(fa, normalize), gram_matrix(fb, normalize))
        for fa, fb in zip(taps_a, taps_b)
    ]
    return torch.stack(losses).mean()


def perceptual_loss(
    a: torch.Tensor,
    b: torch.Tensor,
    fx: FeatureExtractor,
    weights: tuple[float, float, float] = (1.0, 0.1, 10000.0),
    sigma: float = 3.0,
) -> torch.Tensor:
    """Weighted ensemble of color, content, and style losses."""
    alpha1, alpha2, alpha3 = weights
    a, b = _check_same_shape(a, b)
    total = torch.zeros((), dtype=a.dtype, device=a.device)
    if alpha1:
        total = total + alpha1 * color_loss(a, b, sigma)
    if alpha2:
        total = total + alpha2 * content_loss(a, b, fx)
    if alpha3:
        total = total + alpha3 * style_loss(a, b, fx)
    return total


# ---------------------------------------------------------------------------
# Adversarial losses
# ---------------------------------------------------------------------------


def _patch_targets(prediction: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    return torch.ones_like(prediction), torch.zeros_like(prediction)


def gan_loss_generator(
    discriminator: nn.Module,
    fake: torch.Tensor,
    reference: torch.Tensor,
    negative: torch.Tensor,
) -> torch.Tensor:
    """Least-squares objective pushing ``fake`` toward the all-ones patch map.

    The discriminator scores (candidate, reference) channel stacks; the
    ``negative`` is a wrong-domain synthetic image from the replay
    buffer and carries no generator gradient.
    """
    fake, reference = _check_same_shape(fake, reference)
    _, negative = _check_same_shape(reference, negative)
    pred_fake = discriminator(torch.cat([fake, reference], dim=1))
    pred_negative = discriminator(torch.cat([negative.detach(), reference], dim=1))
    ones, zeros = _patch_targets(pred_fake)
    return 0.5 * (F.mse_loss(pred_fake, ones) + F.mse_loss(pred_negative, zeros))


def gan_loss_discriminator(
    discriminator: nn.Module,
    real: torch.Tensor,
    reference: torch.Tensor,
    fake_from_buffer: torch.Tensor,
) -> torch.Tensor:
    """Least-squares dual: ones on the real pair, zeros on the buffered fake."""
    real, reference = _check_same_shape(real, reference)
    _, fake_from_buffer = _check_same_shape(reference, fake_from_buffer)
    pred_real = discriminator(torch.cat([real, reference], dim=1))
    pred_fake = discriminator(torch.cat([fake_from_buffer.detach(), reference], dim=1))
    ones, zeros = _patch_targets(pred_real)
    return 0.5 * (F.mse_loss(pred_real, ones) + F.mse_loss(pred_fake, zeros))


# ---------------------------------------------------------------------------
# Soft masks
# ---------------------------------------------------------------------------


def soft_binarize(difference: torch.Tensor, sharpness: float = 50.0) -> torch.Tensor:
    """Differentiable binarization of a difference map.

    Each item is thresholded at its own (detached) median; a steep
    sigmoid stands in for the hard step so mask losses keep gradients.
    """
    batch = _as_batch(difference)
    if batch.shape[1] != 1:
        raise InvalidInputError(f"expected single-channel maps, got {tuple(batch.shape)}")
    flat = batch.detach().reshape(batch.shape[0], -1)
    thresholds = torch.quantile(flat, 0.5, dim=1).reshape(-1, 1, 1, 1)
    soft = torch.sigmoid(sharpness * (batch - thresholds))
    return soft if difference.dim() == 4 else soft.squeeze(0)


def hard_mask(soft: torch.Tensor) -> torch.Tensor:
    """Hard {0,1} view of a soft mask (strict > 0.5)."""
    return (soft > 0.5).to(soft.dtype)


def soft_shadow_mask(
    bright: torch.Tensor, dark: torch.Tensor, sharpness: float = 50.0
) -> torch.Tensor:
    """Soft mask from the channel-mean difference of an image pair."""
    bright, dark = _check_same_shape(bright, dark)
    return soft_binarize((bright - dark).mean(dim=1, keepdim=True), sharpness)


# ---------------------------------------------------------------------------
# Total objectives
# ---------------------------------------------------------------------------

UNPAIRED_COMPONENTS = (
    "adv_fake_free",
    "adv_fake_shadow",
    "adv_rec_free",
    "adv_rec_shadow",
    "content_removal",
    "content_insertion",
    "cycle_pixel_free",
    "cycle_pixel_shadow",
    "cycle_perceptual_free",
    "cycle_perceptual_shadow",
    "mask_cycle_removal",
    "mask_cycle_insertion",
    "mask_forward_bank",
)

PAIRED_COMPONENTS = (
    "adv_fake_free",
    "adv_fake_shadow",
    "adv_rec_free",
    "adv_rec_shadow",
    "content_removal",
    "content_insertion",
    "cycle_pixel_free",
    "cycle_pixel_shadow",
    "forward_pixel",
    "cycle_perceptual_free",
    "cycle_perceptual_shadow",
    "mask_cycle_removal",
    "mask_cycle_insertion",
    "mask_forward_gt",
)


def _require(state, field: str) -> torch.Tensor:
    value = getattr(state, field, None)
    if value is None:
        raise ContractViolationError(f"cycle state is missing required field {field!r}")
    return value


def _total_loss(
    state,
    nets,
    weights: LossWeights,
    fx: FeatureExtractor,
    paired: bool,
    sigma: float,
    beta2_standalone: bool,
) -> tuple[torch.Tensor, dict[str, float]]:
    w = weights
    names = PAIRED_COMPONENTS if paired else UNPAIRED_COMPONENTS
    breakdown = {name: 0.0 for name in names}
    terms: list[torch.Tensor] = []

    def add(name: str, weight: float, term: torch.Tensor) -> None:
        weighted = weight * term
        breakdown[name] = float(weighted.detach())
        terms.append(weighted)

    if w.gamma1 > 0:
        u = _require(state, "real_free")
        v = _require(state, "real_shadow")
        negative_shadow = _require(state, "buffer_fake_shadow")
        negative_free = _require(state, "buffer_fake_free")
        add(
            "adv_fake_free",
            w.gamma1,
            gan_loss_generator(nets.d_f, _require(state, "fake_free"), u, negative_shadow),
        )
        add(
            "adv_fake_shadow",
            w.gamma1,
            gan_loss_generator(nets.d_s, _require(state, "fake_shadow"), v, negative_free),
        )
        add(
            "adv_rec_free",
            w.gamma1,
            gan_loss_generator(nets.d_f, _require(state, "rec_free"), u, negative_shadow),
        )
        add(
            "adv_rec_shadow",
            w.gamma1,
            gan_loss_generator(nets.d_s, _require(state, "rec_shadow"), v, negative_free),
        )
    if w.gamma2 > 0:
        add(
            "content_removal",
            w.gamma2,
            content_loss(_require(state, "real_shadow"), _require(state, "fake_free"), fx),
        )
        add(
            "content_insertion",
            w.gamma2,
            content_loss(_require(state, "real_free"), _require(state, "fake_shadow"), fx),
        )
    if w.gamma3 > 0:
        add(
            "cycle_pixel_free",
            w.gamma3,
            pixel_loss(_require(state, "real_free"), _require(state, "rec_free")),
        )
        add(
            "cycle_pixel_shadow",
            w.gamma3,
            pixel_loss(_require(state, "real_shadow"), _require(state, "rec_shadow")),
        )
        if paired and w.beta1 > 0:
            # Forward constraint sits inside the gamma3 group, weight
            # gamma3 * beta1.
            add(
                "forward_pixel",
                w.gamma3 * w.beta1,
                pixel_loss(_require(state, "real_free"), _require(state, "fake_free")),
            )
    if w.gamma4 > 0:
        add(
            "cycle_perceptual_free",
            w.gamma4,
            perceptual_loss(
                _require(state, "real_free"), _require(state, "rec_free"), fx, w.alphas, sigma
            ),
        )
        add(
            "cycle_perceptual_shadow",
            w.gamma4,
            perceptual_loss(
                _require(state, "real_shadow"), _require(state, "rec_shadow"), fx, w.alphas, sigma
            ),
        )
    if w.gamma5 > 0:
        add(
            "mask_cycle_removal",
            w.gamma5,
            mask_loss(_require(state, "removal_mask"), _require(state, "rec_removal_mask")),
        )
        add(
            "mask_cycle_insertion",
            w.gamma5,
            mask_loss(_require(state, "insertion_mask"), _require(state, "rec_insertion_mask")),
        )
    forward_mask_weight = w.beta2 if beta2_standalone else w.gamma5 * w.beta2
    if forward_mask_weight > 0:
        if paired:
            add(
                "mask_forward_gt",
                forward_mask_weight,
                mask_loss(_require(state, "mask_in"), _require(state, "removal_mask")),
            )
        else:
            add(
                "mask_forward_bank",
                forward_mask_weight,
                mask_loss(_require(state, "bank_mask"), _require(state, "removal_mask")),
            )
    if terms:
        total = torch.stack(terms).sum()
    else:
        total = torch.zeros(())
    return total, breakdown


def total_loss_unpaired(
    state,
    nets,
    weights: LossWeights,
    fx: FeatureExtractor,
    sigma: float = 3.0,
    beta2_standalone: bool = False,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Generator objective for the unpaired regime.

    Component map keys follow :data:`UNPAIRED_COMPONENTS`; entries are
    already weighted, so their plain sum reproduces the scalar.  beta1
    plays no role here (the unpaired weight column sets it to 0); the
    forward mask term compares against the sampled bank mask.
    """
    return _total_loss(state, nets, weights, fx, False, sigma, beta2_standalone)


def total_loss_paired(
    state,
    nets,
    weights: LossWeights,
    fx: FeatureExtractor,
    sigma: float = 3.0,
    beta2_standalone: bool = False,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Generator objective for the paired regime.

    Adds the forward pixel constraint (weight gamma3 * beta1) and
    compares the forward mask against the ground-truth mask instead of
    a bank sample.
    """
    if getattr(state, "real_free", None) is None or getattr(state, "real_shadow", None) is None:
        raise ContractViolationError("paired loss requires a ground-truth (u, v) pair")
    return _total_loss(state, nets, weights, fx, True, sigma, beta2_standalone)
