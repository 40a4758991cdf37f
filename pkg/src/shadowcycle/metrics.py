"""Evaluation: color-space conversion, error metrics, reports.

All metric entry points take images in ``[0, 1]``.  RGB errors are
computed on the rounded 8-bit scale by default, matching how results
are reported for this task; Lab errors stay continuous.
"""

from __future__ import annotations

import csv
import json
import time
from pathlib import Path
from typing import Optional

import torch
from torch import nn

from . import data as data_mod
from . import losses as losses_mod
from .engine import TrainConfig, load_removal_generator
from .errors import ConfigurationError, InvalidInputError, UndefinedRegionError

# sRGB (D65) primaries; rows map linear RGB to X, Y, Z.
_RGB_TO_XYZ = (
    (0.4124564, 0.3575761, 0.1804375),
    (0.2126729, 0.7151522, 0.0721750),
    (0.0193339, 0.1191920, 0.9503041),
)
_XYZ_TO_RGB = (
    (3.2404542, -1.5371385, -0.4985314),
    (-0.9692660, 1.8760108, 0.0415560),
    (0.0556434, -0.2040259, 1.0572252),
)
_WHITE_POINT = (0.95047, 1.0, 1.08883)
_PEAK = {"rgb": 255.0, "lab": 100.0}
_PSNR_CAP = 100.0


def _check_unit_range(image: torch.Tensor, name: str = "image") -> None:
    if image.dim() not in (3, 4) or image.shape[-3] != 3:
        raise InvalidInputError(f"{name} must be (3, H, W) or (N, 3, H, W), got {tuple(image.shape)}")
    if not torch.isfinite(image).all():
        raise InvalidInputError(f"{name} contains non-finite values")
    lo, hi = float(image.min()), float(image.max())
    if lo < -1e-6 or hi > 1.0 + 1e-6:
        raise InvalidInputError(f"{name} values must lie in [0, 1], got [{lo:.4g}, {hi:.4g}]")


def rgb_to_lab(image: torch.Tensor) -> torch.Tensor:
    """Convert ``[0, 1]`` sRGB to CIE Lab (D65 white, L in ``[0, 100]``)."""
    _check_unit_range(image)
    squeeze = image.dim() == 3
    rgb = image.double().clamp(0.0, 1.0)
    if squeeze:
        rgb = rgb.unsqueeze(0)
    linear = torch.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    matrix = torch.tensor(_RGB_TO_XYZ, dtype=torch.float64)
    xyz = torch.einsum("ij,njhw->nihw", matrix, linear)
    white = torch.tensor(_WHITE_POINT, dtype=torch.float64).view(1, 3, 1, 1)
    t = xyz / white
    delta = 6.0 / 29.0
    f = torch.where(t > delta**3, t ** (1.0 / 3.0), t / (3.0 * delta**2) + 4.0 / 29.0)
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    lab = torch.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], dim=1)
    lab = lab.to(image.dtype)
    return lab.squeeze(0) if squeeze else lab


def lab_to_rgb(lab: torch.Tensor) -> torch.Tensor:
    """Invert :func:`rgb_to_lab`; exact inverse up to float rounding."""
    if lab.dim() not in (3, 4) or lab.shape[-3] != 3:
        raise InvalidInputError(f"expected (3, H, W) or (N, 3, H, W) Lab, got {tuple(lab.shape)}")
    if not torch.isfinite(lab).all():
        raise InvalidInputError("Lab image contains non-finite values")
    squeeze = lab.dim() == 3
    values = lab.double()
    if squeeze:
        values = values.unsqueeze(0)
    light, a, b = values[:, 0], values[:, 1], values[:, 2]
    fy = (light + 16.0) / 116.0
    fx = fy + a / 500.0
    fz = fy - b / 200.0
    f = torch.stack([fx, fy, fz], dim=1)
    delta = 6.0 / 29.0
    t = torch.where(f > delta, f**3, 3.0 * delta**2 * (f - 4.0 / 29.0))
    white = torch.tensor(_WHITE_POINT, dtype=torch.float64).view(1, 3, 1, 1)
    xyz = t * white
    matrix = torch.tensor(_XYZ_TO_RGB, dtype=torch.float64)
    linear = torch.einsum("ij,njhw->nihw", matrix, xyz)
    rgb = torch.where(
        linear <= 0.0031308,
        linear * 12.92,
        1.055 * linear.clamp(min=0.0) ** (1.0 / 2.4) - 0.055,
    )
    rgb = rgb.to(lab.dtype)
    return rgb.squeeze(0) if squeeze else rgb


def _metric_values(prediction: torch.Tensor, reference: torch.Tensor, space: str) -> tuple[torch.Tensor, torch.Tensor]:
    if space not in _PEAK:
        raise InvalidInputError(f"space must be rgb or lab, got {space!r}")
    _check_unit_range(prediction, "prediction")
    _check_unit_range(reference, "reference")
    if prediction.shape != reference.shape:
        raise InvalidInputError(
            f"shape mismatch: {tuple(prediction.shape)} vs {tuple(reference.shape)}"
        )
    if space == "rgb":
        a = torch.round(prediction.double().clamp(0, 1) * 255.0)
        b = torch.round(reference.double().clamp(0, 1) * 255.0)
    else:
        a = rgb_to_lab(prediction.double())
        b = rgb_to_lab(reference.double())
    return a, b


def rmse(
    prediction: torch.Tensor,
    reference: torch.Tensor,
    space: str = "rgb",
    region_mask: Optional[torch.Tensor] = None,
) -> float:
    """Root-mean-square error, optionally restricted to a binary region."""
    a, b = _metric_values(prediction, reference, space)
    squared = (a - b) ** 2
    if region_mask is None:
        return float(squared.mean().sqrt())
    mask = region_mask.double()
    if mask.shape[-2:] != squared.shape[-2:]:
        raise InvalidInputError(
            f"region mask {tuple(region_mask.shape)} does not match images {tuple(squared.shape)}"
        )
    while mask.dim() < squared.dim():
        mask = mask.unsqueeze(0)
    weight = (mask.expand_as(squared)).sum()
    if float(weight) == 0.0:
        raise UndefinedRegionError("region mask selects no pixels; the error is undefined there")
    return float(((squared * mask).sum() / weight).sqrt())


def psnr(
    prediction: torch.Tensor,
    reference: torch.Tensor,
    space: str = "rgb",
    region_mask: Optional[torch.Tensor] = None,
) -> float:
    """Peak signal-to-noise ratio in dB, capped at 100 for exact matches."""
    error = rmse(prediction, reference, space, region_mask)
    if error == 0.0:
        return _PSNR_CAP
    return float(20.0 * torch.log10(torch.tensor(_PEAK[space] / error, dtype=torch.float64)))


def error_heatmap(
    prediction: torch.Tensor,
    reference: torch.Tensor,
    normalize: bool = False,
) -> torch.Tensor:
    """Per-pixel squared L2 distance across channels, shape ``(H, W)``.

    The raw map sums to the total squared error of the pair; with
    ``normalize`` it is scaled into ``[0, 1]`` by its own maximum.
    """
    _check_unit_range(prediction, "prediction")
    _check_unit_range(reference, "reference")
    if prediction.shape != reference.shape:
        raise InvalidInputError(
            f"shape mismatch: {tuple(prediction.shape)} vs {tuple(reference.shape)}"
        )
    if prediction.dim() == 4:
        if prediction.shape[0] != 1:
            raise InvalidInputError("heatmaps are defined per image; pass a single image")
        prediction, reference = prediction[0], reference[0]
    heat = ((prediction.double() - reference.double()) ** 2).sum(dim=0)
    if normalize:
        peak = float(heat.max())
        if peak > 0.0:
            heat = heat / peak
    return heat


def save_heatmap(heatmap: torch.Tensor, path: Path | str) -> Path:
    """Write a heatmap as an 8-bit grayscale PNG (self-normalized)."""
    from PIL import Image

    if heatmap.dim() != 2:
        raise InvalidInputError(f"expected an (H, W) heatmap, got {tuple(heatmap.shape)}")
    values = heatmap.detach().double()
    peak = float(values.max())
    if peak > 0.0:
        values = values / peak
    array = (values.clamp(0, 1) * 255.0).round().to(torch.uint8).numpy()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array, mode="L").save(path)
    return path


class PerceptualScorer:
    """Feature-space dissimilarity between two images.

    With a calibration file the score comes from pretrained features;
    without one a fixed random extractor is used and the report labels
    the scores as uncalibrated.  Zero means identical inputs and the
    score is symmetric in its arguments.
    """

    def __init__(
        self,
        calibration_path: Optional[Path | str] = None,
        fx: Optional[losses_mod.FeatureExtractor] = None,
    ) -> None:
        if calibration_path is not None:
            path = Path(calibration_path)
            if not path.is_file():
                raise ConfigurationError(f"scorer calibration file not found: {path}")
            self.fx: losses_mod.FeatureExtractor = losses_mod.VggExtractor(path)
            self.kind = "vgg"
        elif fx is not None:
            self.fx = fx
            self.kind = "custom"
        else:
            self.fx = losses_mod.ConvFeatureExtractor(seed=0)
            self.kind = "conv"

    @property
    def calibrated(self) -> bool:
        return self.fx.calibrated

    def score(self, a: torch.Tensor, b: torch.Tensor) -> float:
        _check_unit_range(a, "a")
        _check_unit_range(b, "b")
        if a.shape != b.shape:
            raise InvalidInputError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
        if a.dim() == 3:
            a, b = a.unsqueeze(0), b.unsqueeze(0)
        # Extractors expect model range.
        with torch.no_grad():
            feats_a = self.fx(a * 2.0 - 1.0)
            feats_b = self.fx(b * 2.0 - 1.0)
        total = 0.0
        for fa, fb in zip(feats_a, feats_b):
            fa = fa / fa.norm(dim=1, keepdim=True).clamp(min=1e-10)
            fb = fb / fb.norm(dim=1, keepdim=True).clamp(min=1e-10)
            total += float(((fa - fb) ** 2).mean())
        return total / len(feats_a)

    def __call__(self, a: torch.Tensor, b: torch.Tensor) -> float:
        return self.score(a, b)


class Deshadower:
    """Inference wrapper around the removal generator of a checkpoint."""

    def __init__(self, checkpoint_path: Path | str) -> None:
        self.generator, self.config, self.kind = load_removal_generator(checkpoint_path)
        self.checkpoint_path = Path(checkpoint_path)

    def remove(self, image: torch.Tensor) -> torch.Tensor:
        """Remove the shadow from one ``(3, H, W)`` image in ``[0, 1]``."""
        _check_unit_range(image)
        if image.dim() != 3:
            raise InvalidInputError("inference runs on single (3, H, W) images")
        height, width = image.shape[-2:]
        work = image
        if self.kind == "unet":
            work = data_mod.resize_image(work, self.config.resolution)
        with torch.no_grad():
            out = self.generator(data_mod.to_model_range(work).unsqueeze(0))[0]
        result = data_mod.from_model_range(out)
        if result.shape[-2:] != (height, width):
            result = data_mod.resize_image(result, (height, width))
        return result


def evaluate_dataset(
    dataset: data_mod.ShadowDataset,
    checkpoint_path: Path | str,
    out_dir: Path | str,
    scorer: Optional[PerceptualScorer] = None,
    max_images: Optional[int] = None,
) -> dict:
    """Score a checkpoint on a paired dataset and write a report.

    Produces ``eval_report.json``, ``eval_summary.csv``, and one error
    heatmap PNG per image under ``out_dir``.  Per-image failures are
    recorded and do not stop the run.
    """
    if not dataset.paired:
        raise ConfigurationError(
            "evaluation needs paired data: every shadow image must have a reference"
        )
    out_dir = Path(out_dir)
    heatmap_dir = out_dir / "heatmaps"
    heatmap_dir.mkdir(parents=True, exist_ok=True)
    deshadower = Deshadower(checkpoint_path)
    if scorer is None:
        scorer = PerceptualScorer()

    records: list[dict] = []
    failures: list[dict] = []
    count = len(dataset) if max_images is None else min(max_images, len(dataset))
    for sample in list(dataset)[:count]:
        try:
            records.append(_evaluate_sample(sample, deshadower, scorer, heatmap_dir))
        except Exception as exc:  # per-image isolation; summarized in the report
            failures.append({"identifier": sample.identifier, "error": str(exc)})

    metric_keys = [k for k in (records[0] if records else {}) if k not in ("identifier", "heatmap")]
    aggregate = {
        key: _mean_or_none([r[key] for r in records]) for key in metric_keys
    }
    report = {
        "checkpoint": str(checkpoint_path),
        "generator_kind": deshadower.kind,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "scorer": {"kind": scorer.kind, "calibrated": scorer.calibrated},
        "count": len(records),
        "images": records,
        "failures": failures,
        "aggregate": aggregate,
    }
    (out_dir / "eval_report.json").write_text(
        json.dumps(report, indent=2) + "\n", encoding="utf-8"
    )
    if records:
        with open(out_dir / "eval_summary.csv", "w", newline="", encoding="utf-8") as handle:
            writer = csv.DictWriter(handle, fieldnames=list(records[0]))
            writer.writeheader()
            writer.writerows(records)
    return report


def _evaluate_sample(
    sample: data_mod.Sample,
    deshadower: Deshadower,
    scorer: PerceptualScorer,
    heatmap_dir: Path,
) -> dict:
    reference = sample.shadow_free()
    shadow = data_mod.resize_image(sample.shadow(), reference.shape[-2:])
    prediction = deshadower.remove(shadow)
    if prediction.shape[-2:] != reference.shape[-2:]:
        prediction = data_mod.resize_image(prediction, reference.shape[-2:])
    mask = sample.mask(reference.shape[-2:])

    record: dict = {"identifier": sample.identifier}
    for space in ("rgb", "lab"):
        record[f"rmse_{space}"] = rmse(prediction, reference, space)
        record[f"psnr_{space}"] = psnr(prediction, reference, space)
        for region, region_mask in (("shadow", mask), ("free", 1.0 - mask)):
            try:
                record[f"rmse_{space}_{region}"] = rmse(prediction, reference, space, region_mask)
            except UndefinedRegionError:
                record[f"rmse_{space}_{region}"] = None
    record["perceptual"] = scorer.score(prediction, reference)
    heatmap_path = heatmap_dir / f"{sample.identifier}.png"
    save_heatmap(error_heatmap(prediction, reference), heatmap_path)
    record["heatmap"] = heatmap_path.name
    return record


def _mean_or_none(values: list) -> Optional[float]:
    present = [v for v in values if v is not None]
    if not present:
        return None
    return sum(present) / len(present)
