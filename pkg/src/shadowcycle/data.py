"""Dataset access, shadow mask extraction, and synthetic fixtures.

Images are float32 tensors shaped ``(3, H, W)`` with values in ``[0, 1]``
and masks are ``(1, H, W)`` tensors with values in ``{0, 1}``.  The
generators consume the symmetric range ``[-1, 1]``; convert with
:func:`to_model_range` and :func:`from_model_range`.
"""

from __future__ import annotations

import threading
from collections import deque
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ConfigurationError, DataError, InvalidInputError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")


def to_model_range(image: torch.Tensor) -> torch.Tensor:
    """Map ``[0, 1]`` pixels onto the ``[-1, 1]`` range the nets use."""
    return image * 2.0 - 1.0


def from_model_range(image: torch.Tensor) -> torch.Tensor:
    """Map net output in ``[-1, 1]`` back onto clamped ``[0, 1]`` pixels."""
    return ((image + 1.0) * 0.5).clamp(0.0, 1.0)


def load_image(path: Path | str) -> torch.Tensor:
    """Decode an image file into a ``(3, H, W)`` float tensor in ``[0, 1]``.

    Raises:
        DataError: if the file is missing or cannot be decoded.
    """
    path = Path(path)
    try:
        with Image.open(path) as img:
            array = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot decode image: {path}") from exc
    return torch.from_numpy(array).permute(2, 0, 1).contiguous()


def save_image(path: Path | str, image: torch.Tensor) -> None:
    """Write a ``(3, H, W)`` tensor in ``[0, 1]`` as an 8 bit image file."""
    if image.dim() != 3 or image.shape[0] != 3:
        raise InvalidInputError(f"expected a (3, H, W) tensor, got {tuple(image.shape)}")
    array = (image.detach().clamp(0.0, 1.0) * 255.0).round().byte()
    Image.fromarray(array.permute(1, 2, 0).cpu().numpy()).save(Path(path))


def load_mask(path: Path | str) -> torch.Tensor:
    """Decode a mask file into a ``(1, H, W)`` tensor with values in ``{0, 1}``."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            array = np.asarray(img.convert("L"), dtype=np.float32)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot decode mask: {path}") from exc
    return torch.from_numpy(array > 127.5).float().unsqueeze(0)


def save_mask(path: Path | str, mask: torch.Tensor) -> None:
    """Write a ``(1, H, W)`` binary mask as a 1 bit image file."""
    if mask.dim() != 3 or mask.shape[0] != 1:
        raise InvalidInputError(f"expected a (1, H, W) tensor, got {tuple(mask.shape)}")
    array = ((mask[0].detach() > 0.5).byte() * 255).cpu().numpy()
    image = Image.fromarray(array, mode="L").convert("1", dither=Image.Dither.NONE)
    image.save(Path(path))


def _as_size(resolution) -> tuple[int, int]:
    if isinstance(resolution, int):
        return (resolution, resolution)
    height, width = resolution
    return (int(height), int(width))


def resize_image(image: torch.Tensor, resolution) -> torch.Tensor:
    """Resize a ``(C, H, W)`` image bilinearly; int means a square."""
    size = _as_size(resolution)
    if image.shape[-2:] == size:
        return image
    return F.interpolate(
        image.unsqueeze(0), size=size, mode="bilinear", align_corners=False
    ).squeeze(0)


def resize_mask(mask: torch.Tensor, resolution) -> torch.Tensor:
    """Resize a ``(1, H, W)`` mask with nearest neighbour so it stays binary."""
    size = _as_size(resolution)
    if mask.shape[-2:] == size:
        return mask
    return F.interpolate(mask.unsqueeze(0), size=size, mode="nearest").squeeze(0)


# ---------------------------------------------------------------------------
# Shadow mask extraction
# ---------------------------------------------------------------------------


def difference_map(bright: torch.Tensor, dark: torch.Tensor) -> torch.Tensor:
    """Channel-mean difference ``bright - dark`` as a ``(1, H, W)`` map."""
    if bright.shape != dark.shape:
        raise InvalidInputError(
            f"image shapes differ: {tuple(bright.shape)} vs {tuple(dark.shape)}"
        )
    if bright.dim() != 3:
        raise InvalidInputError(f"expected (C, H, W) tensors, got {tuple(bright.shape)}")
    return (bright - dark).mean(dim=0, keepdim=True)


def median_threshold(values: torch.Tensor) -> float:
    """Interpolated median of a tensor's values.

    Uses the midpoint convention for even counts, so the threshold of
    ``[0, 0, 0.4, 0.5]`` is ``0.2`` rather than an element of the input.
    """
    flat = values.reshape(-1).float()
    if flat.numel() == 0:
        raise InvalidInputError("cannot take the median of an empty tensor")
    return float(torch.quantile(flat, 0.5))


def otsu_threshold(values: torch.Tensor, bins: int = 256) -> float:
    """Threshold maximising between-class variance over a value histogram.

    The histogram spans ``[min, max]`` of the input; the returned
    threshold is the centre of the winning bin (first maximum wins a
    tie).  A constant input returns its maximum so that a strict ``>``
    test selects nothing.
    """
    flat = values.detach().reshape(-1).cpu().numpy().astype(np.float64)
    if flat.size == 0:
        raise InvalidInputError("cannot threshold an empty tensor")
    lo = float(flat.min())
    hi = float(flat.max())
    if hi <= lo:
        return hi
    hist, _ = np.histogram(flat, bins=bins, range=(lo, hi))
    hist = hist.astype(np.float64)
    width = (hi - lo) / bins
    centers = lo + (np.arange(bins, dtype=np.float64) + 0.5) * width
    weight_lo = np.cumsum(hist)
    weight_hi = weight_lo[-1] - weight_lo
    sum_lo = np.cumsum(hist * centers)
    sum_hi = sum_lo[-1] - sum_lo
    # Candidate split after each bin except the last; guard empty classes.
    valid = (weight_lo[:-1] > 0) & (weight_hi[:-1] > 0)
    mean_lo = np.where(valid, sum_lo[:-1] / np.maximum(weight_lo[:-1], 1.0), 0.0)
    mean_hi = np.where(valid, sum_hi[:-1] / np.maximum(weight_hi[:-1], 1.0), 0.0)
    variance = weight_lo[:-1] * weight_hi[:-1] * (mean_lo - mean_hi) ** 2
    variance = np.where(valid, variance, -1.0)
    best = int(np.argmax(variance))
    return float(centers[best])


def dilate_mask(mask: torch.Tensor, radius: int) -> torch.Tensor:
    """Grow a binary ``(1, H, W)`` mask by ``radius`` pixels (Chebyshev)."""
    if radius <= 0:
        return mask
    kernel = 2 * radius + 1
    return F.max_pool2d(mask.unsqueeze(0), kernel, stride=1, padding=radius).squeeze(0)


def binarize_difference(
    bright: torch.Tensor,
    dark: torch.Tensor,
    method: str = "median",
    dilation_radius: int = 0,
) -> torch.Tensor:
    """Extract a binary shadow mask from a bright/dark image pair.

    The channel-mean difference ``bright - dark`` is thresholded with a
    strict ``>`` against either its interpolated median or an Otsu
    threshold, so shadowed pixels (where the dark image lost intensity)
    map to 1.

    Args:
        bright: shadow-free image, ``(3, H, W)`` in ``[0, 1]``.
        dark: shadow image, same shape and range.
        method: ``"median"`` or ``"otsu"``.
        dilation_radius: optional pixel radius to grow the mask by.

    Returns:
        ``(1, H, W)`` float tensor with values in ``{0, 1}``.
    """
    diff = difference_map(bright, dark)
    if not torch.isfinite(diff).all():
        raise InvalidInputError("difference image contains non-finite pixels")
    if method == "median":
        threshold = median_threshold(diff)
    elif method == "otsu":
        threshold = otsu_threshold(diff)
    else:
        raise ConfigurationError(f"unknown binarization method: {method!r}")
    mask = (diff > threshold).float()
    return dilate_mask(mask, dilation_radius)


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    """One dataset entry, loaded lazily from disk."""

    identifier: str
    shadow_path: Path
    shadow_free_path: Optional[Path] = None
    mask_path: Optional[Path] = None

    @property
    def paired(self) -> bool:
        return self.shadow_free_path is not None

    def shadow(self, resolution: Optional[int] = None) -> torch.Tensor:
        image = load_image(self.shadow_path)
        return resize_image(image, resolution) if resolution else image

    def shadow_free(self, resolution: Optional[int] = None) -> torch.Tensor:
        if self.shadow_free_path is None:
            raise DataError(f"sample {self.identifier} has no shadow-free image")
        image = load_image(self.shadow_free_path)
        return resize_image(image, resolution) if resolution else image

    def mask(self, resolution: Optional[int] = None, method: str = "median") -> torch.Tensor:
        """Stored mask if present, else one binarized from the pair."""
        if self.mask_path is not None:
            mask = load_mask(self.mask_path)
            return resize_mask(mask, resolution) if resolution else mask
        if self.shadow_free_path is None:
            raise DataError(f"sample {self.identifier} has neither a mask nor a pair")
        return binarize_difference(
            self.shadow_free(resolution), self.shadow(resolution), method=method
        )


class ShadowDataset(Sequence[Sample]):
    """Ordered collection of samples plus an optional shadow-free pool.

    The pool holds shadow-free images unrelated to the shadow samples;
    it is what the unpaired regime trains against.
    """

    def __init__(
        self,
        samples: Sequence[Sample],
        free_pool: Sequence[Path] = (),
        root: Optional[Path] = None,
        layout: str = "flat",
    ) -> None:
        self._samples = list(samples)
        self.free_pool = list(free_pool)
        self.root = root
        self.layout = layout

    def __len__(self) -> int:
        return len(self._samples)

    def __getitem__(self, index):  # type: ignore[override]
        return self._samples[index]

    def __iter__(self) -> Iterator[Sample]:
        return iter(self._samples)

    @property
    def paired(self) -> bool:
        return bool(self._samples) and all(s.paired for s in self._samples)


def _image_files(directory: Path) -> list[Path]:
    files = [p for p in directory.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS]
    return sorted(files, key=lambda p: p.name)


def _require_dir(path: Path) -> Path:
    if not path.is_dir():
        raise DataError(f"missing dataset directory: {path}")
    return path


def _match_stem(directory: Optional[Path], name: str) -> Optional[Path]:
    if directory is None or not directory.is_dir():
        return None
    exact = directory / name
    if exact.is_file():
        return exact
    stem = Path(name).stem
    for ext in IMAGE_EXTENSIONS:
        candidate = directory / (stem + ext)
        if candidate.is_file():
            return candidate
    return None


def load_dataset(root: Path | str, layout: str = "istd", split: str = "train") -> ShadowDataset:
    """Enumerate a dataset directory into a :class:`ShadowDataset`.

    Layouts:
        ``istd``: ``<root>/<split>_A`` shadow images, ``<split>_B`` masks
        (optional per file), ``<split>_C`` shadow-free images, matched by
        file stem.
        ``usr``: ``<root>/shadow_<split>`` shadow images plus an
        unrelated ``<root>/shadow_free`` pool; samples are unpaired.
        ``flat``: every image directly under ``<root>`` is a shadow
        image; used for inference input.

    Raises:
        DataError: if a required directory is missing or holds no images.
        ConfigurationError: if the layout name is unknown.
    """
    root = Path(root)
    if layout == "istd":
        shadow_dir = _require_dir(root / f"{split}_A")
        free_dir = _require_dir(root / f"{split}_C")
        mask_dir = root / f"{split}_B"
        samples = []
        for path in _image_files(shadow_dir):
            free = _match_stem(free_dir, path.name)
            mask = _match_stem(mask_dir if mask_dir.is_dir() else None, path.name)
            samples.append(
                Sample(
                    identifier=path.stem,
                    shadow_path=path,
                    shadow_free_path=free,
                    mask_path=mask,
                )
            )
        dataset = ShadowDataset(samples, root=root, layout=layout)
    elif layout == "usr":
        shadow_dir = _require_dir(root / f"shadow_{split}")
        free_dir = _require_dir(root / "shadow_free")
        samples = [
            Sample(identifier=p.stem, shadow_path=p) for p in _image_files(shadow_dir)
        ]
        dataset = ShadowDataset(samples, free_pool=_image_files(free_dir), root=root, layout=layout)
    elif layout == "flat":
        directory = _require_dir(root)
        samples = [
            Sample(identifier=p.stem, shadow_path=p) for p in _image_files(directory)
        ]
        dataset = ShadowDataset(samples, root=root, layout=layout)
    else:
        raise ConfigurationError(f"unknown dataset layout: {layout!r}")
    if len(dataset) == 0:
        raise DataError(f"no images found under {root} for layout {layout!r}")
    return dataset


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


class UnpairedSampler:
    """Draw (shadow-free, shadow) pairs from two unrelated pools.

    Each pool is traversed without replacement through independent
    permutations that reshuffle when exhausted, so the pairing keeps
    changing while coverage stays uniform.
    """

    def __init__(self, free_items: Sequence, shadow_items: Sequence, rng: np.random.Generator) -> None:
        if len(free_items) == 0 or len(shadow_items) == 0:
            raise ConfigurationError("both sampling pools must be non-empty")
        self._free = list(free_items)
        self._shadow = list(shadow_items)
        self._rng = rng
        self._free_order: list[int] = []
        self._shadow_order: list[int] = []

    def _draw(self, order: list[int], count: int) -> int:
        if not order:
            order.extend(self._rng.permutation(count).tolist())
        return order.pop()

    def sample(self) -> tuple:
        free = self._free[self._draw(self._free_order, len(self._free))]
        shadow = self._shadow[self._draw(self._shadow_order, len(self._shadow))]
        return free, shadow

    def snapshot(self) -> dict:
        return {"free_order": list(self._free_order), "shadow_order": list(self._shadow_order)}

    def restore(self, state: dict) -> None:
        self._free_order = list(state["free_order"])
        self._shadow_order = list(state["shadow_order"])


class MaskBank:
    """Bounded FIFO store of shadow masks discovered during training."""

    def __init__(self, capacity: int = 64) -> None:
        if capacity < 1:
            raise ConfigurationError(f"mask bank capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._masks: deque[torch.Tensor] = deque(maxlen=capacity)
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._masks)

    def push(self, mask: torch.Tensor) -> None:
        with self._lock:
            self._masks.append(mask.detach().cpu().clone())

    def sample(self, rng: np.random.Generator) -> torch.Tensor:
        with self._lock:
            if not self._masks:
                raise InvalidInputError("cannot sample from an empty mask bank")
            index = int(rng.integers(len(self._masks)))
            return self._masks[index].clone()

    def snapshot(self) -> list[torch.Tensor]:
        with self._lock:
            return [m.clone() for m in self._masks]

    def restore(self, masks: Sequence[torch.Tensor]) -> None:
        with self._lock:
            self._masks = deque((m.clone() for m in masks), maxlen=self.capacity)


# ---------------------------------------------------------------------------
# Synthetic fixtures
# ---------------------------------------------------------------------------


def _convex_polygon_mask(size: int, vertices: Sequence[tuple[float, float]]) -> np.ndarray:
    """Rasterize a convex polygon by intersecting half-planes at pixel centres."""
    ys, xs = np.mgrid[0:size, 0:size]
    px = xs + 0.5
    py = ys + 0.5
    inside = np.ones((size, size), dtype=bool)
    count = len(vertices)
    for i in range(count):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % count]
        cross = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        inside &= cross >= 0.0
    return inside


def _fixture_triplet(
    rng: np.random.Generator, size: int
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Synthesize one (shadow-free, shadow, mask) triplet.

    The base image is a smooth per-channel gradient within ``[0.4, 0.95]``
    and the shadow is a convex polygon darkened by a constant factor drawn
    from the hard end of the ``[0.3, 0.7]`` contract range.  Polygon
    position and scale vary only mildly across samples, mirroring the low
    shadow-shape diversity of the real benchmark corpora that the unpaired
    mask losses rely on; polygons are redrawn until they cover between 15%
    and 42% of the frame.
    """
    ys, xs = np.mgrid[0:size, 0:size]
    xn = (xs + 0.5) / size
    yn = (ys + 0.5) / size
    base = np.empty((3, size, size), dtype=np.float32)
    for channel in range(3):
        offset = rng.uniform(0.55, 0.75)
        sx, sy = rng.uniform(-0.12, 0.12, size=2)
        base[channel] = np.clip(offset + sx * xn + sy * yn, 0.4, 0.95)
    while True:
        corners = int(rng.integers(5, 9))
        cx, cy = rng.uniform(0.4, 0.6, size=2) * size
        radius = rng.uniform(0.26, 0.36) * size
        angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, size=corners))
        vertices = [(cx + radius * np.cos(a), cy + radius * np.sin(a)) for a in angles]
        mask = _convex_polygon_mask(size, vertices)
        if 0.15 <= mask.mean() <= 0.42:
            break
    attenuation = rng.uniform(0.3, 0.42)
    shadow = base * np.where(mask, attenuation, 1.0).astype(np.float32)
    return (
        torch.from_numpy(base),
        torch.from_numpy(shadow.astype(np.float32)),
        torch.from_numpy(mask.astype(np.float32)).unsqueeze(0),
    )


def make_synthetic_fixture(
    count: int, size: int, rng: np.random.Generator
) -> list[tuple[torch.Tensor, torch.Tensor, torch.Tensor]]:
    """Generate ``count`` synthetic (shadow-free, shadow, mask) triplets.

    Deterministic for a given generator state; see :func:`write_fixture`
    for the on-disk form.

    Args:
        count: number of triplets, at least 1.
        size: square image size, at least 32.
        rng: numpy random generator driving every draw.
    """
    if count < 1:
        raise InvalidInputError(f"fixture count must be positive, got {count}")
    if size < 32:
        raise InvalidInputError(f"fixture size must be at least 32, got {size}")
    return [_fixture_triplet(rng, size) for _ in range(count)]


def write_fixture(
    root: Path | str,
    count: int,
    size: int = 64,
    seed: int = 0,
    split: str = "train",
) -> ShadowDataset:
    """Write a synthetic dataset in the ``istd`` layout and load it back."""
    root = Path(root)
    triplets = make_synthetic_fixture(count, size, np.random.default_rng(seed))
    shadow_dir = root / f"{split}_A"
    mask_dir = root / f"{split}_B"
    free_dir = root / f"{split}_C"
    for directory in (shadow_dir, mask_dir, free_dir):
        directory.mkdir(parents=True, exist_ok=True)
    for index, (free, shadow, mask) in enumerate(triplets):
        name = f"{index:04d}.png"
        save_image(shadow_dir / name, shadow)
        save_image(free_dir / name, free)
        save_mask(mask_dir / name, mask)
    return load_dataset(root, layout="istd", split=split)
