"""Data layer: image round trips, thresholds, layouts, samplers, fixtures."""

from __future__ import annotations

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from shadowcycle import (
    ConfigurationError,
    DataError,
    InvalidInputError,
    MaskBank,
    UnpairedSampler,
    binarize_difference,
    load_dataset,
    load_image,
    load_mask,
    make_synthetic_fixture,
    save_image,
    save_mask,
    write_fixture,
)
from shadowcycle.data import (
    difference_map,
    dilate_mask,
    from_model_range,
    median_threshold,
    otsu_threshold,
    resize_image,
    resize_mask,
    to_model_range,
)


def rand_image(rng: np.random.Generator, size: int = 16) -> torch.Tensor:
    return torch.from_numpy(rng.random((3, size, size), dtype=np.float64).astype(np.float32))


# ---------------------------------------------------------------------------
# Image files and ranges
# ---------------------------------------------------------------------------


def test_image_round_trip_is_lossless_after_quantization(tmp_path):
    rng = np.random.default_rng(0)
    image = rand_image(rng, 12)
    path = tmp_path / "img.png"
    save_image(path, image)
    loaded = load_image(path)
    assert loaded.shape == (3, 12, 12)
    assert loaded.dtype == torch.float32
    # One 8-bit quantization on save, none on load.
    assert torch.allclose(loaded, (image * 255).round() / 255, atol=1e-6)
    save_image(path, loaded)
    assert torch.equal(load_image(path), loaded)


def test_mask_round_trip_is_exact(tmp_path):
    mask = (torch.rand(1, 9, 9) > 0.5).float()
    path = tmp_path / "mask.png"
    save_mask(path, mask)
    loaded = load_mask(path)
    assert torch.equal(loaded, mask)
    assert set(loaded.unique().tolist()) <= {0.0, 1.0}


def test_model_range_round_trip():
    image = torch.rand(3, 8, 8)
    shifted = to_model_range(image)
    assert float(shifted.min()) >= -1.0 and float(shifted.max()) <= 1.0
    assert torch.allclose(from_model_range(shifted), image, atol=1e-6)


def test_resize_accepts_scalar_and_pair():
    image = torch.rand(3, 16, 12)
    assert resize_image(image, 8).shape == (3, 8, 8)
    assert resize_image(image, (4, 6)).shape == (3, 4, 6)
    mask = (torch.rand(1, 16, 12) > 0.5).float()
    out = resize_mask(mask, (8, 6))
    assert out.shape == (1, 8, 6)
    assert set(out.unique().tolist()) <= {0.0, 1.0}


def test_resize_is_identity_at_native_size():
    image = torch.rand(3, 10, 10)
    assert torch.equal(resize_image(image, 10), image)


# ---------------------------------------------------------------------------
# Thresholds and binarization
# ---------------------------------------------------------------------------


def brute_force_median(values: torch.Tensor) -> float:
    ordered = np.sort(values.reshape(-1).numpy().astype(np.float32))
    n = ordered.size
    if n % 2:
        return float(ordered[n // 2])
    lo, hi = ordered[n // 2 - 1], ordered[n // 2]
    # Same float32 interpolation the implementation uses.
    return float(lo + np.float32(0.5) * (hi - lo))


def test_median_threshold_midpoint_convention():
    assert median_threshold(torch.tensor([0.0, 0.0, 0.4, 0.5])) == pytest.approx(0.2)
    assert median_threshold(torch.tensor([3.0, 1.0, 2.0])) == 2.0
    with pytest.raises(InvalidInputError):
        median_threshold(torch.empty(0))


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10_000), st.integers(min_value=2, max_value=33))
def test_median_threshold_matches_sorted_midpoint(seed, count):
    rng = np.random.default_rng(seed)
    values = torch.from_numpy(rng.normal(size=count).astype(np.float32))
    # abs guard: the library interpolates in a different operation order,
    # so bit equality is not promised, only the convention.
    assert median_threshold(values) == pytest.approx(
        brute_force_median(values), rel=1e-6, abs=1e-6
    )


def test_otsu_threshold_splits_clean_bimodal_signal():
    rng = np.random.default_rng(3)
    low = rng.normal(0.1, 0.01, size=200)
    high = rng.normal(0.8, 0.01, size=100)
    values = torch.from_numpy(np.concatenate([low, high]).astype(np.float32))
    threshold = otsu_threshold(values)
    # The threshold is a bin centre, so allow stragglers inside the
    # winning bin; the split must still classify almost everything.
    mislabeled = int((low > threshold).sum()) + int((high <= threshold).sum())
    assert mislabeled <= 3
    assert otsu_threshold(torch.full((10,), 2.5)) == 2.5


def test_binarize_difference_recovers_planted_mask():
    rng = np.random.default_rng(7)
    bright = torch.from_numpy(rng.uniform(0.5, 0.9, size=(3, 16, 16)).astype(np.float32))
    mask = torch.zeros(1, 16, 16)
    mask[0, 4:12, 3:10] = 1.0
    dark = bright * (1.0 - 0.5 * mask)
    for method in ("median", "otsu"):
        recovered = binarize_difference(bright, dark, method=method)
        assert set(recovered.unique().tolist()) <= {0.0, 1.0}
        intersection = float((recovered * mask).sum())
        union = float(((recovered + mask) > 0).sum())
        assert intersection / union > 0.8, method


def test_binarize_difference_rejects_bad_inputs():
    image = torch.rand(3, 8, 8)
    with pytest.raises(ConfigurationError):
        binarize_difference(image, image, method="mean")
    with pytest.raises(InvalidInputError):
        binarize_difference(image, torch.rand(3, 4, 4))
    poisoned = image.clone()
    poisoned[0, 0, 0] = float("nan")
    with pytest.raises(InvalidInputError):
        binarize_difference(poisoned, image)


def test_difference_map_is_channel_mean():
    bright = torch.rand(3, 5, 5)
    dark = torch.rand(3, 5, 5)
    expected = (bright - dark).mean(dim=0, keepdim=True)
    assert torch.equal(difference_map(bright, dark), expected)


def test_dilate_mask_oracle():
    mask = torch.zeros(1, 5, 5)
    mask[0, 2, 2] = 1.0
    grown = dilate_mask(mask, 1)
    expected = torch.zeros(1, 5, 5)
    expected[0, 1:4, 1:4] = 1.0
    assert torch.equal(grown, expected)
    assert torch.equal(dilate_mask(mask, 0), mask)


# ---------------------------------------------------------------------------
# Datasets and layouts
# ---------------------------------------------------------------------------


def test_istd_layout_loads_paired_samples(fixture_dataset):
    assert len(fixture_dataset) == 8
    assert fixture_dataset.paired
    sample = fixture_dataset[0]
    assert sample.paired
    assert sample.shadow().shape == (3, 64, 64)
    assert sample.shadow_free().shape == (3, 64, 64)
    mask = sample.mask()
    assert mask.shape == (1, 64, 64)
    assert set(mask.unique().tolist()) <= {0.0, 1.0}


def test_sample_mask_falls_back_to_binarization(fixture_root, tmp_path):
    import shutil

    root = tmp_path / "nomask"
    shutil.copytree(fixture_root / "train_A", root / "train_A")
    shutil.copytree(fixture_root / "train_C", root / "train_C")
    dataset = load_dataset(root, layout="istd", split="train")
    sample = dataset[0]
    expected = binarize_difference(sample.shadow_free(), sample.shadow())
    assert torch.equal(sample.mask(), expected)


def test_flat_layout_unpaired(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(3):
        save_image(tmp_path / f"{i}.png", rand_image(rng, 8))
    dataset = load_dataset(tmp_path, layout="flat")
    assert len(dataset) == 3
    assert not dataset.paired
    assert dataset[0].shadow_free_path is None


def test_usr_layout_keeps_free_pool_separate(tmp_path):
    rng = np.random.default_rng(1)
    (tmp_path / "shadow_train").mkdir()
    (tmp_path / "shadow_free").mkdir()
    for i in range(2):
        save_image(tmp_path / "shadow_train" / f"s{i}.png", rand_image(rng, 8))
    for i in range(3):
        save_image(tmp_path / "shadow_free" / f"f{i}.png", rand_image(rng, 8))
    dataset = load_dataset(tmp_path, layout="usr", split="train")
    assert len(dataset) == 2
    assert not dataset.paired
    assert len(dataset.free_pool) == 3


def test_load_dataset_errors():
    with pytest.raises(DataError):
        load_dataset("/nonexistent/place", layout="istd")
    with pytest.raises(ConfigurationError):
        load_dataset("/tmp", layout="unknown_layout")


def test_load_dataset_empty_directory_raises(tmp_path):
    (tmp_path / "train_A").mkdir()
    (tmp_path / "train_C").mkdir()
    with pytest.raises(DataError):
        load_dataset(tmp_path, layout="istd", split="train")


# ---------------------------------------------------------------------------
# Samplers and the mask bank
# ---------------------------------------------------------------------------


def test_unpaired_sampler_covers_both_pools_each_epoch():
    rng = np.random.default_rng(0)
    sampler = UnpairedSampler(list(range(5)), list(range(7)), rng)
    free_seen = [sampler.sample()[0] for _ in range(5)]
    assert sorted(free_seen) == list(range(5))
    more = [sampler.sample()[0] for _ in range(5)]
    assert sorted(more) == list(range(5))


def test_unpaired_sampler_snapshot_restores_sequence():
    rng = np.random.default_rng(9)
    sampler = UnpairedSampler(list(range(4)), list(range(4)), rng)
    sampler.sample()
    state = sampler.snapshot()
    # The sampler owns no rng; callers snapshot it alongside.
    rng_state = rng.bit_generator.state
    expected = [sampler.sample() for _ in range(6)]
    replica_rng = np.random.default_rng(0)
    replica_rng.bit_generator.state = rng_state
    replica = UnpairedSampler(list(range(4)), list(range(4)), replica_rng)
    replica.restore(state)
    assert [replica.sample() for _ in range(6)] == expected


def test_mask_bank_fifo_and_restore():
    bank = MaskBank(capacity=3)
    masks = [torch.full((1, 1, 2, 2), float(i)) for i in range(5)]
    for mask in masks:
        bank.push(mask)
    assert len(bank) == 3
    stored = bank.snapshot()
    assert [float(m.flatten()[0]) for m in stored] == [2.0, 3.0, 4.0]
    rng = np.random.default_rng(0)
    drawn = bank.sample(rng)
    assert float(drawn.flatten()[0]) in {2.0, 3.0, 4.0}
    other = MaskBank(capacity=3)
    other.restore(stored)
    assert len(other) == 3


def test_mask_bank_sample_empty_raises():
    with pytest.raises(InvalidInputError):
        MaskBank(capacity=2).sample(np.random.default_rng(0))


def test_mask_bank_stores_detached_copies():
    bank = MaskBank(capacity=2)
    mask = torch.zeros(1, 1, 2, 2, requires_grad=True)
    bank.push(mask)
    stored = bank.snapshot()[0]
    assert not stored.requires_grad
    with torch.no_grad():
        mask.add_(1.0)
    assert float(stored.sum()) == 0.0


# ---------------------------------------------------------------------------
# Synthetic fixture
# ---------------------------------------------------------------------------


def test_fixture_triplets_satisfy_contracts():
    triplets = make_synthetic_fixture(8, 64, np.random.default_rng(0))
    assert len(triplets) == 8
    for free, shadow, mask in triplets:
        assert free.shape == (3, 64, 64) and shadow.shape == (3, 64, 64)
        assert mask.shape == (1, 64, 64)
        assert float(free.min()) >= 0.0 and float(free.max()) <= 1.0
        assert set(mask.unique().tolist()) == {0.0, 1.0}
        area = float(mask.mean())
        assert 0.05 < area < 0.5
        inside = mask.bool().expand_as(free)
        ratio = shadow[inside] / free[inside]
        assert float(ratio.min()) >= 0.3 - 1e-6
        assert float(ratio.max()) <= 0.7 + 1e-6
        outside = ~inside
        assert torch.equal(shadow[outside], free[outside])
        recovered = binarize_difference(free, shadow)
        intersection = float((recovered * mask).sum())
        union = float(((recovered + mask) > 0).sum())
        assert intersection / union > 0.8


def test_fixture_is_deterministic(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    write_fixture(a, count=3, size=32, seed=5)
    write_fixture(b, count=3, size=32, seed=5)
    for relative in ("train_A/0001.png", "train_B/0002.png", "train_C/0000.png"):
        assert (a / relative).read_bytes() == (b / relative).read_bytes()
    c = tmp_path / "c"
    write_fixture(c, count=3, size=32, seed=6)
    assert (a / "train_A/0000.png").read_bytes() != (c / "train_A/0000.png").read_bytes()


def test_fixture_rejects_tiny_sizes(tmp_path):
    with pytest.raises(InvalidInputError):
        write_fixture(tmp_path, count=1, size=16)
