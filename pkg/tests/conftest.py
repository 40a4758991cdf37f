"""Shared fixtures: synthetic datasets, tiny train configs, a CLI runner."""

from __future__ import annotations

import subprocess
import sys

import pytest

from shadowcycle import TrainConfig, load_dataset, write_fixture


@pytest.fixture(scope="session")
def fixture_root(tmp_path_factory):
    """Root of the canonical 8-image 64x64 synthetic dataset."""
    root = tmp_path_factory.mktemp("fixture64")
    write_fixture(root, count=8, size=64, seed=0)
    return root


@pytest.fixture(scope="session")
def fixture_dataset(fixture_root):
    return load_dataset(fixture_root, layout="istd", split="train")


@pytest.fixture(scope="session")
def small_root(tmp_path_factory):
    """A 4-image 32x32 dataset for fast engine-level tests."""
    root = tmp_path_factory.mktemp("fixture32")
    write_fixture(root, count=4, size=32, seed=1)
    return root


@pytest.fixture(scope="session")
def small_dataset(small_root):
    return load_dataset(small_root, layout="istd", split="train")


def tiny_config(**overrides) -> TrainConfig:
    values = dict(
        epochs=2,
        lr=1e-3,
        batch_size=1,
        resolution=32,
        depth=3,
        regime="unpaired",
        seed=0,
    )
    values.update(overrides)
    return TrainConfig(**values)


@pytest.fixture
def make_config():
    return tiny_config


def run_cli(args, cwd=None) -> subprocess.CompletedProcess:
    return subprocess.run(
        [sys.executable, "-m", "shadowcycle", *map(str, args)],
        capture_output=True,
        text=True,
        cwd=cwd,
        timeout=600,
    )


@pytest.fixture(scope="session")
def cli():
    return run_cli
