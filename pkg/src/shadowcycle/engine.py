"""Training loop: cycle steps, replay buffers, optimizers, checkpoints.

The engine keeps every source of randomness in named streams (torch
global for dropout, one numpy generator per sampler/buffer/bank), all
captured in checkpoints, so an interrupted run resumed from disk is
step-identical to an uninterrupted one.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, fields as dataclass_fields
from itertools import chain
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from . import data as data_mod
from . import losses as losses_mod
from . import nets as nets_mod
from .errors import (
    ConfigurationError,
    ContractViolationError,
    CorruptionError,
    IncompatibilityError,
    InvalidInputError,
    NumericError,
)

CHECKPOINT_FORMAT = 1


# ---------------------------------------------------------------------------
# State containers
# ---------------------------------------------------------------------------


@dataclass
class CycleState:
    """Every tensor produced in one training cycle.

    Image tensors are model-range ``(N, 3, H, W)``; masks are
    ``(N, 1, H, W)``.  The ``removal_mask`` family holds soft values in
    ``[0, 1]``; take :func:`shadowcycle.losses.hard_mask` for the
    binary view.
    """

    real_free: Optional[torch.Tensor] = None  # u
    real_shadow: Optional[torch.Tensor] = None  # v
    mask_in: Optional[torch.Tensor] = None  # m (ground truth or bank sample)
    fake_free: Optional[torch.Tensor] = None  # G_f(v)
    fake_shadow: Optional[torch.Tensor] = None  # G_s(u + mask)
    removal_mask: Optional[torch.Tensor] = None  # soft Bin(fake_free - v)
    insertion_mask: Optional[torch.Tensor] = None  # soft Bin(fake_shadow - u)
    rec_free: Optional[torch.Tensor] = None
    rec_shadow: Optional[torch.Tensor] = None
    rec_removal_mask: Optional[torch.Tensor] = None
    rec_insertion_mask: Optional[torch.Tensor] = None
    bank_mask: Optional[torch.Tensor] = None  # sampled conditioning mask
    buffer_fake_free: Optional[torch.Tensor] = None  # negatives for D_s
    buffer_fake_shadow: Optional[torch.Tensor] = None  # negatives for D_f

    def require(self, name: str) -> torch.Tensor:
        value = getattr(self, name, None)
        if value is None:
            raise ContractViolationError(f"cycle state is missing required field {name!r}")
        return value

    def tensors(self) -> dict[str, torch.Tensor]:
        return {
            f.name: getattr(self, f.name)
            for f in dataclass_fields(self)
            if getattr(self, f.name) is not None
        }


@dataclass
class Networks:
    """The four trainable networks of one run."""

    g_f: nn.Module
    g_s: nn.Module
    d_f: nn.Module
    d_s: nn.Module

    def all(self) -> tuple[nn.Module, nn.Module, nn.Module, nn.Module]:
        return (self.g_f, self.g_s, self.d_f, self.d_s)

    def train(self) -> None:
        for network in self.all():
            network.train()

    def eval(self) -> None:
        for network in self.all():
            network.eval()


@dataclass
class TrainConfig:
    """Hyperparameters of one training run."""

    epochs: int = 100
    lr: float = 0.005
    decay_start_epoch: int = 40
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    batch_size: int = 1
    resolution: int = 256
    depth: int = 8
    regime: str = "unpaired"
    seed: int = 0
    init_std: float = 0.02
    mask_method: str = "median"
    mask_sharpness: float = 50.0
    color_sigma: float = 3.0
    buffer_capacity: int = 50
    buffer_swap_probability: float = 0.5
    bank_capacity: int = 64
    bank_bootstrap: str = "binarized"
    literal_reconstruction: bool = False
    beta2_standalone: bool = False
    weights: Optional[losses_mod.LossWeights] = None

    def __post_init__(self) -> None:
        if self.regime not in ("paired", "unpaired"):
            raise ConfigurationError(f"regime must be paired or unpaired, got {self.regime!r}")
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be positive, got {self.epochs}")
        if self.decay_start_epoch < 0:
            raise ConfigurationError(
                f"decay_start_epoch must be non-negative, got {self.decay_start_epoch}"
            )
        # Runs shorter than the decay horizon keep a constant rate.
        self.decay_start_epoch = min(self.decay_start_epoch, self.epochs)
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be positive, got {self.batch_size}")
        if self.resolution % (2 ** self.depth):
            raise ConfigurationError(
                f"resolution {self.resolution} is not a multiple of 2**depth = {2 ** self.depth}"
            )
        if self.mask_method not in ("median", "otsu"):
            raise ConfigurationError(f"unknown mask method {self.mask_method!r}")
        if self.bank_bootstrap not in ("binarized", "ground_truth"):
            raise ConfigurationError(f"unknown bank bootstrap {self.bank_bootstrap!r}")
        if not 0.0 <= self.buffer_swap_probability <= 1.0:
            raise ConfigurationError("buffer_swap_probability must lie in [0, 1]")
        if self.weights is None:
            self.weights = (
                losses_mod.LossWeights.paired()
                if self.regime == "paired"
                else losses_mod.LossWeights.unpaired()
            )

    def to_dict(self) -> dict:
        out = {}
        for f in dataclass_fields(self):
            if f.name == "weights":
                continue
            out[f.name] = getattr(self, f.name)
        for key, value in vars(self.weights).items():
            out[key] = value
        return out

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        weight_names = {f.name for f in dataclass_fields(losses_mod.LossWeights)}
        config_names = {f.name for f in dataclass_fields(cls)} - {"weights"}
        weight_kwargs = {k: v for k, v in values.items() if k in weight_names}
        config_kwargs = {k: v for k, v in values.items() if k in config_names}
        unknown = set(values) - weight_names - config_names
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        weights = losses_mod.LossWeights(**weight_kwargs) if weight_kwargs else None
        return cls(weights=weights, **config_kwargs)


# ---------------------------------------------------------------------------
# Replay buffer
# ---------------------------------------------------------------------------


class ReplayBuffer:
    """Bounded pool of past synthetic images for discriminator negatives.

    Each queried image is stored; with probability ``swap_probability``
    the caller receives an older stored entry instead of the fresh one,
    which keeps the discriminators from specializing to the latest
    generator output.
    """

    def __init__(
        self,
        capacity: int = 50,
        swap_probability: float = 0.5,
        rng: Optional[np.random.Generator] = None,
    ) -> None:
        if capacity < 1:
            raise ConfigurationError(f"buffer capacity must be positive, got {capacity}")
        if not 0.0 <= swap_probability <= 1.0:
            raise ConfigurationError(f"swap probability must lie in [0, 1], got {swap_probability}")
        self.capacity = capacity
        self.swap_probability = swap_probability
        self.entries: list[torch.Tensor] = []
        self._rng = rng if rng is not None else np.random.default_rng()

    def __len__(self) -> int:
        return len(self.entries)

    def query(self, batch: torch.Tensor) -> torch.Tensor:
        """Store a batch of fakes, returning a (possibly swapped) batch."""
        if batch.dim() != 4:
            raise InvalidInputError(f"expected a (N, C, H, W) batch, got {tuple(batch.shape)}")
        out = []
        for item in batch:
            item = item.detach().clone()
            if len(self.entries) < self.capacity:
                self.entries.append(item)
                out.append(item)
            elif float(self._rng.random()) < self.swap_probability:
                index = int(self._rng.integers(self.capacity))
                out.append(self.entries[index].clone())
                self.entries[index] = item
            else:
                out.append(item)
        return torch.stack(out)

    def snapshot(self) -> list[torch.Tensor]:
        return [entry.clone() for entry in self.entries]

    def restore(self, entries: Sequence[torch.Tensor]) -> None:
        self.entries = [entry.clone() for entry in entries]


class _EpochShuffler:
    """Permutation stream over dataset indices, reshuffled per pass."""

    def __init__(self, count: int, rng: np.random.Generator) -> None:
        if count < 1:
            raise ConfigurationError("cannot shuffle an empty dataset")
        self._count = count
        self._rng = rng
        self._order: list[int] = []

    def next(self) -> int:
        if not self._order:
            self._order = self._rng.permutation(self._count).tolist()
        return self._order.pop()

    def snapshot(self) -> dict:
        return {"order": list(self._order)}

    def restore(self, state: dict) -> None:
        self._order = list(state["order"])


# ---------------------------------------------------------------------------
# Cycle steps
# ---------------------------------------------------------------------------


def forward_step(
    free_image: torch.Tensor,
    shadow_image: torch.Tensor,
    mask: torch.Tensor,
    g_f: nn.Module,
    g_s: nn.Module,
    sharpness: float = 50.0,
) -> CycleState:
    """First half of the cycle: cross-domain generation plus soft masks.

    ``mask`` conditions the insertion generator: the ground-truth mask
    in paired mode, a bank sample in unpaired mode.
    """
    if free_image.shape != shadow_image.shape:
        raise InvalidInputError(
            f"image shapes differ: {tuple(free_image.shape)} vs {tuple(shadow_image.shape)}"
        )
    if mask.dim() != 4 or mask.shape[1] != 1 or mask.shape[-2:] != free_image.shape[-2:]:
        raise InvalidInputError(f"mask shape {tuple(mask.shape)} does not match the images")
    state = CycleState(real_free=free_image, real_shadow=shadow_image, mask_in=mask)
    state.fake_free = g_f(shadow_image)
    state.fake_shadow = g_s(torch.cat([free_image, mask], dim=1))
    state.removal_mask = losses_mod.soft_shadow_mask(state.fake_free, shadow_image, sharpness)
    state.insertion_mask = losses_mod.soft_shadow_mask(state.fake_shadow, free_image, sharpness)
    return state


def reconstruction_step(
    state: CycleState,
    g_f: nn.Module,
    g_s: nn.Module,
    sharpness: float = 50.0,
    literal_wiring: bool = False,
) -> CycleState:
    """Second half of the cycle: map the fakes back to their origins.

    ``literal_wiring`` reconstructs the shadow-free image from the fake
    shadow-free image instead of the fake shadow image; kept selectable
    because both readings appear in the method's description, but only
    the default closes the cycle.
    """
    fake_free = state.require("fake_free")
    fake_shadow = state.require("fake_shadow")
    removal_mask = state.require("removal_mask")
    source = fake_free if literal_wiring else fake_shadow
    state.rec_free = g_f(source)
    state.rec_shadow = g_s(torch.cat([fake_free, removal_mask], dim=1))
    state.rec_removal_mask = losses_mod.soft_shadow_mask(state.rec_free, fake_shadow, sharpness)
    state.rec_insertion_mask = losses_mod.soft_shadow_mask(fake_free, state.rec_shadow, sharpness)
    return state


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Constant learning rate, then linear decay to zero at the last epoch."""
    if epoch < 0 or epoch > config.epochs:
        raise InvalidInputError(f"epoch {epoch} outside [0, {config.epochs}]")
    if epoch < config.decay_start_epoch:
        return config.lr
    span = config.epochs - config.decay_start_epoch
    if span == 0:  # decay clamped away; only the boundary epoch lands here
        return 0.0
    return config.lr * (1.0 - (epoch - config.decay_start_epoch) / span)


def build_networks(config: TrainConfig) -> Networks:
    """Construct and Gaussian-initialize all four networks from the seed."""
    rng = torch.Generator().manual_seed(config.seed)
    return Networks(
        g_f=nets_mod.build_generator(3, config.depth, config.init_std, rng),
        g_s=nets_mod.build_generator(4, config.depth, config.init_std, rng),
        d_f=nets_mod.build_discriminator(6, config.init_std, rng),
        d_s=nets_mod.build_discriminator(6, config.init_std, rng),
    )


# ---------------------------------------------------------------------------
# Trainer
# ---------------------------------------------------------------------------


class Trainer:
    """Owns networks, optimizers, buffers, and the step/epoch loop.

    With ``run_dir`` set, writes ``manifest.txt`` once, appends one CSV
    row per step to ``train_log.csv``, and saves ``ckpt_<epoch>.bin``
    at each epoch end.  Without it, trains purely in memory.
    """

    def __init__(
        self,
        config: TrainConfig,
        dataset: data_mod.ShadowDataset,
        run_dir: Optional[Path | str] = None,
        fx: Optional[losses_mod.FeatureExtractor] = None,
    ) -> None:
        if config.regime == "paired" and not dataset.paired:
            raise ConfigurationError("paired regime requires a fully paired dataset")
        self.config = config
        self.dataset = dataset
        self.fx = fx if fx is not None else losses_mod.ConvFeatureExtractor(seed=config.seed)
        self._fx_kind = "custom" if fx is not None else "conv"
        torch.manual_seed(config.seed)
        self.nets = build_networks(config)
        self.fingerprint = nets_mod.architecture_fingerprint(config.depth)
        betas = (config.adam_beta1, config.adam_beta2)
        self.opt_g = torch.optim.Adam(
            chain(self.nets.g_f.parameters(), self.nets.g_s.parameters()),
            lr=config.lr,
            betas=betas,
        )
        self.opt_d_f = torch.optim.Adam(self.nets.d_f.parameters(), lr=config.lr, betas=betas)
        self.opt_d_s = torch.optim.Adam(self.nets.d_s.parameters(), lr=config.lr, betas=betas)
        streams = np.random.SeedSequence(config.seed).spawn(4)
        self._sampler_rng = np.random.default_rng(streams[0])
        self.buffer_fake_free = ReplayBuffer(
            config.buffer_capacity, config.buffer_swap_probability, np.random.default_rng(streams[1])
        )
        self.buffer_fake_shadow = ReplayBuffer(
            config.buffer_capacity, config.buffer_swap_probability, np.random.default_rng(streams[2])
        )
        self.bank = data_mod.MaskBank(config.bank_capacity)
        self._bank_rng = np.random.default_rng(streams[3])
        self._build_samplers()
        self.epoch = 0
        self.step = 0
        self._steps_into_epoch = 0
        self._lr_now = config.lr
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self._log_writer = None
        self._log_file = None
        if self.run_dir is not None:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            self._write_manifest()

    # -- setup ------------------------------------------------------------

    def _build_samplers(self) -> None:
        dataset = self.dataset
        if self.config.regime == "paired":
            self._shuffler = _EpochShuffler(len(dataset), self._sampler_rng)
            self._epoch_length = len(dataset)
            self._unpaired_sampler = None
        else:
            shadow_items = list(range(len(dataset)))
            if dataset.free_pool:
                free_items: list = list(dataset.free_pool)
            elif dataset.paired:
                free_items = list(range(len(dataset)))
            else:
                raise ConfigurationError(
                    "unpaired training needs a shadow-free pool or paired samples"
                )
            self._free_is_path = bool(dataset.free_pool)
            self._unpaired_sampler = data_mod.UnpairedSampler(
                free_items, shadow_items, self._sampler_rng
            )
            self._epoch_length = len(shadow_items)
            self._shuffler = None
        self._epoch_length = max(1, math.ceil(self._epoch_length / self.config.batch_size))

    def _write_manifest(self) -> None:
        path = self.run_dir / "manifest.txt"
        if path.exists():
            return  # manifests are immutable within a run directory
        lines = [
            "# shadowcycle run manifest",
            f"created = {time.strftime('%Y-%m-%dT%H:%M:%S')}",
            f"code_version = {_package_version()}",
            f"architecture_fingerprint = {self.fingerprint}",
            f"dataset_root = {self.dataset.root}",
            f"dataset_layout = {self.dataset.layout}",
            f"dataset_size = {len(self.dataset)}",
            "",
            "# configuration",
        ]
        for key, value in sorted(self.config.to_dict().items()):
            lines.append(f"{key} = {value}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    # -- data -------------------------------------------------------------

    def _load_free_image(self, item) -> torch.Tensor:
        if self._free_is_path:
            return data_mod.resize_image(data_mod.load_image(item), self.config.resolution)
        return self.dataset[item].shadow_free(self.config.resolution)

    def _conditioning_mask(self, free01: torch.Tensor, shadow01: torch.Tensor, shadow_index: int) -> torch.Tensor:
        """Pick the mask fed to the insertion generator for one item."""
        config = self.config
        if len(self.bank) > 0:
            return self.bank.sample(self._bank_rng)
        if config.bank_bootstrap == "ground_truth":
            sample = self.dataset[shadow_index]
            if sample.mask_path is not None or sample.paired:
                return sample.mask(config.resolution, method=config.mask_method)
        return data_mod.binarize_difference(free01, shadow01, method=config.mask_method)

    def next_batch(self) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Assemble one (free, shadow, mask) batch in model range."""
        config = self.config
        frees, shadows, masks = [], [], []
        for _ in range(config.batch_size):
            if config.regime == "paired":
                index = self._shuffler.next()
                sample = self.dataset[index]
                free01 = sample.shadow_free(config.resolution)
                shadow01 = sample.shadow(config.resolution)
                mask = sample.mask(config.resolution, method=config.mask_method)
            else:
                free_item, shadow_index = self._unpaired_sampler.sample()
                free01 = self._load_free_image(free_item)
                shadow01 = self.dataset[shadow_index].shadow(config.resolution)
                mask = self._conditioning_mask(free01, shadow01, shadow_index)
            frees.append(data_mod.to_model_range(free01))
            shadows.append(data_mod.to_model_range(shadow01))
            masks.append(mask)
        return torch.stack(frees), torch.stack(shadows), torch.stack(masks)

    # -- stepping ---------------------------------------------------------

    def train_step(self, batch: tuple[torch.Tensor, torch.Tensor, torch.Tensor]) -> dict:
        """One optimization step over a (free, shadow, mask) batch."""
        config = self.config
        self.nets.train()
        free, shadow, mask = batch
        state = forward_step(
            free, shadow, mask, self.nets.g_f, self.nets.g_s, config.mask_sharpness
        )
        reconstruction_step(
            state,
            self.nets.g_f,
            self.nets.g_s,
            config.mask_sharpness,
            literal_wiring=config.literal_reconstruction,
        )
        state.bank_mask = mask
        state.buffer_fake_free = self.buffer_fake_free.query(state.fake_free)
        state.buffer_fake_shadow = self.buffer_fake_shadow.query(state.fake_shadow)
        for item in losses_mod.hard_mask(state.removal_mask.detach()):
            self.bank.push(item)

        total_fn = (
            losses_mod.total_loss_paired
            if config.regime == "paired"
            else losses_mod.total_loss_unpaired
        )
        nets_mod.set_requires_grad(self.nets.d_f, False)
        nets_mod.set_requires_grad(self.nets.d_s, False)
        total, breakdown = total_fn(
            state,
            self.nets,
            config.weights,
            self.fx,
            sigma=config.color_sigma,
            beta2_standalone=config.beta2_standalone,
        )
        self._guard_finite("gen_total", float(total.detach()))
        for name, value in breakdown.items():
            self._guard_finite(name, value)
        self.opt_g.zero_grad(set_to_none=True)
        if total.requires_grad:
            total.backward()
            self.opt_g.step()
        nets_mod.set_requires_grad(self.nets.d_f, True)
        nets_mod.set_requires_grad(self.nets.d_s, True)

        disc_free = losses_mod.gan_loss_discriminator(
            self.nets.d_f, free, free, state.buffer_fake_shadow
        )
        self._guard_finite("disc_free", float(disc_free.detach()))
        self.opt_d_f.zero_grad(set_to_none=True)
        disc_free.backward()
        self.opt_d_f.step()

        disc_shadow = losses_mod.gan_loss_discriminator(
            self.nets.d_s, shadow, shadow, state.buffer_fake_free
        )
        self._guard_finite("disc_shadow", float(disc_shadow.detach()))
        self.opt_d_s.zero_grad(set_to_none=True)
        disc_shadow.backward()
        self.opt_d_s.step()

        report = {"step": self.step, "epoch": self.epoch, "lr": self._lr_now}
        report["gen_total"] = float(total.detach())
        report.update(breakdown)
        report["disc_free"] = float(disc_free.detach())
        report["disc_shadow"] = float(disc_shadow.detach())
        report["buffer_free_size"] = len(self.buffer_fake_free)
        report["buffer_shadow_size"] = len(self.buffer_fake_shadow)
        report["bank_size"] = len(self.bank)
        self.step += 1
        self._steps_into_epoch += 1
        self._log_row(report)
        return report

    def _guard_finite(self, name: str, value: float) -> None:
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss component {name!r}: {value}")

    def _set_lr(self, value: float) -> None:
        self._lr_now = value
        for optimizer in (self.opt_g, self.opt_d_f, self.opt_d_s):
            for group in optimizer.param_groups:
                group["lr"] = value

    def fit(self, max_steps: Optional[int] = None) -> list[dict]:
        """Run epochs until ``config.epochs`` or ``max_steps`` train steps.

        Returns the per-step reports of this call.
        """
        reports: list[dict] = []
        steps_done = 0
        while self.epoch < self.config.epochs:
            if self._steps_into_epoch == 0:
                self._set_lr(lr_schedule(self.epoch, self.config))
            while self._steps_into_epoch < self._epoch_length:
                if max_steps is not None and steps_done >= max_steps:
                    return reports
                reports.append(self.train_step(self.next_batch()))
                steps_done += 1
            self.epoch += 1
            self._steps_into_epoch = 0
            if self.run_dir is not None:
                self.save_checkpoint(self.run_dir / f"ckpt_{self.epoch}.bin")
        if self.run_dir is not None:
            (self.run_dir / "completed.txt").write_text(
                f"completed = {time.strftime('%Y-%m-%dT%H:%M:%S')}\n", encoding="utf-8"
            )
        return reports

    # -- logging ----------------------------------------------------------

    def _log_row(self, report: dict) -> None:
        if self.run_dir is None:
            return
        if self._log_writer is None:
            path = self.run_dir / "train_log.csv"
            new_file = not path.exists()
            self._log_file = open(path, "a", newline="", encoding="utf-8")
            self._log_writer = csv.DictWriter(self._log_file, fieldnames=list(report))
            if new_file:
                self._log_writer.writeheader()
        self._log_writer.writerow(report)
        self._log_file.flush()

    def close(self) -> None:
        if self._log_file is not None:
            self._log_file.close()
            self._log_file = None
            self._log_writer = None

    # -- checkpointing ----------------------------------------------------

    def _rng_payload(self) -> dict:
        return {
            "torch": torch.get_rng_state(),
            "sampler": self._sampler_rng.bit_generator.state,
            "buffer_free": self.buffer_fake_free._rng.bit_generator.state,
            "buffer_shadow": self.buffer_fake_shadow._rng.bit_generator.state,
            "bank": self._bank_rng.bit_generator.state,
        }

    def _restore_rngs(self, payload: dict) -> None:
        torch.set_rng_state(payload["torch"])
        self._sampler_rng.bit_generator.state = payload["sampler"]
        self.buffer_fake_free._rng.bit_generator.state = payload["buffer_free"]
        self.buffer_fake_shadow._rng.bit_generator.state = payload["buffer_shadow"]
        self._bank_rng.bit_generator.state = payload["bank"]

    def save_checkpoint(self, path: Path | str) -> Path:
        """Write the complete run state as one archive."""
        path = Path(path)
        sampler_state = (
            self._shuffler.snapshot() if self._shuffler is not None
            else self._unpaired_sampler.snapshot()
        )
        payload = {
            "format_version": CHECKPOINT_FORMAT,
            "generator_kind": "unet",
            "fingerprint": self.fingerprint,
            "config": self.config.to_dict(),
            "epoch": self.epoch,
            "step": self.step,
            "steps_into_epoch": self._steps_into_epoch,
            "nets": {
                "g_f": self.nets.g_f.state_dict(),
                "g_s": self.nets.g_s.state_dict(),
                "d_f": self.nets.d_f.state_dict(),
                "d_s": self.nets.d_s.state_dict(),
            },
            "optimizers": {
                "g": self.opt_g.state_dict(),
                "d_f": self.opt_d_f.state_dict(),
                "d_s": self.opt_d_s.state_dict(),
            },
            "rngs": self._rng_payload(),
            "buffers": {
                "fake_free": self.buffer_fake_free.snapshot(),
                "fake_shadow": self.buffer_fake_shadow.snapshot(),
            },
            "bank": self.bank.snapshot(),
            "sampler": sampler_state,
            "fx_kind": self._fx_kind,
        }
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, path)
        return path

    def load_checkpoint(self, path: Path | str) -> None:
        """Restore a checkpoint into this trainer (architecture must match)."""
        payload = read_checkpoint(path)
        if payload["fingerprint"] != self.fingerprint:
            raise IncompatibilityError(
                f"checkpoint architecture {payload['fingerprint']} does not match "
                f"this trainer ({self.fingerprint})"
            )
        self.nets.g_f.load_state_dict(payload["nets"]["g_f"])
        self.nets.g_s.load_state_dict(payload["nets"]["g_s"])
        self.nets.d_f.load_state_dict(payload["nets"]["d_f"])
        self.nets.d_s.load_state_dict(payload["nets"]["d_s"])
        self.opt_g.load_state_dict(payload["optimizers"]["g"])
        self.opt_d_f.load_state_dict(payload["optimizers"]["d_f"])
        self.opt_d_s.load_state_dict(payload["optimizers"]["d_s"])
        self.epoch = payload["epoch"]
        self.step = payload["step"]
        self._steps_into_epoch = payload["steps_into_epoch"]
        if self._shuffler is not None:
            self._shuffler.restore(payload["sampler"])
        else:
            self._unpaired_sampler.restore(payload["sampler"])
        self.buffer_fake_free.restore(payload["buffers"]["fake_free"])
        self.buffer_fake_shadow.restore(payload["buffers"]["fake_shadow"])
        self.bank.restore(payload["bank"])
        self._restore_rngs(payload["rngs"])
        self._set_lr(lr_schedule(min(self.epoch, self.config.epochs), self.config))

    @classmethod
    def resume(
        cls,
        checkpoint_path: Path | str,
        dataset: data_mod.ShadowDataset,
        run_dir: Optional[Path | str] = None,
        fx: Optional[losses_mod.FeatureExtractor] = None,
    ) -> "Trainer":
        """Rebuild a trainer from a checkpoint and continue its run."""
        payload = read_checkpoint(checkpoint_path)
        if payload.get("generator_kind") != "unet":
            raise IncompatibilityError("only full training checkpoints can be resumed")
        config = TrainConfig.from_dict(payload["config"])
        trainer = cls(config, dataset, run_dir=run_dir, fx=fx)
        trainer.load_checkpoint(checkpoint_path)
        return trainer


def _package_version() -> str:
    from . import __version__

    return __version__


def read_checkpoint(path: Path | str) -> dict:
    """Load and structurally validate a checkpoint archive."""
    path = Path(path)
    if not path.is_file():
        raise CorruptionError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CorruptionError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "nets" not in payload or "config" not in payload:
        raise CorruptionError(f"checkpoint {path} is missing required sections")
    return payload


def make_identity_checkpoint(path: Path | str, config: Optional[TrainConfig] = None) -> Path:
    """Write a debug checkpoint whose generators pass images through.

    Useful for exercising inference and evaluation plumbing with a
    known do-nothing model.
    """
    if config is None:
        config = TrainConfig(resolution=256, depth=8)
    path = Path(path)
    payload = {
        "format_version": CHECKPOINT_FORMAT,
        "generator_kind": "identity",
        "fingerprint": "identity",
        "config": config.to_dict(),
        "epoch": 0,
        "step": 0,
        "nets": {
            "g_f": nets_mod.IdentityGenerator(3).state_dict(),
            "g_s": nets_mod.IdentityGenerator(4).state_dict(),
        },
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return path


def load_removal_generator(path: Path | str) -> tuple[nn.Module, TrainConfig, str]:
    """Load the shadow-removal generator from a checkpoint for inference.

    Returns the evaluation-mode network, the stored config, and the
    generator kind (``unet`` or ``identity``).
    """
    payload = read_checkpoint(path)
    config = TrainConfig.from_dict(payload["config"])
    kind = payload.get("generator_kind", "unet")
    if kind == "identity":
        generator: nn.Module = nets_mod.IdentityGenerator(3)
    elif kind == "unet":
        if payload.get("fingerprint") != nets_mod.architecture_fingerprint(config.depth):
            raise IncompatibilityError(
                "checkpoint fingerprint does not match its declared architecture"
            )
        generator = nets_mod.UNetGenerator(3, config.depth)
    else:
        raise CorruptionError(f"unknown generator kind {kind!r}")
    try:
        generator.load_state_dict(payload["nets"]["g_f"])
    except (KeyError, RuntimeError) as exc:
        raise IncompatibilityError(f"checkpoint does not fit the generator: {exc}") from exc
    generator.eval()
    return generator, config, kind
