"""Training loop: patch preparation, mirroring, the Adam-to-SGD schedule.

Optimisation starts with Adam and switches to mini-batch SGD after a
configurable number of epochs (fresh SGD state, nothing carried over).
The learning rate follows a decay staircase: base_lr * factor^((e-1)//every).
Patch order and augmentation are driven by seeded generators so a run is
reproducible end to end; a non-finite loss aborts immediately with the
offending epoch and step.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .exceptions import NumericError
from .gt import GtConfig, downsample_density, downsample_mask
from .losses import LossConfig, variant_loss
from .model import MaskAwareNet, save_checkpoint

Triple = tuple[np.ndarray, np.ndarray, np.ndarray]  # patch, gt density, gt mask


@dataclass
class TrainSchedule:
    """Optimiser schedule; defaults follow the published recipe."""

    adam_epochs: int = 10
    base_lr: float = 1e-5
    decay_factor: float = 0.1
    decay_every: int = 20
    total_epochs: int = 50
    batch_size: int = 16
    seed: int = 0
    sgd_momentum: float = 0.9

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must be in (0, 1]")
        if self.decay_every < 1:
            raise ValueError("decay_every must be >= 1")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")
        if not 0 <= self.adam_epochs <= self.total_epochs:
            raise ValueError("adam_epochs must lie in [0, total_epochs]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def lr_at(self, epoch: int) -> float:
        return self.base_lr * self.decay_factor ** ((epoch - 1) // self.decay_every)

    def optimizer_at(self, epoch: int) -> str:
        return "adam" if epoch <= self.adam_epochs else "sgd"


@dataclass
class EpochStats:
    epoch: int
    lr: float
    optimizer: str
    loss_mask: float
    loss_density: float
    loss_total: float
    train_mae: float
    val_mae: float | None
    wall_seconds: float


@dataclass
class TrainResult:
    epochs: list[EpochStats] = field(default_factory=list)
    best_val_mae: float | None = None
    best_epoch: int | None = None

    @property
    def final(self) -> EpochStats:
        return self.epochs[-1]


LOG_COLUMNS = [
    "epoch",
    "lr",
    "optimizer",
    "loss_mask",
    "loss_density",
    "loss_total",
    "train_mae",
    "val_mae",
    "wall_seconds",
]


# ---------------------------------------------------------------------------
# patch preparation


def crop_patches(
    image: np.ndarray,
    gt_density: np.ndarray,
    gt_mask: np.ndarray,
    n: int,
    size: tuple[int, int],
    rng: np.random.Generator,
) -> list[Triple]:
    """Randomly crop ``n`` aligned (image, density, mask) patches.

    ``size`` is (width, height). Top-left corners are sampled uniformly so
    the crop fits. Images smaller than the crop are reflect-padded on the
    bottom/right; density and mask get zero padding instead, so a crop's
    integral stays the kernel mass that genuinely falls inside it.
    """
    if n <= 0:
        raise ValueError("number of patches must be positive")
    cw, ch = size
    h, w = image.shape
    pad_h, pad_w = max(0, ch - h), max(0, cw - w)
    if pad_h or pad_w:
        image = np.pad(image, ((0, pad_h), (0, pad_w)), mode="reflect")
        gt_density = np.pad(gt_density, ((0, pad_h), (0, pad_w)))
        gt_mask = np.pad(gt_mask, ((0, pad_h), (0, pad_w)))
        h, w = image.shape
    patches = []
    for _ in range(n):
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))
        patches.append(
            (
                image[top : top + ch, left : left + cw].copy(),
                gt_density[top : top + ch, left : left + cw].copy(),
                gt_mask[top : top + ch, left : left + cw].copy(),
            )
        )
    return patches


def augment(
    patch: np.ndarray,
    gt_density: np.ndarray,
    gt_mask: np.ndarray,
    rng: np.random.Generator,
) -> Triple:
    """Mirror the patch and its GT together with probability 0.5."""
    if rng.random() < 0.5:
        return (
            np.ascontiguousarray(patch[:, ::-1]),
            np.ascontiguousarray(gt_density[:, ::-1]),
            np.ascontiguousarray(gt_mask[:, ::-1]),
        )
    return patch, gt_density, gt_mask


def to_output_stride(triples: Sequence[Triple], factor: int) -> list[Triple]:
    """Downsample the GT of full-resolution triples to the network stride."""
    return [
        (img, downsample_density(den, factor), downsample_mask(msk, factor))
        for img, den, msk in triples
    ]


def make_train_patches(
    entries,
    gt_cfg: GtConfig,
    patches_per_image: int,
    patch_size: tuple[int, int],
    rng: np.random.Generator,
) -> list[Triple]:
    """Crop training patches from loaded entries and match the output stride."""
    triples: list[Triple] = []
    for entry in entries:
        crops = crop_patches(
            entry.image, entry.density, entry.mask, patches_per_image, patch_size, rng
        )
        triples.extend(to_output_stride(crops, gt_cfg.downsample))
    return triples


def make_eval_triples(entries, gt_cfg: GtConfig) -> list[Triple]:
    """Whole images with stride-matched GT, for validation passes."""
    return [
        (e.image, downsample_density(e.density, gt_cfg.downsample),
         downsample_mask(e.mask, gt_cfg.downsample))
        for e in entries
    ]


# ---------------------------------------------------------------------------
# the loop


def _batch_tensors(triples: Sequence[Triple]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    imgs = torch.from_numpy(np.stack([t[0] for t in triples])[:, None].astype(np.float32))
    dens = torch.from_numpy(np.stack([t[1] for t in triples])[:, None].astype(np.float32))
    masks = torch.from_numpy(np.stack([t[2] for t in triples])[:, None].astype(np.float32))
    return imgs, dens, masks


def validation_mae(model: MaskAwareNet, val_set: Sequence[Triple]) -> float:
    """Mean absolute count error of eval-mode predictions over a triple set."""
    was_training = model.training
    model.eval()
    errors = []
    with torch.no_grad():
        for img, den, _ in val_set:
            x = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32))[None, None]
            pred = model(x).density
            errors.append(abs(float(pred.sum()) - float(den.sum())))
    model.train(was_training)
    return float(np.mean(errors))


def train(
    model: MaskAwareNet,
    train_set: Sequence[Triple],
    schedule: TrainSchedule,
    loss_cfg: LossConfig | None = None,
    val_set: Sequence[Triple] | None = None,
    out_dir=None,
    log_every: int = 0,
    checkpoint_extra: dict | None = None,
    stop_when=None,
) -> TrainResult:
    """Train in place; returns per-epoch statistics.

    ``train_set`` triples must already be at the network output stride.
    When ``out_dir`` is given, a checkpoint is written every epoch
    (checkpoints/last.npz), the best-validation model is kept separately,
    and the epoch log lands in log.csv. ``stop_when`` is an optional
    early-stop predicate over the epoch's EpochStats.
    """
    if not train_set:
        raise ValueError("train_set must not be empty")
    loss_cfg = loss_cfg or LossConfig()
    torch.manual_seed(schedule.seed)

    log_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "log.csv"
        with open(log_path, "w", newline="") as fh:
            csv.writer(fh).writerow(LOG_COLUMNS)

    result = TrainResult()
    optimizer = None
    current_kind = None
    for epoch in range(1, schedule.total_epochs + 1):
        start = time.perf_counter()
        kind = schedule.optimizer_at(epoch)
        lr = schedule.lr_at(epoch)
        if kind != current_kind:
            # fresh optimiser at the switch: Adam state is deliberately dropped
            if kind == "adam":
                optimizer = torch.optim.Adam(model.parameters(), lr=lr, betas=(0.9, 0.999))
            else:
                optimizer = torch.optim.SGD(
                    model.parameters(), lr=lr, momentum=schedule.sgd_momentum
                )
            current_kind = kind
        for group in optimizer.param_groups:
            group["lr"] = lr

        rng = np.random.default_rng([schedule.seed, epoch])
        order = rng.permutation(len(train_set))
        model.train()
        sums = {"mask": 0.0, "density": 0.0, "total": 0.0}
        abs_errors: list[float] = []
        n_batches = 0
        for step, lo in enumerate(range(0, len(order), schedule.batch_size)):
            batch = [augment(*train_set[i], rng) for i in order[lo : lo + schedule.batch_size]]
            imgs, dens, masks = _batch_tensors(batch)
            output = model(imgs, gt_mask=masks)
            total, aux_term, density_term = variant_loss(
                model.variant, output, masks, dens, loss_cfg
            )
            if not torch.isfinite(total):
                raise NumericError(
                    f"non-finite loss {total.item()!r} at epoch {epoch}, step {step}",
                    epoch=epoch,
                    step=step,
                )
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            sums["mask"] += float(aux_term.detach())
            sums["density"] += float(density_term.detach())
            sums["total"] += float(total.detach())
            n_batches += 1
            per_image = (output.density.detach().sum(dim=(1, 2, 3)) - dens.sum(dim=(1, 2, 3)))
            abs_errors.extend(abs(float(e)) for e in per_image)

        val_mae = validation_mae(model, val_set) if val_set else None
        stats = EpochStats(
            epoch=epoch,
            lr=lr,
            optimizer=kind,
            loss_mask=sums["mask"] / n_batches,
            loss_density=sums["density"] / n_batches,
            loss_total=sums["total"] / n_batches,
            train_mae=float(np.mean(abs_errors)),
            val_mae=val_mae,
            wall_seconds=time.perf_counter() - start,
        )
        result.epochs.append(stats)

        if out_dir is not None:
            extra = dict(checkpoint_extra or {})
            extra.update({"train_mae": stats.train_mae, "val_mae": val_mae})
            save_checkpoint(
                out_dir / "checkpoints" / "last.npz",
                model,
                epoch=epoch,
                seed=schedule.seed,
                extra=extra,
            )
            if val_mae is not None and (
                result.best_val_mae is None or val_mae < result.best_val_mae
            ):
                result.best_val_mae, result.best_epoch = val_mae, epoch
                save_checkpoint(
                    out_dir / "checkpoints" / "best.npz",
                    model,
                    epoch=epoch,
                    seed=schedule.seed,
                    extra=extra,
                )
            with open(log_path, "a", newline="") as fh:
                csv.writer(fh).writerow(
                    [
                        stats.epoch,
                        repr(stats.lr),
                        stats.optimizer,
                        repr(stats.loss_mask),
                        repr(stats.loss_density),
                        repr(stats.loss_total),
                        repr(stats.train_mae),
                        "" if val_mae is None else repr(val_mae),
                        f"{stats.wall_seconds:.3f}",
                    ]
                )
        elif val_mae is not None and (
            result.best_val_mae is None or val_mae < result.best_val_mae
        ):
            result.best_val_mae, result.best_epoch = val_mae, epoch

        if log_every and epoch % log_every == 0:
            msg = (
                f"[epoch {epoch:4d}] {kind} lr={lr:.2e} "
                f"loss={stats.loss_total:.4f} train_mae={stats.train_mae:.3f}"
            )
            if val_mae is not None:
                msg += f" val_mae={val_mae:.3f}"
            print(msg)
        if stop_when is not None and stop_when(stats):
            break
    return result
