"""Patch-based training loop: sampling, augmentation, SGD schedule, checkpoints.

Optimization is plain SGD with heavy-ball momentum and L2 weight decay
under a polynomial learning-rate decay. Each present modality can
additionally be dropped per case during training (zeroed and masked) so
the network learns under synthetic absence.

Reproducibility: all per-epoch randomness is drawn from a generator
seeded by (seed, epoch), so two runs with the same seed produce identical
histories, and a run resumed at an epoch boundary continues exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .errors import (
    NoLabelError,
    NonFiniteLossError,
    OutOfRangeEpochError,
    ShapeError,
)
from .losses import LossWeights, combined_loss
from .metrics import confusion_metrics
from .network import F3NetModel, load_checkpoint, save_checkpoint
from .volumes import Modality, MultiModalCase, NUM_MODALITIES

HISTORY_HEADER = ("epoch", "lr", "mean_loss", "train_dsc")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the training loop."""

    batch_size: int = 2
    patch_shape: tuple[int, int, int] = (80, 112, 80)
    momentum: float = 0.95
    weight_decay: float = 3e-5
    initial_lr: float = 0.01
    poly_power: float = 0.9
    max_epochs: int = 1000
    steps_per_epoch: int = 250
    loss_weights: LossWeights = field(default_factory=LossWeights)
    augment: bool = True
    flip_prob: float = 0.5
    rot90_prob: float = 0.25
    intensity_scale_prob: float = 0.15
    intensity_scale_range: tuple[float, float] = (0.9, 1.1)
    foreground_prob: float = 1.0 / 3.0
    modality_drop_prob: float = 0.2
    nesterov: bool = False
    seed: int = 0
    deterministic: bool = False
    mask_scope: str = "all_stages"

    def __post_init__(self):
        if len(self.patch_shape) != 3 or any(int(n) < 1 for n in self.patch_shape):
            raise ShapeError(f"patch_shape must be three positive ints, got {self.patch_shape}")
        object.__setattr__(self, "patch_shape", tuple(int(n) for n in self.patch_shape))
        if self.batch_size < 1 or self.steps_per_epoch < 1:
            raise ShapeError("batch_size and steps_per_epoch must be >= 1")
        if self.max_epochs < 0:
            raise ShapeError("max_epochs must be >= 0")
        for name in ("momentum", "weight_decay", "initial_lr", "poly_power",
                     "flip_prob", "rot90_prob", "intensity_scale_prob",
                     "foreground_prob", "modality_drop_prob"):
            if getattr(self, name) < 0:
                raise ShapeError(f"{name} must be nonnegative")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Polynomial decay: ``initial_lr * (1 - epoch/max_epochs) ** poly_power``."""
    if cfg.max_epochs < 1 or not 0 <= epoch <= cfg.max_epochs:
        raise OutOfRangeEpochError(f"epoch {epoch} outside [0, {cfg.max_epochs}]")
    return cfg.initial_lr * (1.0 - epoch / cfg.max_epochs) ** cfg.poly_power


def _pad_to_patch(data: np.ndarray, patch_shape, pad_value=0):
    spatial = data.shape[-3:]
    pads = []
    for dim, want in zip(spatial, patch_shape):
        total = max(0, want - dim)
        pads.append((total // 2, total - total // 2))
    if data.ndim == 4:
        pads = [(0, 0)] + pads
    if any(p != (0, 0) for p in pads):
        data = np.pad(data, pads, mode="constant", constant_values=pad_value)
    return data


def sample_patch(case: MultiModalCase, cfg: TrainConfig, rng: np.random.Generator):
    """Crop one training patch and its label patch.

    With probability ``foreground_prob`` the crop is centered on a random
    foreground voxel (when any exists); otherwise the location is uniform.
    Volumes smaller than the patch are zero-padded symmetrically, labels
    padded with background.

    Returns:
        (patch, target): float32 (6, *patch_shape) and the integer label
        patch of shape ``patch_shape``.

    Raises:
        NoLabelError: the case has no ground-truth label.
    """
    if case.label is None:
        raise NoLabelError(f"case {case.case_id!r} has no label; cannot sample training patches")
    patch_shape = cfg.patch_shape
    data = _pad_to_patch(case.stack(), patch_shape)
    label = _pad_to_patch(case.label.data, patch_shape)
    spatial = data.shape[1:]

    foreground = None
    if rng.random() < cfg.foreground_prob:
        coords = np.argwhere(label > 0)
        if len(coords):
            foreground = coords[rng.integers(len(coords))]
    start = []
    for a in range(3):
        lo, hi = 0, spatial[a] - patch_shape[a]
        if foreground is not None:
            start.append(int(np.clip(foreground[a] - patch_shape[a] // 2, lo, hi)))
        else:
            start.append(int(rng.integers(lo, hi + 1)))
    sl = tuple(slice(s, s + n) for s, n in zip(start, patch_shape))
    patch = np.ascontiguousarray(data[(slice(None),) + sl], dtype=np.float32)
    target = np.ascontiguousarray(label[sl])
    return patch, target


def augment(patch: np.ndarray, target: np.ndarray, cfg: TrainConfig,
            rng: np.random.Generator, presence: Optional[Sequence[bool]] = None):
    """Random flips, in-plane 90-degree rotations, and intensity scaling.

    Spatial transforms apply to patch and target alike; intensity scaling
    multiplies present-modality channels only, so absent (all-zero)
    channels stay exactly zero. Rotations other than 180 degrees are only
    drawn when the in-plane extents are equal, since they would otherwise
    change the patch shape.
    """
    if not cfg.augment:
        return patch, target
    if presence is None:
        presence = [bool(np.any(patch[c])) for c in range(patch.shape[0])]
    for axis in range(3):
        if rng.random() < cfg.flip_prob:
            patch = np.flip(patch, axis=axis + 1)
            target = np.flip(target, axis=axis)
    if rng.random() < cfg.rot90_prob:
        k = int(rng.integers(1, 4)) if patch.shape[1] == patch.shape[2] else 2
        patch = np.rot90(patch, k=k, axes=(1, 2))
        target = np.rot90(target, k=k, axes=(0, 1))
    patch = np.ascontiguousarray(patch)
    target = np.ascontiguousarray(target)
    lo, hi = cfg.intensity_scale_range
    for m in range(patch.shape[0]):
        if presence[m] and rng.random() < cfg.intensity_scale_prob:
            patch[m] *= np.float32(rng.uniform(lo, hi))
    return patch, target


def drop_modalities(patch: np.ndarray, presence: Sequence[bool], cfg: TrainConfig,
                    rng: np.random.Generator):
    """Randomly zero and mask present modalities (the absence curriculum).

    Each present modality is dropped with ``modality_drop_prob``; if the
    draw would remove all of them, one originally-present modality is kept.
    """
    flags = list(bool(p) for p in presence)
    kept = list(flags)
    for m in range(NUM_MODALITIES):
        if flags[m] and rng.random() < cfg.modality_drop_prob:
            kept[m] = False
    if not any(kept):
        survivors = [m for m in range(NUM_MODALITIES) if flags[m]]
        kept[survivors[rng.integers(len(survivors))]] = True
    out = patch.copy()
    for m in range(NUM_MODALITIES):
        if not kept[m]:
            out[m] = 0.0
    return out, kept


def make_optimizer(model: F3NetModel, cfg: TrainConfig) -> torch.optim.SGD:
    return torch.optim.SGD(
        model.parameters(),
        lr=cfg.initial_lr,
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
        nesterov=cfg.nesterov,
    )


def train_step(model: F3NetModel, batch, cfg: TrainConfig, optimizer: torch.optim.SGD):
    """One SGD update on a batch of (inputs, targets, presence).

    Gradients are cleared to ``None`` first, so encoders of modalities
    absent in every batch item (which never enter the graph) are skipped
    entirely by the optimizer and stay bitwise unchanged.

    Returns:
        (loss, logits): the scalar loss value and detached logits.

    Raises:
        NonFiniteLossError: the loss is NaN or infinite.
    """
    inputs, targets, presence = batch
    model.train()
    optimizer.zero_grad(set_to_none=True)
    logits = model(inputs, presence)
    loss = combined_loss(logits, targets, cfg.loss_weights)
    if not torch.isfinite(loss):
        raise NonFiniteLossError(f"training loss is {float(loss.detach())}")
    loss.backward()
    optimizer.step()
    return float(loss.detach()), logits.detach()


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFF, epoch])


def _binarize_target(target: np.ndarray, num_classes: int) -> np.ndarray:
    if num_classes == 2:
        return (target > 0).astype(np.int64)
    return target.astype(np.int64)


def make_batch(cases: Sequence[MultiModalCase], cfg: TrainConfig,
               rng: np.random.Generator, num_classes: int = 2):
    """Assemble one training batch with augmentation and modality dropping."""
    patches, targets, gates = [], [], []
    for _ in range(cfg.batch_size):
        case = cases[int(rng.integers(len(cases)))]
        patch, target = sample_patch(case, cfg, rng)
        patch, kept = drop_modalities(patch, case.presence.present, cfg, rng)
        patch, target = augment(patch, target, cfg, rng, presence=kept)
        patches.append(patch)
        targets.append(_binarize_target(target, num_classes))
        gates.append(kept)
    inputs = torch.from_numpy(np.stack(patches))
    labels = torch.from_numpy(np.stack(targets))
    presence = torch.tensor(gates, dtype=torch.bool)
    return inputs, labels, presence


@dataclass
class HistoryRow:
    epoch: int
    lr: float
    mean_loss: float
    train_dsc: float


def write_history_csv(path, history: Sequence[HistoryRow]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(HISTORY_HEADER)
        for row in history:
            writer.writerow(
                [row.epoch, f"{row.lr:.10g}", f"{row.mean_loss:.8f}", f"{row.train_dsc:.8f}"]
            )


def _optimizer_extra(model: F3NetModel, optimizer: torch.optim.SGD) -> dict:
    extra = {}
    names = {id(p): name for name, p in model.named_parameters()}
    for group in optimizer.param_groups:
        for p in group["params"]:
            state = optimizer.state.get(p)
            if state and "momentum_buffer" in state and state["momentum_buffer"] is not None:
                extra[f"momentum/{names[id(p)]}"] = state["momentum_buffer"].cpu().numpy()
    return extra


def _restore_optimizer(model: F3NetModel, optimizer: torch.optim.SGD, extra: dict) -> None:
    params = dict(model.named_parameters())
    for key, buf in extra.items():
        if key.startswith("momentum/"):
            p = params[key[len("momentum/"):]]
            optimizer.state[p] = {"momentum_buffer": torch.from_numpy(buf.copy())}


def train(model: F3NetModel, dataset: Sequence[MultiModalCase], cfg: TrainConfig,
          out_dir=None, run_id: str = "run", resume_from=None,
          stop_after: Optional[int] = None):
    """Run the full training loop.

    Each epoch performs ``steps_per_epoch`` SGD steps at the scheduled
    learning rate and records the mean loss and mean hard training DSC.
    When ``out_dir`` is given, ``{out_dir}/{run_id}/`` receives
    ``latest.ckpt`` (resumable), ``best.ckpt`` (highest training DSC), and
    ``history.csv``. ``stop_after`` interrupts after that epoch while
    keeping the ``max_epochs`` schedule, for later resumption.

    Returns:
        (model, history): the trained model and the list of HistoryRow.
    """
    if not dataset:
        raise NoLabelError("training dataset is empty")
    for case in dataset:
        if case.label is None:
            raise NoLabelError(f"case {case.case_id!r} has no label")
    num_classes = model.spec.num_classes
    model.check_patch_shape(cfg.patch_shape)
    if cfg.deterministic:
        torch.use_deterministic_algorithms(True)

    optimizer = make_optimizer(model, cfg)
    history: list[HistoryRow] = []
    start_epoch = 0
    best_dsc = -1.0
    run_dir = None
    if out_dir is not None:
        run_dir = Path(out_dir) / run_id
        run_dir.mkdir(parents=True, exist_ok=True)

    if resume_from is not None:
        restored, extra, meta = load_checkpoint(resume_from)
        model.load_state_dict(restored.state_dict())
        _restore_optimizer(model, optimizer, extra)
        start_epoch = int(meta.get("epoch", 0))
        best_dsc = float(meta.get("best_dsc", -1.0))
        history = [HistoryRow(**row) for row in meta.get("history", [])]

    end_epoch = cfg.max_epochs if stop_after is None else min(stop_after, cfg.max_epochs)
    for epoch in range(start_epoch, end_epoch):
        lr = lr_at(epoch, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        rng = _epoch_rng(cfg.seed, epoch)
        losses = []
        dscs = []
        for _ in range(cfg.steps_per_epoch):
            inputs, targets, presence = make_batch(dataset, cfg, rng, num_classes)
            loss, logits = train_step(model, (inputs, targets, presence), cfg, optimizer)
            losses.append(loss)
            pred = (logits.argmax(dim=1) > 0).numpy().astype(np.uint8)
            truth = (targets > 0).numpy().astype(np.uint8)
            dscs.append(confusion_metrics(pred, truth).dsc)
        row = HistoryRow(epoch, lr, float(np.mean(losses)), float(np.mean(dscs)))
        history.append(row)

        if run_dir is not None:
            meta = {
                "epoch": epoch + 1,
                "best_dsc": max(best_dsc, row.train_dsc),
                "run_id": run_id,
                "history": [vars(r) for r in history],
            }
            save_checkpoint(run_dir / "latest.ckpt", model,
                            extra=_optimizer_extra(model, optimizer), meta=meta)
            if row.train_dsc > best_dsc:
                save_checkpoint(run_dir / "best.ckpt", model, meta=meta)
            write_history_csv(run_dir / "history.csv", history)
        best_dsc = max(best_dsc, row.train_dsc)

    return model, history
