"""Fine-tuning and evaluation loops for the segmentation phase."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .evaluation import ConfusionCounts, MetricsReport, binarize, confusion, metrics
from .losses import LossConfig, segmentation_loss
from .model import Checkpoint, forward
from .optim import Optimizer
from .pretrain import epoch_order


def finetune_epoch(
    ck: Checkpoint,
    frames: np.ndarray,
    labels: np.ndarray,
    optimizer: Optimizer,
    loss: str = "pl",
    cfg: LossConfig = LossConfig(),
    seed: int = 0,
    epoch: int = 1,
    batch_size: int = 8,
) -> dict:
    """One pass of segmentation training; returns ``{"loss": mean batch loss, ...}``."""
    if ck.phase != "finetune" or ck.spec.head_channels != 2:
        raise ValueError("fine-tuning needs a finetune-phase checkpoint with a 2-channel head")
    if len(frames) != len(labels):
        raise ValueError(f"{len(frames)} sequences but {len(labels)} label maps")
    order = epoch_order(len(frames), seed, epoch)
    losses = []
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        optimizer.zero_grad()
        value = segmentation_loss(forward(ck.params, ck.spec, frames[idx]), labels[idx], loss, cfg)
        value.backward()
        optimizer.step()
        losses.append(value.item())
    ck.epoch = epoch
    return {"epoch": epoch, "loss": float(np.mean(losses)), "batches": len(losses)}


def predict(ck: Checkpoint, frames: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """Binary lane maps (``N x H x W`` uint8) by channel argmax."""
    out = []
    with T.no_grad():
        for start in range(0, len(frames), batch_size):
            logits = forward(ck.params, ck.spec, frames[start:start + batch_size]).data
            out.append(binarize(logits))
    return np.concatenate(out) if out else np.zeros((0,) + frames.shape[-2:], np.uint8)


def evaluate(ck: Checkpoint, frames: np.ndarray, labels: np.ndarray, batch_size: int = 16) -> tuple[MetricsReport, ConfusionCounts]:
    pred = predict(ck, frames, batch_size)
    counts = confusion(pred, labels)
    return metrics(counts), counts


def detach_params(ck: Checkpoint) -> None:
    """Drop any leftover gradients (keeps saved checkpoints free of stale state)."""
    for p in ck.params.values():
        p.grad = None

