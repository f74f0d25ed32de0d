"""Masked sequential autoencoder pretraining.

Every frame of an input sequence gets its own random set of 16x16 patches
zeroed; the network reconstructs the *unmasked* last frame and is trained on
the full-image mean squared error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .model import Checkpoint, forward
from .optim import Optimizer

PATCH = 16


@dataclass(frozen=True)
class MaskPattern:
    grid_rows: int
    grid_cols: int
    masked: tuple[int, ...]  # row-major patch indices, sorted
    ratio: float
    seed: int
    patch: int = PATCH

    @property
    def n_patches(self) -> int:
        return self.grid_rows * self.grid_cols

    def pixel_mask(self) -> np.ndarray:
        """Boolean H x W map, True inside masked patches."""
        grid = np.zeros(self.n_patches, dtype=bool)
        grid[list(self.masked)] = True
        grid = grid.reshape(self.grid_rows, self.grid_cols)
        return np.kron(grid, np.ones((self.patch, self.patch), dtype=bool)).astype(bool)


def mask_count(ratio: float, n_patches: int) -> int:
    # round half up; Python's round() is half-to-even
    return int(np.floor(ratio * n_patches + 0.5))


def sample_mask(height: int, width: int, ratio: float = 0.5, seed: int = 0, patch: int = PATCH) -> MaskPattern:
    if height % patch or width % patch:
        raise ValueError(f"{height}x{width} is not divisible into {patch}x{patch} patches")
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"mask ratio must lie in [0, 1], got {ratio}")
    rows, cols = height // patch, width // patch
    n = rows * cols
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(n)[: mask_count(ratio, n)]
    return MaskPattern(rows, cols, tuple(sorted(int(i) for i in chosen)), ratio, seed, patch)


def apply_mask(frame: np.ndarray, mask: MaskPattern, fill: float = 0.0) -> np.ndarray:
    """Copy of ``frame`` (``... x H x W``) with masked patches set to ``fill``."""
    h, w = frame.shape[-2:]
    if (h, w) != (mask.grid_rows * mask.patch, mask.grid_cols * mask.patch):
        raise ValueError(f"frame {h}x{w} does not match the {mask.grid_rows}x{mask.grid_cols} patch grid")
    out = np.array(frame, copy=True)
    out[..., mask.pixel_mask()] = fill
    return out


def reconstruction_loss(recon, original) -> T.Tensor:
    """Mean squared error over every pixel and colour channel (and batch item)."""
    recon = T.as_tensor(recon)
    original = np.asarray(original)
    if recon.shape != original.shape:
        raise T.ShapeError(f"reconstruction {recon.shape} and original {original.shape} differ")
    diff = recon - original.astype(recon.dtype)
    return T.mean(diff * diff)


def mask_batch(frames: np.ndarray, ratio: float, rng: np.random.Generator, patch: int = PATCH) -> np.ndarray:
    """Independently mask every frame of a ``B x S x C x H x W`` batch."""
    b, s, _, h, w = frames.shape
    out = np.array(frames, copy=True)
    seeds = rng.integers(0, 2**63 - 1, size=(b, s))
    for i in range(b):
        for j in range(s):
            out[i, j, :, sample_mask(h, w, ratio, int(seeds[i, j]), patch).pixel_mask()] = 0.0
    return out


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch, 17]).permutation(n)


def pretrain_epoch(
    ck: Checkpoint,
    frames: np.ndarray,
    optimizer: Optimizer,
    ratio: float = 0.5,
    seed: int = 0,
    epoch: int = 1,
    batch_size: int = 8,
    patch: int = PATCH,
) -> dict:
    """One pass over ``frames`` (``N x S x 3 x H x W``); returns ``{"loss": mean batch loss, ...}``."""
    if ck.phase != "pretrain" or ck.spec.head_channels != 3:
        raise ValueError("pretraining needs a pretrain-phase checkpoint with a 3-channel head")
    order = epoch_order(len(frames), seed, epoch)
    mask_rng = np.random.default_rng([seed, epoch, 29])
    losses = []
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        batch = frames[idx]
        target = batch[:, -1]
        masked = mask_batch(batch, ratio, mask_rng, patch)
        optimizer.zero_grad()
        loss = reconstruction_loss(forward(ck.params, ck.spec, masked), target)
        loss.backward()
        optimizer.step()
        losses.append(loss.item())
    ck.epoch = epoch
    return {"epoch": epoch, "loss": float(np.mean(losses)), "batches": len(losses)}


def reconstruction_eval(
    ck: Checkpoint, frames: np.ndarray, ratio: float, seed: int = 0, batch_size: int = 8, patch: int = PATCH
) -> float:
    """Mean reconstruction loss on ``frames`` with masks fixed by ``seed`` (no parameter update)."""
    rng = np.random.default_rng([seed, 41])
    total, count = 0.0, 0
    with T.no_grad():
        for start in range(0, len(frames), batch_size):
            batch = frames[start:start + batch_size]
            masked = mask_batch(batch, ratio, rng, patch)
            loss = reconstruction_loss(forward(ck.params, ck.spec, masked), batch[:, -1])
            total += loss.item() * len(batch)
            count += len(batch)
    return total / count
