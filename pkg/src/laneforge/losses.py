"""Segmentation objectives: weighted cross entropy, focal loss and the binary PolyLoss.

All losses take the lane-class probability map ``h`` (any shape, values in
(0, 1)) and a same-shape binary label map, and average over every pixel.
Probabilities are clamped to ``[prob_clamp, 1 - prob_clamp]`` before logs.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

PROB_CLAMP = 1e-7

# (alpha, gamma, epsilon) candidates for PolyLoss tuning
POLY_GRID = tuple(itertools.product((1.0, 2.0), (0.5, 1.0, 2.0), (0.0, 1.0, 2.0)))


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0
    gamma: float = 1.0
    epsilon: float = 1.0
    omega1: float = 1.0
    omega0: float = 1.0
    prob_clamp: float = PROB_CLAMP

    def __post_init__(self):
        if self.alpha < 0 or self.gamma < 0 or self.epsilon < 0:
            raise ValueError("alpha, gamma and epsilon must be non-negative")
        if self.omega1 <= 0 or self.omega0 <= 0:
            raise ValueError("class weights must be positive")


def _prepare(probs, labels, clamp: float) -> tuple[Tensor, np.ndarray]:
    probs = T.as_tensor(probs)
    y = np.asarray(labels)
    if y.shape != probs.shape:
        raise T.ShapeError(f"probabilities {probs.shape} and labels {y.shape} differ in shape")
    return T.clamp(probs, clamp, 1.0 - clamp), y.astype(probs.dtype)


def weighted_ce(probs, labels, cfg: LossConfig = LossConfig()) -> Tensor:
    h, y = _prepare(probs, labels, cfg.prob_clamp)
    pos = T.log(h) * (cfg.omega1 * y)
    neg = T.log(1.0 - h) * (cfg.omega0 * (1.0 - y))
    return -T.mean(pos + neg)


def poly_loss(probs, labels, cfg: LossConfig = LossConfig()) -> Tensor:
    """Binary PolyLoss: focal-style log terms scaled by alpha plus a gamma-weighted leading polynomial."""
    h, y = _prepare(probs, labels, cfg.prob_clamp)
    eps = cfg.epsilon
    q = 1.0 - h
    log_terms = (q ** eps) * T.log(h) * y + (h ** eps) * T.log(q) * (1.0 - y)
    poly_terms = (q ** (eps + 1.0)) * y + (h ** (eps + 1.0)) * (1.0 - y)
    return -T.mean(log_terms * cfg.alpha - poly_terms * cfg.gamma)


def focal_loss(probs, labels, alpha: float = 1.0, epsilon: float = 2.0, prob_clamp: float = PROB_CLAMP) -> Tensor:
    h, y = _prepare(probs, labels, prob_clamp)
    # probability of the true class
    qt = h * y + (1.0 - h) * (1.0 - y)
    return -T.mean(((1.0 - qt) ** epsilon) * T.log(qt) * alpha)


def cross_entropy(probs, labels, prob_clamp: float = PROB_CLAMP) -> Tensor:
    return weighted_ce(probs, labels, LossConfig(omega1=1.0, omega0=1.0, prob_clamp=prob_clamp))


def fl_taylor_truncated(q: float, epsilon: float, n: int, gammas: Sequence[float] | None = None) -> float:
    """Leading ``n`` polynomial terms of the focal-loss expansion, each perturbed by ``gammas[j]``.

    ``sum_{j=1..n} (gamma_j + 1/j) (1 - q)^(j + epsilon)``
    """
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    if n < 1:
        raise ValueError("n must be >= 1")
    gammas = [0.0] * n if gammas is None else list(gammas)
    if len(gammas) != n:
        raise ValueError(f"expected {n} perturbations, got {len(gammas)}")
    return math.fsum((gammas[j - 1] + 1.0 / j) * (1.0 - q) ** (j + epsilon) for j in range(1, n + 1))


def poly1_focal(q: float, alpha: float, gamma: float, epsilon: float) -> float:
    """Single-coefficient PolyLoss of the focal loss, per sample."""
    return -alpha * (1.0 - q) ** epsilon * math.log(q) + gamma * (1.0 - q) ** (epsilon + 1.0)


def class_weights(labels: np.ndarray) -> tuple[float, float]:
    """Inverse pixel frequencies (lane, background), normalised to mean 1."""
    labels = np.asarray(labels)
    f1 = float(labels.mean())
    if not 0.0 < f1 < 1.0:
        raise ValueError("both classes must be present to derive class weights")
    inv = np.array([1.0 / f1, 1.0 / (1.0 - f1)])
    w1, w0 = inv / inv.mean()
    return float(w1), float(w0)


def segmentation_loss(logits, labels, kind: str, cfg: LossConfig) -> Tensor:
    """Loss on 2-channel logits; channel 1 is the lane class."""
    probs = T.softmax_over_channels(logits)
    lane = probs[:, 1] if probs.ndim == 4 else probs[1]
    if kind == "ce":
        return weighted_ce(lane, labels, cfg)
    if kind == "pl":
        return poly_loss(lane, labels, cfg)
    if kind == "focal":
        return focal_loss(lane, labels, cfg.alpha, cfg.epsilon, cfg.prob_clamp)
    raise ValueError(f"unknown loss {kind!r}")
