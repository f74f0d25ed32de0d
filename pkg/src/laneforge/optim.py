"""SGD with momentum, Adam and RAdam updates plus per-epoch exponential LR decay.

Update rules work on plain arrays in place; :class:`Optimizer` binds them to a
named parameter map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

KINDS = ("sgd", "adam", "radam")


@dataclass
class OptimState:
    kind: str = "radam"
    lr: float = 1e-3
    lr0: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9
    decay: float = 0.95
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown optimizer {self.kind!r}; expected one of {KINDS}")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError(f"decay factor must lie in (0, 1], got {self.decay}")
        if self.lr0 is None:
            self.lr0 = self.lr


def _ensure_buffers(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimState, second: bool):
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        if second:
            state.v = [np.zeros_like(p) for p in params]
    for p, m in zip(params, state.m):
        if m.shape != p.shape:
            raise ValueError("moment buffer shape does not match parameter")


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimState):
    """v <- momentum * v + g;  p <- p - lr * v."""
    _ensure_buffers(params, grads, state, second=False)
    state.t += 1
    for p, g, v in zip(params, grads, state.m):
        v *= state.momentum
        v += g
        p -= (state.lr * v).astype(p.dtype, copy=False)
    return params


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimState):
    _ensure_buffers(params, grads, state, second=True)
    state.t += 1
    b1, b2, t = state.beta1, state.beta2, state.t
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
    return params


def radam_rho(t: int, beta2: float) -> tuple[float, float]:
    """(rho_t, rho_inf): length of the approximated simple moving average at step t."""
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    b2t = beta2**t
    return rho_inf - 2.0 * t * b2t / (1.0 - b2t), rho_inf


def radam_rectifier(t: int, beta2: float) -> float | None:
    """Variance rectification factor, or None while the adaptive step is not yet trusted."""
    rho_t, rho_inf = radam_rho(t, beta2)
    if rho_t <= 4.0:
        return None
    return math.sqrt(((rho_t - 4) * (rho_t - 2) * rho_inf) / ((rho_inf - 4) * (rho_inf - 2) * rho_t))


def radam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptimState):
    _ensure_buffers(params, grads, state, second=True)
    state.t += 1
    b1, b2, t = state.beta1, state.beta2, state.t
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    r = radam_rectifier(t, b2)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if r is None:
            step = state.lr * (m / c1)
        else:
            step = state.lr * r * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p -= step.astype(p.dtype, copy=False)
    return params


STEPS = {"sgd": sgd_step, "adam": adam_step, "radam": radam_step}


def lr_decay(state: OptimState, epoch: int) -> float:
    """Set ``lr = lr0 * decay ** epoch`` and return it."""
    if epoch < 1:
        raise ValueError("epoch must be >= 1")
    if not 0.0 < state.decay <= 1.0:
        raise ValueError(f"decay factor must lie in (0, 1], got {state.decay}")
    state.lr = state.lr0 * state.decay**epoch
    return state.lr


class Optimizer:
    """Applies one update rule to a named parameter map (``name -> Tensor``)."""

    def __init__(self, params: dict, state: OptimState):
        self.params = params
        self.names = list(params)
        self.state = state

    def step(self) -> None:
        arrays, grads = [], []
        for name in self.names:
            p = self.params[name]
            arrays.append(p.data)
            grads.append(p.grad if p.grad is not None else np.zeros_like(p.data))
        STEPS[self.state.kind](arrays, grads, self.state)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
