"""Adam with bias correction, global-norm clipping and a step learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

ADAM_EPS = 1e-8


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, a: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(a), np.zeros_like(a), 0)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              betas=(0.5, 0.999), eps: float = ADAM_EPS) -> None:
    """In-place Adam update of ``param``."""
    if param.shape != grad.shape:
        raise ValueError(f"param {param.shape} and grad {grad.shape} differ")
    b1, b2 = betas
    state.t += 1
    state.m *= b1
    state.m += (1 - b1) * grad
    state.v *= b2
    state.v += (1 - b2) * grad * grad
    if lr == 0:
        return
    m_hat = state.m / (1 - b1 ** state.t)
    v_hat = state.v / (1 - b2 ** state.t)
    param -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype)


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float) -> float:
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        coef = max_norm / norm
        for g in grads:
            g *= g.dtype.type(coef)
    return norm


def lr_at(iteration: int, total: int, base_lr: float, factor: float = 0.1, at: float = 0.8) -> float:
    """Learning rate for a 0-based iteration: ``base_lr`` until ceil(at*total), then scaled."""
    boundary = math.ceil(at * total)
    return base_lr * factor if iteration >= boundary else base_lr
