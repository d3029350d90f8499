"""Adam with an exponentially decaying learning rate."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericFailure

DECAY_FACTOR = 0.01
DECAY_STEPS = 50000


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(np.zeros(size), np.zeros(size), 0, beta1, beta2, eps)


def adam_step(state: AdamState, params, grad, lr):
    """One bias-corrected Adam update. Returns (new_params, new_state); inputs are untouched."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.m.shape or np.shape(params) != state.m.shape:
        raise ValueError("params, grad and Adam moments must have the same length")
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if not np.all(np.isfinite(grad)):
        raise NumericFailure("non-finite gradient entries passed to Adam")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * (grad * grad)
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, m=m, v=v, t=t)


def lr_at(step, base_lr, decay_factor=DECAY_FACTOR, decay_steps=DECAY_STEPS):
    """base_lr * (decay_factor ** (1 / decay_steps)) ** step."""
    return base_lr * decay_factor ** (step / decay_steps)
