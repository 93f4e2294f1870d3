"""
Adam and the warmup + cosine learning-rate schedule
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from gradcore import NumericalError, Tensor

logger = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


def cosine_factor(step: int, warmup_steps: int, total_steps: int) -> float:
    """1/2 (1 + cos(pi p)), p the clipped progress through the post-warmup part of the run"""
    span = max(total_steps - warmup_steps, 1)
    progress = min(max((step - warmup_steps) / span, 0.0), 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * progress))


def learning_rate(step: int, phase_start: int, peak: float, warmup_steps: int, total_steps: int) -> float:
    """
    Linear warmup from the start of the current phase, times the global cosine decay

    A stage switch starts a new phase, so warmup restarts while the cosine
    keeps following the global step.
    """
    k = step - phase_start
    warm = 1.0 if warmup_steps <= 0 else min(1.0, (k + 1) / warmup_steps)
    return peak * warm * cosine_factor(step, warmup_steps, total_steps)


@dataclass
class AdamState:
    """First/second moments keyed by parameter name, plus the update counter"""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def reset(self):
        self.m.clear()
        self.v.clear()
        self.step = 0


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState,
              lr: float) -> AdamState:
    """
    Bias-corrected Adam update, applied to ``params`` in place

    Raises:
        NumericalError: a gradient holds NaN/Inf (names the parameter)
    """
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"Non-finite gradient for parameter '{name}'")

    state.step += 1
    correction1 = 1.0 - BETA1 ** state.step
    correction2 = 1.0 - BETA2 ** state.step
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = BETA1 * m + (1.0 - BETA1) * grad
        v = BETA2 * v + (1.0 - BETA2) * grad * grad
        state.m[name] = m.astype(param.data.dtype, copy=False)
        state.v[name] = v.astype(param.data.dtype, copy=False)
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + EPSILON)
        param.data -= update.astype(param.data.dtype, copy=False)
    return state
