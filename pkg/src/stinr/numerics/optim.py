from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class TrainingError(RuntimeError):
    """Raised when optimisation hits a non-finite value."""


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update, in place.

    ``params`` and ``grads`` are aligned mappings from parameter name to array.
    A parameter whose gradient is ``None`` or identically zero is skipped,
    moments included, so a zero-gradient call never moves any value.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        if g is None or not np.any(g):
            continue
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        upd = (lr / c1) * m / (np.sqrt(v / c2) + state.eps_adam)
        p -= upd.astype(p.dtype, copy=False)
    return params, state


def cosine_lr(iteration, period, lr_max, lr_min):
    """Cosine annealing with warm restarts every ``period`` iterations."""
    if iteration < 0 or period <= 0:
        raise ValueError("cosine_lr needs iteration >= 0 and period > 0")
    phase = (iteration % period) / period
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * phase))
