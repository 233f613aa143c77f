"""Adam with a linear warmup/decay schedule and per-group learning rates."""
from __future__ import annotations

import numpy as np


def linear_schedule(step: int, total_steps: int, warmup_steps: int = 0) -> float:
    """Multiplier on the base learning rate at ``step`` (0-based)."""
    if step < warmup_steps:
        return (step + 1) / warmup_steps
    if total_steps <= warmup_steps:
        return 1.0
    return max(0.0, (total_steps - step) / (total_steps - warmup_steps))


class Adam:
    """Adam over named arrays (or lists of arrays), updated in place.

    ``groups`` maps parameter name to its base learning rate.
    """

    def __init__(self, params: dict, groups: dict[str, float], total_steps: int,
                 warmup_steps: int = 0, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.groups = groups
        self.total_steps = total_steps
        self.warmup_steps = warmup_steps
        self.b1, self.b2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: [np.zeros_like(a) for a in _as_list(params[k])] for k in groups}
        self.v = {k: [np.zeros_like(a) for a in _as_list(params[k])] for k in groups}

    def step(self, grads: dict) -> float:
        scale = linear_schedule(self.step_count, self.total_steps, self.warmup_steps)
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.b1**t
        c2 = 1.0 - self.b2**t
        for name, base_lr in self.groups.items():
            lr = base_lr * scale
            for p, g, m, v in zip(_as_list(self.params[name]), _as_list(grads[name]), self.m[name], self.v[name]):
                m *= self.b1
                m += (1.0 - self.b1) * g
                v *= self.b2
                v += (1.0 - self.b2) * g * g
                p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return scale


def _as_list(x):
    return x if isinstance(x, list) else [x]
