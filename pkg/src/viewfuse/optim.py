"""AdamW with decoupled weight decay, and the warmup/cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import ParameterRegistry


@dataclass
class AdamWConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05


class AdamW:
    """Tracks first/second moments per trainable parameter.

    Weight decay is decoupled: the parameter shrinks by ``lr * wd * p``
    before the bias-corrected moment update is applied. Frozen parameters
    are never touched.
    """

    def __init__(self, registry: ParameterRegistry, cfg: AdamWConfig | None = None):
        self.cfg = cfg or AdamWConfig()
        self.registry = registry
        self._step = 0
        self._moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def _moment(self, name: str, like: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if name not in self._moments:
            self._moments[name] = (np.zeros_like(like), np.zeros_like(like))
        return self._moments[name]

    def step(self, lr: float) -> None:
        c = self.cfg
        self._step += 1
        t = self._step
        bc1 = 1.0 - c.beta1 ** t
        bc2 = 1.0 - c.beta2 ** t
        for entry in self.registry.trainable():
            p = entry.tensor
            if p is None:
                raise RuntimeError(f"parameter {entry.name!r} is not materialized")
            if p.grad is None:
                raise RuntimeError(f"missing gradient for trainable parameter {entry.name!r}")
            g = p.grad
            m, v = self._moment(entry.name, p.data)
            if c.weight_decay:
                p.data -= lr * c.weight_decay * p.data
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * np.square(g)
            mhat = m / bc1
            vhat = v / bc2
            p.data -= lr * mhat / (np.sqrt(vhat) + c.eps)


def lr_at(epoch: int, epochs: int, base_lr: float, warmup_epochs: int, min_lr: float) -> float:
    """Linear warmup to base_lr, then cosine decay toward min_lr.

    Both formulas give base_lr at the warmup boundary, so the schedule is
    continuous there; the final epoch lands near (not exactly at) min_lr.
    """
    if epochs < 1:
        raise ValueError("epochs must be positive")
    if not 0 <= warmup_epochs < epochs:
        raise ValueError(f"warmup ({warmup_epochs}) must be shorter than the run ({epochs})")
    if epoch < warmup_epochs:
        return base_lr * (epoch + 1) / warmup_epochs
    progress = (epoch - warmup_epochs) / (epochs - warmup_epochs)
    cosine = 0.5 * (1.0 + math.cos(math.pi * progress))
    return min_lr + (base_lr - min_lr) * cosine
