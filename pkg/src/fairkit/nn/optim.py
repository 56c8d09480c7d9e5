"""SGD (Nesterov), Adam and AdamW updates plus a reduce-on-plateau schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, NumericError, ShapeError


@dataclass
class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs
    without improvement of the monitored loss."""

    factor: float = 0.1
    patience: int = 10
    threshold: float = 1e-4
    best: float = np.inf
    bad_epochs: int = 0

    def observe(self, loss, opt):
        if loss < self.best * (1.0 - self.threshold):
            self.best = loss
            self.bad_epochs = 0
            return
        self.bad_epochs += 1
        if self.bad_epochs > self.patience:
            opt.learning_rate *= self.factor
            self.bad_epochs = 0


@dataclass
class OptimizerState:
    kind: str = "adam"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    plateau: PlateauScheduler | None = None
    step: int = 0
    buffers: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd_nesterov", "adam", "adamw"):
            raise ConfigError(f"unknown optimizer kind {self.kind!r}")
        if not self.learning_rate > 0:
            raise ConfigError("learning rate must be positive")


def make_optimizer(kind="adam", learning_rate=1e-3, **kw):
    if kind == "adamw":
        kw.setdefault("weight_decay", 0.01)
    return OptimizerState(kind=kind, learning_rate=learning_rate, **kw)


def apply_step(net, grads, opt):
    """Update ``net`` in place from ``grads`` (a :class:`Gradients` or a flat list)."""
    flat = grads.flat() if hasattr(grads, "flat") else list(grads)
    params = net.parameters()
    if len(flat) != len(params):
        raise ShapeError("gradient set does not match network parameters")
    for p, g in zip(params, flat):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
    opt.step += 1
    t = opt.step
    lr = opt.learning_rate
    for i, (p, g) in enumerate(zip(params, flat)):
        if opt.kind == "sgd_nesterov":
            if opt.momentum == 0:
                p -= lr * g
                continue
            v = opt.buffers.get(i)
            v = g.copy() if v is None else opt.momentum * v + g
            opt.buffers[i] = v
            p -= lr * (g + opt.momentum * v)
        else:
            if opt.kind == "adamw" and opt.weight_decay:
                p -= lr * opt.weight_decay * p
            m, v = opt.buffers.get(i, (np.zeros_like(p), np.zeros_like(p)))
            m = opt.beta1 * m + (1 - opt.beta1) * g
            v = opt.beta2 * v + (1 - opt.beta2) * g * g
            opt.buffers[i] = (m, v)
            m_hat = m / (1 - opt.beta1 ** t)
            v_hat = v / (1 - opt.beta2 ** t)
            p -= lr * m_hat / (np.sqrt(v_hat) + opt.eps)
    net.touch()
    return net, opt
