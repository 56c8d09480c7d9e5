"""Plain supervised training loop and seeded RNG stream helpers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .nn import apply_step, backward, cross_entropy, cross_entropy_grad, forward, make_optimizer
from .nn.optim import PlateauScheduler

STREAMS = ("shuffle", "predictor_init", "adversary_init", "noise")


def rng_streams(seed):
    """Independent generators for shuffling, the two inits and noise.

    Keeping them separate means adversary updates never shift the random
    numbers the predictor sees.
    """
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(c) for name, c in zip(STREAMS, children)}


@dataclass
class FitSettings:
    max_epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    early_stop_patience: int = 10
    plateau_patience: int | None = None


def evaluate_loss(net, X, y):
    return cross_entropy(forward(net, X).output, y)


def fit_classifier(net, X, y, settings, *, X_val=None, y_val=None, seed=0, streams=None):
    """Mini-batch cross-entropy training with early stopping.

    Keeps the parameters from the epoch with the lowest validation loss
    (training loss when no validation data is given). Returns the history
    as a list of ``(train_loss, val_loss)`` pairs.
    """
    streams = streams or rng_streams(seed)
    shuffle, noise = streams["shuffle"], streams["noise"]
    opt = make_optimizer(settings.optimizer, settings.learning_rate)
    if settings.plateau_patience is not None:
        opt.plateau = PlateauScheduler(patience=settings.plateau_patience)
    n = len(y)
    best, best_params, stale = np.inf, None, 0
    history = []
    for epoch in range(settings.max_epochs):
        order = shuffle.permutation(n)
        losses = []
        for start in range(0, n, settings.batch_size):
            b = order[start:start + settings.batch_size]
            fr = forward(net, X[b], training=True, rng=noise)
            loss = cross_entropy(fr.output, y[b])
            if not np.isfinite(loss):
                raise NumericError("classification loss diverged", epoch)
            grads = backward(net, fr.cache, cross_entropy_grad(fr.output, y[b]))
            apply_step(net, grads, opt)
            losses.append(loss)
        train_loss = float(np.mean(losses))
        val_loss = evaluate_loss(net, X_val, y_val) if X_val is not None and len(y_val) else train_loss
        history.append((train_loss, val_loss))
        if opt.plateau is not None:
            opt.plateau.observe(train_loss, opt)
        if val_loss < best:
            best, stale = val_loss, 0
            best_params = [p.copy() for p in net.parameters()]
        else:
            stale += 1
            if stale >= settings.early_stop_patience:
                break
    if best_params is not None:
        for p, saved in zip(net.parameters(), best_params):
            p[...] = saved
        net.touch()
    return history
