"""Dense-network engine: layers, forward/backward, optimizers, checkpoints."""
from .net import (
    DenseNet,
    ForwardResult,
    Gradients,
    Layer,
    backward,
    build_mlp,
    cross_entropy,
    cross_entropy_grad,
    embedding,
    forward,
    gaussian_noise,
    leaky_relu,
    linear,
    one_hot,
    softmax,
)
from .optim import OptimizerState, PlateauScheduler, apply_step, make_optimizer
from . import checkpoint

__all__ = [
    "DenseNet", "ForwardResult", "Gradients", "Layer", "backward", "build_mlp",
    "cross_entropy", "cross_entropy_grad", "embedding", "forward", "gaussian_noise",
    "leaky_relu", "linear", "one_hot", "softmax", "OptimizerState", "PlateauScheduler",
    "apply_step", "make_optimizer", "checkpoint",
]
