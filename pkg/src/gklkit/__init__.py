"""KL-family divergence losses with analytic gradients, oracles and small experiments.

The core is :mod:`gklkit.divergence` (KL, decoupled KL, generalized KL, JSD).
:mod:`gklkit.gradcheck` checks those gradients against independent oracles;
:mod:`gklkit.pipeline` runs distillation and adversarial training on a
numpy perceptron.
"""
from .classstats import ClassWeightTable
from .divergence import (
    LogitPair,
    LossConfig,
    LossResult,
    WeightTensor,
    dkl_loss,
    gkl_gradient_decomposition,
    gkl_loss,
    jsd_loss,
    kl_loss,
    soft_cross_entropy,
    wmse_efficient,
    wmse_naive,
)
from .numerics import Rng, log_softmax, softmax

__version__ = "0.1.0"

__all__ = [
    "ClassWeightTable",
    "LogitPair",
    "LossConfig",
    "LossResult",
    "Rng",
    "WeightTensor",
    "dkl_loss",
    "gkl_gradient_decomposition",
    "gkl_loss",
    "jsd_loss",
    "kl_loss",
    "log_softmax",
    "soft_cross_entropy",
    "softmax",
    "wmse_efficient",
    "wmse_naive",
]
