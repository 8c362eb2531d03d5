"""A small ReLU perceptron with exact backprop and momentum SGD."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .divergence import LossConfig

__all__ = ["Cache", "Gradients", "MlpModel", "Sgd", "TrainConfig", "learning_rate"]


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 0.05
    schedule: str = "cosine"
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    loss: str = "kl"
    loss_config: LossConfig = field(default_factory=LossConfig)
    hard_weight: float = 1.0
    div_weight: float = 1.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("lr, momentum and weight_decay must be nonnegative")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


@dataclass
class Cache:
    inputs: np.ndarray
    pre: list  # pre-activations of hidden layers
    post: list  # layer inputs: inputs, relu(h1), relu(h2), ...
    version: int


@dataclass
class Gradients:
    weights: list
    biases: list
    inputs: np.ndarray | None = None

    def __add__(self, other):
        return Gradients([a + b for a, b in zip(self.weights, other.weights)],
                         [a + b for a, b in zip(self.biases, other.biases)])


class MlpModel:
    """Fully connected net: ReLU on hidden layers, identity on the logits.

    Weights are stored ``(fan_in, fan_out)`` so a batch goes through as
    ``x @ W + b``.
    """

    def __init__(self, sizes, weights=None, biases=None):
        self.sizes = [int(s) for s in sizes]
        if len(self.sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if weights is None:
            weights = [np.zeros((a, b)) for a, b in zip(self.sizes[:-1], self.sizes[1:])]
        if biases is None:
            biases = [np.zeros(b) for b in self.sizes[1:]]
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for (a, b), w, bias in zip(zip(self.sizes[:-1], self.sizes[1:]), self.weights, self.biases):
            if w.shape != (a, b) or bias.shape != (b,):
                raise ValueError(f"parameter shapes {w.shape}/{bias.shape} do not match layer {a}->{b}")
        self.version = 0

    @classmethod
    def init(cls, sizes, rng):
        """He initialization: ``W ~ N(0, 2 / fan_in)``, zero biases, drawn layer by layer."""
        weights = [rng.normal(0.0, math.sqrt(2.0 / a), size=(a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
        return cls(sizes, weights)

    @property
    def num_classes(self):
        return self.sizes[-1]

    def copy(self):
        return MlpModel(self.sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def parameters(self):
        """All parameters as one flat vector (weights then bias, per layer)."""
        return np.concatenate([p.ravel() for w, b in zip(self.weights, self.biases) for p in (w, b)])

    def forward(self, inputs):
        x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"expected input dim {self.sizes[0]}, got {x.shape[1]}")
        pre, post = [], [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i == last:
                return z, Cache(x, pre, post, self.version)
            pre.append(z)
            h = np.maximum(z, 0.0)
            post.append(h)

    def logits(self, inputs):
        return self.forward(inputs)[0]

    def backward(self, cache, grad_logits, need_inputs=False):
        if cache.version != self.version:
            raise RuntimeError("stale cache: model parameters changed since forward")
        g = np.asarray(grad_logits, dtype=np.float64)
        gw, gb = [None] * len(self.weights), [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            gw[i] = cache.post[i].T @ g
            gb[i] = g.sum(axis=0)
            if i > 0 or need_inputs:
                g = g @ self.weights[i].T
                if i > 0:
                    g = g * (cache.pre[i - 1] > 0)
        return Gradients(gw, gb, g if need_inputs else None)

    def input_gradient(self, cache, grad_logits):
        return self.backward(cache, grad_logits, need_inputs=True).inputs


def learning_rate(config, step, total_steps):
    if config.schedule == "constant" or total_steps <= 0:
        return config.lr
    return config.lr * 0.5 * (1.0 + math.cos(math.pi * min(step, total_steps) / total_steps))


class Sgd:
    """Momentum SGD with coupled weight decay.

    ``v = momentum * v + grad + weight_decay * param``; ``param -= lr(step) * v``.
    """

    def __init__(self, model, config, total_steps):
        self.config = config
        self.total_steps = total_steps
        self.vw = [np.zeros_like(w) for w in model.weights]
        self.vb = [np.zeros_like(b) for b in model.biases]

    def step(self, model, grads, step):
        c = self.config
        lr = learning_rate(c, step, self.total_steps)
        for i in range(len(model.weights)):
            for params, grad, vel in ((model.weights, grads.weights, self.vw), (model.biases, grads.biases, self.vb)):
                if grad[i].shape != params[i].shape:
                    raise ValueError(f"gradient shape {grad[i].shape} does not match {params[i].shape}")
                vel[i] = c.momentum * vel[i] + grad[i] + c.weight_decay * params[i]
                params[i] = params[i] - lr * vel[i]
        model.version += 1
        return model
