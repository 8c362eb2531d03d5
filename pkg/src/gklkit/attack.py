"""L-infinity FGSM/PGD attacks against :class:`~gklkit.model.MlpModel`."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import log_softmax, softmax

__all__ = ["AttackConfig", "attack_objective", "pgd_attack", "robust_accuracy"]

OBJECTIVES = ("cross_entropy", "kl_to_natural")


@dataclass(frozen=True)
class AttackConfig:
    """PGD settings; ``step_size`` defaults to ``epsilon / 4``."""

    epsilon: float
    step_size: float | None = None
    steps: int = 10
    random_start: bool = True
    objective: str = "cross_entropy"

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be nonnegative, got {self.epsilon}")
        if self.steps < 1:
            raise ValueError(f"steps must be at least 1, got {self.steps}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.step_size is None:
            object.__setattr__(self, "step_size", self.epsilon / 4 if self.epsilon > 0 else 1e-3)
        if self.step_size <= 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")

    @classmethod
    def training(cls, epsilon, objective="kl_to_natural"):
        return cls(epsilon, steps=10, random_start=True, objective=objective)

    @classmethod
    def evaluation(cls, epsilon):
        return cls(epsilon, steps=20, random_start=False, objective="cross_entropy")


def _targets(config, labels, natural_logits):
    if config.objective == "cross_entropy":
        if labels is None:
            raise ValueError("cross_entropy objective needs labels")
        return np.asarray(labels)
    if natural_logits is None:
        raise ValueError("kl_to_natural objective needs natural logits")
    return softmax(natural_logits)


def _value_and_grad(model, x, config, target):
    logits, cache = model.forward(x)
    log_s = log_softmax(logits)
    s = np.exp(log_s)
    if config.objective == "cross_entropy":
        rows = np.arange(x.shape[0])
        value = -log_s[rows, target]
        g = s.copy()
        g[rows, target] -= 1.0
    else:
        value = (target * (np.log(np.maximum(target, 1e-300)) - log_s)).sum(axis=1)
        g = s - target
    return value, model.input_gradient(cache, g)


def attack_objective(model, inputs, config, labels=None, natural_logits=None):
    """Per-sample value of the attack objective at ``inputs``."""
    return _value_and_grad(model, np.atleast_2d(inputs), config, _targets(config, labels, natural_logits))[0]


def pgd_attack(model, inputs, config, labels=None, natural_logits=None, rng=None, box=None):
    """Sign-gradient ascent projected onto the L-inf ball (and ``box`` if given).

    The result never leaves the ball, even for inputs that start outside ``box``.

    With ``steps=1`` and no random start this is FGSM with step ``step_size``.
    """
    x0 = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    target = _targets(config, labels, natural_logits)
    eps = config.epsilon
    lo, hi = (x0 - eps, x0 + eps)
    if box is not None:
        # for inputs already outside the box the ball wins: stay at the ball point nearest the box
        lo, hi = np.clip(np.maximum(lo, box[0]), lo, hi), np.clip(np.minimum(hi, box[1]), lo, hi)
    x = x0.copy()
    if config.random_start and eps > 0:
        if rng is None:
            raise ValueError("random_start needs an rng")
        x = np.clip(x0 + rng.uniform(-eps, eps, size=x0.shape), lo, hi)
    for _ in range(config.steps):
        _, g = _value_and_grad(model, x, config, target)
        x = np.clip(x + config.step_size * np.sign(g), lo, hi)
    return x


def robust_accuracy(model, dataset, config, rng=None, batch_size=1024):
    """Fraction of samples still classified correctly after the attack."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    correct = 0
    for start in range(0, len(dataset), batch_size):
        x = dataset.inputs[start:start + batch_size]
        y = dataset.labels[start:start + batch_size]
        nat = model.logits(x) if config.objective == "kl_to_natural" else None
        adv = pgd_attack(model, x, config, labels=y, natural_logits=nat, rng=rng, box=dataset.box)
        correct += int((np.argmax(model.logits(adv), axis=1) == y).sum())
    return correct / len(dataset)
