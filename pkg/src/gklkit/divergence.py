"""Divergence losses with hand-derived gradients.

Every loss takes a :class:`LogitPair` ``(o_m, o_n)`` of shape ``(B, C)`` and
returns a :class:`LossResult` holding the scalar value and the gradients with
respect to both logit matrices.  There is no autodiff: stop-gradient is
expressed with the ``detach_m`` / ``detach_n`` flags and, inside the decoupled
losses, by which terms are allowed to emit a gradient at all.

Conventions shared by all losses:

* ``o_m`` is the reference side (teacher / natural branch), ``o_n`` the
  learner side (student / adversarial branch).
* KL, cross-entropy and JSD are per-sample values averaged over the batch.
* The weighted pairwise MSE is a weighted sum over every ``(b, j, k)`` divided
  by the total pairwise weight, times 1/4.  With sample-wise weights and
  ``gamma = 1`` the total weight is exactly ``B``, which is what makes the
  decoupled loss gradient-equivalent to batch-mean KL.
* Pairwise weights are always treated as constants.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import check_finite, log_softmax, pairwise_diff, safe_log, softmax

__all__ = [
    "LogitPair",
    "LossConfig",
    "LossResult",
    "MixtureState",
    "WeightTensor",
    "dkl_loss",
    "entropy",
    "gkl_gradient_decomposition",
    "gkl_loss",
    "jsd_loss",
    "kl_loss",
    "soft_cross_entropy",
    "wmse_efficient",
    "wmse_naive",
]

WEIGHT_MODES = ("sample_wise", "class_wise")


@dataclass(frozen=True)
class LogitPair:
    """Paired logits; 1-D inputs are promoted to a batch of one."""

    o_m: np.ndarray
    o_n: np.ndarray
    detach_m: bool = False
    detach_n: bool = False

    def __post_init__(self):
        o_m = np.atleast_2d(check_finite(self.o_m, "o_m"))
        o_n = np.atleast_2d(check_finite(self.o_n, "o_n"))
        if o_m.ndim != 2 or o_m.shape != o_n.shape:
            raise ValueError(f"shape mismatch: o_m {o_m.shape} vs o_n {o_n.shape}")
        if o_m.shape[1] < 2:
            raise ValueError(f"need at least 2 classes, got {o_m.shape[1]}")
        object.__setattr__(self, "o_m", o_m)
        object.__setattr__(self, "o_n", o_n)

    @property
    def batch(self):
        return self.o_m.shape[0]

    @property
    def num_classes(self):
        return self.o_m.shape[1]

    def scaled(self, t):
        """Logits divided by a distillation temperature ``t``."""
        if t == 1.0:
            return self
        return LogitPair(self.o_m / t, self.o_n / t, self.detach_m, self.detach_n)

    def swapped(self):
        return LogitPair(self.o_n, self.o_m, self.detach_n, self.detach_m)


@dataclass(frozen=True)
class LossConfig:
    """Selects a loss variant.

    Attributes
    ----------
    alpha, beta:
        Scales of the weighted pairwise MSE and the soft cross-entropy.
    gamma:
        Smoothing exponent on the pairwise weights; 0 gives uniform weights.
    tau:
        Temperature used when accumulating class-mean probabilities.
    weight_mode:
        ``"sample_wise"`` (weights from ``softmax(o_m)``) or ``"class_wise"``
        (weights from the class-mean table row of the ground-truth label).
    break_asymmetry:
        Let the pairwise MSE send gradient to ``o_n`` as well.
    kd_temperature:
        Logits are divided by it before every softmax; the loss is multiplied
        by its square.
    """

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    tau: float = 1.0
    weight_mode: str = "sample_wise"
    break_asymmetry: bool = False
    kd_temperature: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.kd_temperature <= 0:
            raise ValueError(f"kd_temperature must be positive, got {self.kd_temperature}")
        if self.weight_mode not in WEIGHT_MODES:
            raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}, got {self.weight_mode!r}")


@dataclass(frozen=True)
class LossResult:
    value: float
    grad_m: np.ndarray | None = None
    grad_n: np.ndarray | None = None


@dataclass(frozen=True)
class WeightTensor:
    """Per-sample factors ``c`` with pairwise weight ``W[b, j, k] = c[b, j] * c[b, k]``.

    The C x C weights are never stored unless :meth:`pairwise` is called.
    """

    c: np.ndarray
    normalizer: float

    @classmethod
    def from_factors(cls, c):
        c = np.atleast_2d(np.asarray(c, dtype=np.float64))
        total = float(np.sum(c.sum(axis=1) ** 2))
        if not total > 0:
            raise ValueError(f"pairwise weight normalizer must be positive, got {total}")
        return cls(c, total)

    @classmethod
    def from_probs(cls, probs, gamma):
        """Factors ``probs ** gamma`` so that ``W = (p_j * p_k) ** gamma``."""
        return cls.from_factors(np.power(np.atleast_2d(probs), gamma))

    @classmethod
    def sample_wise(cls, o_m, gamma):
        return cls.from_probs(softmax(o_m), gamma)

    def pairwise(self):
        return self.c[:, :, None] * self.c[:, None, :]


@dataclass(frozen=True)
class MixtureState:
    """Equal mixture of the two softmax distributions.

    ``log(m)`` is a valid set of virtual logits for the mixture since softmax
    is shift-invariant and ``m`` already sums to one.
    """

    m: np.ndarray
    virtual_logits: np.ndarray

    @classmethod
    def from_probs(cls, s_m, s_n):
        m = 0.5 * s_m + 0.5 * s_n
        return cls(m, safe_log(m))

    def virtual_diff(self):
        return pairwise_diff(self.virtual_logits)


def entropy(probs):
    """Per-row Shannon entropy in nats."""
    p = np.atleast_2d(probs)
    return -(p * safe_log(p)).sum(axis=1)


def _softmax_jvp(s, a):
    # d/do_i of sum_j a_j s_j with a held fixed: s_i * (a_i - <s, a>)
    return s * (a - (s * a).sum(axis=1, keepdims=True))


def kl_loss(pair, temperature=1.0):
    """Batch-mean ``KL(softmax(o_m) || softmax(o_n))``.

    ``grad_n = (s_n - s_m) / B``; ``grad_m[j] = sum_k (dm[j,k] - dn[j,k]) s_m[j] s_m[k] / B``
    which is evaluated in O(C) as ``s_m * (a - <s_m, a>)`` with
    ``a = log s_m - log s_n``.
    """
    t = temperature
    p = pair.scaled(t)
    B = p.batch
    log_sm, log_sn = log_softmax(p.o_m), log_softmax(p.o_n)
    s_m, s_n = np.exp(log_sm), np.exp(log_sn)
    a = log_sm - log_sn
    value = float((s_m * a).sum(axis=1).mean())
    grad_n = None if pair.detach_n else (s_n - s_m) * (t / B)
    grad_m = None if pair.detach_m else _softmax_jvp(s_m, a) * (t / B)
    return LossResult(value * t * t, grad_m, grad_n)


def soft_cross_entropy(pair, temperature=1.0):
    """Batch-mean ``-<softmax(o_m), log softmax(o_n)>`` with ``s_m`` always detached."""
    t = temperature
    p = pair.scaled(t)
    B = p.batch
    s_m = softmax(p.o_m)
    log_sn = log_softmax(p.o_n)
    value = float(-(s_m * log_sn).sum(axis=1).mean())
    grad_n = None if pair.detach_n else (np.exp(log_sn) - s_m) * (t / B)
    return LossResult(value * t * t, None, grad_n)


def _check_weights(pair, weights):
    if weights.c.shape != pair.o_m.shape:
        raise ValueError(f"weight factors {weights.c.shape} do not match logits {pair.o_m.shape}")
    if not weights.normalizer > 0:
        raise ValueError(f"pairwise weight normalizer must be positive, got {weights.normalizer}")


def _wmse_result(pair, value, grad, break_asymmetry):
    grad_m = None if pair.detach_m else grad
    if pair.detach_n:
        grad_n = None
    elif break_asymmetry:
        grad_n = -grad
    else:
        grad_n = np.zeros_like(grad)
    return LossResult(value, grad_m, grad_n)


def wmse_naive(pair, weights, break_asymmetry=False):
    """Weighted pairwise MSE by materializing the ``B x C x C`` differences.

    ``value = 1/4 * sum_{b,j,k} W[b,j,k] (dm - dn)[b,j,k]^2 / normalizer``.
    Without ``break_asymmetry`` the learner differences are constants, so
    ``grad_n`` is zero.
    """
    _check_weights(pair, weights)
    W = weights.pairwise()
    D = pairwise_diff(pair.o_m) - pairwise_diff(pair.o_n)
    N = weights.normalizer
    value = 0.25 * float((W * D * D).sum()) / N
    # W symmetric, D antisymmetric: both index positions contribute equally
    grad = (W * D).sum(axis=2) / N
    return _wmse_result(pair, value, grad, break_asymmetry)


def wmse_efficient(pair, weights, break_asymmetry=False):
    """Same result as :func:`wmse_naive` in O(B*C) memory.

    Uses ``sum_{j,k} c_j c_k (d_j - d_k)^2 = 2 (sum c) (sum c d^2) - 2 (sum c d)^2``
    with ``d = o_m - o_n``, evaluated on ``d`` centred at its c-weighted mean
    (the identity is invariant to that shift and the centred form avoids
    cancellation).
    """
    _check_weights(pair, weights)
    c = weights.c
    N = weights.normalizer
    d = pair.o_m - pair.o_n
    sc = c.sum(axis=1, keepdims=True)
    mean = np.divide((c * d).sum(axis=1, keepdims=True), sc, out=np.zeros_like(sc), where=sc > 0)
    dc = d - mean
    per_row = 2.0 * sc[:, 0] * (c * dc * dc).sum(axis=1)
    value = 0.25 * float(per_row.sum()) / N
    grad = c * sc * dc / N
    return _wmse_result(pair, value, grad, break_asymmetry)


_KERNELS = {"efficient": wmse_efficient, "naive": wmse_naive}


def _decoupled(pair, config, weights, break_asymmetry, kernel):
    """Shared body of the decoupled losses, at the already-scaled temperature."""
    w = _KERNELS[kernel](pair, weights, break_asymmetry)
    ce = soft_cross_entropy(pair)
    value = config.alpha * w.value + config.beta * ce.value
    grad_m = None if pair.detach_m else config.alpha * w.grad_m
    if pair.detach_n:
        wmse_n = ce_n = None
    else:
        ce_n = config.beta * ce.grad_n
        wmse_n = config.alpha * w.grad_n if break_asymmetry else None
    return value, grad_m, wmse_n, ce_n


def _finish(value, grad_m, wmse_n, ce_n, t):
    # chain rule through o / t, then the t^2 loss scale
    if ce_n is None:
        grad_n = None
    elif wmse_n is None:
        grad_n = ce_n
    else:
        grad_n = wmse_n + ce_n
    if t != 1.0:
        grad_m = None if grad_m is None else grad_m * t
        grad_n = None if grad_n is None else grad_n * t
    return LossResult(value * t * t, grad_m, grad_n)


def _weights_for(pair, config, table, labels):
    if config.weight_mode == "sample_wise":
        return WeightTensor.sample_wise(pair.o_m, config.gamma)
    if table is None or labels is None:
        raise ValueError("class_wise weights need a class table and labels")
    return WeightTensor.from_factors(table.weight_vectors(labels, config.gamma))


def dkl_loss(pair, config=LossConfig(), table=None, labels=None, kernel="efficient"):
    """Decoupled KL: ``alpha * wMSE + beta * CE(S(s_m), s_n)``.

    With ``alpha = beta = gamma = 1``, sample-wise weights and
    ``break_asymmetry`` off, the gradients equal those of :func:`kl_loss`.
    When ``break_asymmetry`` is off ``grad_n`` is the cross-entropy gradient
    and nothing else, so a detached ``o_m`` leaves the MSE term inert.
    """
    t = config.kd_temperature
    p = pair.scaled(t)
    weights = _weights_for(p, config, table, labels)
    value, grad_m, wmse_n, ce_n = _decoupled(p, config, weights, config.break_asymmetry, kernel)
    return _finish(value, grad_m, wmse_n, ce_n, t)


def gkl_loss(pair, config=LossConfig(), table=None, labels=None, kernel="efficient"):
    """Generalized KL: the decoupled loss with asymmetry always broken.

    Weights are ``(s_j s_k) ** gamma`` where ``s`` is ``softmax(o_m / t)``
    (sample-wise) or the class-mean row of each sample's label (class-wise).
    """
    t = config.kd_temperature
    p = pair.scaled(t)
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (p.batch,):
            raise ValueError(f"expected {p.batch} labels, got shape {labels.shape}")
    weights = _weights_for(p, config, table, labels)
    value, grad_m, wmse_n, ce_n = _decoupled(p, config, weights, True, kernel)
    return _finish(value, grad_m, wmse_n, ce_n, t)


def gkl_gradient_decomposition(pair, config=LossConfig(), table=None, labels=None):
    """Split the GKL learner gradient into its pairwise-MSE and cross-entropy parts.

    Returns ``(wmse_part, ce_part)``; their sum is ``gkl_loss(...).grad_n``.
    """
    t = config.kd_temperature
    p = LogitPair(pair.o_m, pair.o_n, pair.detach_m, False).scaled(t)
    weights = _weights_for(p, config, table, labels)
    _, _, wmse_n, ce_n = _decoupled(p, config, weights, True, "efficient")
    return wmse_n * t, ce_n * t


def jsd_loss(pair, temperature=1.0):
    """Batch-mean Jensen-Shannon divergence ``1/2 KL(s_m||m) + 1/2 KL(s_n||m)``.

    The learner gradient is ``1/2 * sum_j s_n[i] s_n[j] (dn[i,j] - dm'[i,j]) / B``
    where ``dm'`` are pairwise differences of the virtual logits ``log m``;
    the reference gradient is the mirror image.
    """
    t = temperature
    p = pair.scaled(t)
    B = p.batch
    log_sm, log_sn = log_softmax(p.o_m), log_softmax(p.o_n)
    s_m, s_n = np.exp(log_sm), np.exp(log_sn)
    mix = MixtureState.from_probs(s_m, s_n)
    a_m = log_sm - mix.virtual_logits
    a_n = log_sn - mix.virtual_logits
    value = float((0.5 * (s_m * a_m).sum(axis=1) + 0.5 * (s_n * a_n).sum(axis=1)).mean())
    grad_m = None if pair.detach_m else _softmax_jvp(s_m, a_m) * (0.5 * t / B)
    grad_n = None if pair.detach_n else _softmax_jvp(s_n, a_n) * (0.5 * t / B)
    return LossResult(value * t * t, grad_m, grad_n)
