"""KL and its decoupled form give the same gradients.

Walks through one batch by hand: KL between two softmax distributions,
the same quantity split into a weighted pairwise MSE plus a cross-entropy,
and what happens to the gradients once the weights or the stop-gradient
change.  Run with ``python demos/gradient_equivalence.py``.
"""
import numpy as np

from gklkit import LogitPair, LossConfig, dkl_loss, gkl_loss, kl_loss
from gklkit.divergence import gkl_gradient_decomposition

rng = np.random.default_rng(7)
np.set_printoptions(precision=5, suppress=True)

# a batch of 4 samples over 5 classes; o_m is the reference, o_n the learner
o_m = rng.normal(size=(4, 5))
o_n = rng.normal(size=(4, 5))
pair = LogitPair(o_m, o_n)

kl = kl_loss(pair)
dkl = dkl_loss(pair, LossConfig(alpha=1.0, beta=1.0, gamma=1.0))
print("KL value           ", kl.value)
print("decoupled KL value ", dkl.value)
print("max |grad_m diff|  ", np.abs(kl.grad_m - dkl.grad_m).max())
print("max |grad_n diff|  ", np.abs(kl.grad_n - dkl.grad_n).max())

# The values differ (the decoupled loss carries the entropy of s_m) but
# the gradients agree to round-off.  Now detach the reference side, as a
# frozen teacher would be:
frozen = LogitPair(o_m, o_n, detach_m=True)
res = dkl_loss(frozen, LossConfig())
print("\nteacher detached: grad_m is", res.grad_m)
print("learner gradient equals s_n - s_m over B:",
      np.allclose(res.grad_n, kl_loss(frozen).grad_n, rtol=0, atol=1e-15))

# Only the cross-entropy half reaches the learner.  The generalized loss
# lets the pairwise term through as well; split its gradient in two.
cfg = LossConfig(alpha=2.0, beta=1.0, gamma=0.5)
wmse_part, ce_part = gkl_gradient_decomposition(frozen, cfg)
print("\nGKL learner gradient, first sample")
print("  pairwise-MSE part ", wmse_part[0])
print("  cross-entropy part", ce_part[0])
print("  sum matches gkl_loss:", np.allclose(wmse_part + ce_part, gkl_loss(frozen, cfg).grad_n))

# every row of each part sums to zero: a constant shift of the logits
# changes nothing
print("row sums", (wmse_part + ce_part).sum(axis=1))
