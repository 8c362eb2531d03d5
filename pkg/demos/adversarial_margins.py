"""TRADES-style adversarial training with KL and GKL, then class margins.

The margin of class y is the class-mean probability of y minus the largest
class-mean probability of any other class, measured on clean test inputs.
One seed, a few seconds per arm.
"""
import numpy as np

from gklkit import LossConfig, Rng
from gklkit.attack import AttackConfig
from gklkit.dataset import make_blobs
from gklkit.model import TrainConfig
from gklkit.pipeline import adversarial_train

C = 10
seed = 0
train = make_blobs(Rng(seed, 10), C, 200, radius=1.0, sigma=0.25)
test = make_blobs(Rng(seed, 11), C, 100, radius=1.0, sigma=0.25)

train_attack = AttackConfig(0.1, steps=10, random_start=True, objective="kl_to_natural")
eval_attack = AttackConfig.evaluation(0.1)

arms = {
    "kl": (LossConfig(), 6.0),
    "gkl": (LossConfig(alpha=20.0, beta=5.0, gamma=1.0, tau=4.0, weight_mode="class_wise"), 1.0),
}
margins = {}
for name, (lc, lam) in arms.items():
    res = adversarial_train([2, 64, 64, C], train, test, TrainConfig(epochs=20, loss=name, loss_config=lc, seed=seed),
                            train_attack, lam, eval_attack=eval_attack)
    margins[name] = np.array(res.margins)
    print(f"{name:>4}: clean {res.clean_acc:.4f}  robust {res.robust_acc:.4f}  mean margin {margins[name].mean():.4f}")

diff = margins["gkl"] - margins["kl"]
print("margin difference per class (gkl - kl):")
print(np.array2string(diff, precision=3, suppress_small=True))
print(f"positive for {(diff > 0).sum()}/{C} classes")

# On these well-separated blobs the robust accuracies come out close while
# the GKL margins are smaller: the class-mean weights keep pulling confident
# samples toward the class-mean profile, which carries some mass on the
# neighbouring classes.
