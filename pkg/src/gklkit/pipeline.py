"""Desk-scale training recipes: distillation and TRADES-style adversarial training.

Each recipe is deterministic given its ``TrainConfig.seed``.  Random draws
come from separate streams of one seed (initialisation, shuffling, attack
starts) so two runs that differ only in the loss see identical data order
and initial weights.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import divergence as dv
from .attack import AttackConfig, pgd_attack, robust_accuracy
from .classstats import ClassWeightTable
from .divergence import LogitPair
from .model import MlpModel, Sgd, TrainConfig
from .numerics import Rng, log_softmax

__all__ = [
    "DIVERGENCES",
    "ExperimentResult",
    "accuracy",
    "adversarial_train",
    "class_table",
    "distill",
    "divergence",
    "evaluate",
    "hard_cross_entropy",
    "split_groups",
    "train_supervised",
]

DIVERGENCES = ("hard_ce", "kl", "dkl", "gkl", "jsd")

STREAM_INIT, STREAM_SHUFFLE, STREAM_ATTACK, STREAM_EVAL = 1, 2, 3, 4


@dataclass
class ExperimentResult:
    seed: int
    train_loss: list = field(default_factory=list)
    divergence: list = field(default_factory=list)
    epoch_acc: list = field(default_factory=list)
    clean_acc: float = 0.0
    robust_acc: float | None = None
    per_class_acc: list = field(default_factory=list)
    group_acc: dict | None = None
    margins: list = field(default_factory=list)
    mean_true_score: list = field(default_factory=list)
    seconds: float = 0.0
    model: MlpModel | None = field(default=None, repr=False, compare=False)
    table: ClassWeightTable | None = field(default=None, repr=False, compare=False)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("model", "table")}


def split_groups(counts):
    """Many/medium/few split by descending training count (ties: lower index first).

    Roughly 30/40/30 percent of the classes; for ten classes that is 3/4/3.
    """
    counts = np.asarray(counts)
    C = counts.size
    order = sorted(range(C), key=lambda y: (-counts[y], y))
    k = int(round(0.3 * C))
    return {"many": sorted(order[:k]), "medium": sorted(order[k:C - k]), "few": sorted(order[C - k:])}


def hard_cross_entropy(logits, labels):
    """Batch-mean cross-entropy against integer labels and its logit gradient."""
    B = logits.shape[0]
    rows = np.arange(B)
    log_s = log_softmax(logits)
    g = np.exp(log_s)
    g[rows, labels] -= 1.0
    return float(-log_s[rows, labels].mean()), g / B


def divergence(name, pair, config, table=None, labels=None):
    """Dispatch to one of the divergence losses by name."""
    t = config.kd_temperature
    if name == "kl":
        return dv.kl_loss(pair, t)
    if name == "jsd":
        return dv.jsd_loss(pair, t)
    if name == "dkl":
        return dv.dkl_loss(pair, config, table, labels)
    if name == "gkl":
        return dv.gkl_loss(pair, config, table, labels)
    raise ValueError(f"unknown divergence {name!r}; expected one of {DIVERGENCES}")


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def _uses_table(config):
    return config.loss == "gkl" or (config.loss == "dkl" and config.loss_config.weight_mode == "class_wise")


def train_supervised(sizes, train, config):
    """Plain cross-entropy training; returns ``(model, per-epoch losses)``."""
    rng = Rng(config.seed, STREAM_INIT)
    shuffle = Rng(config.seed, STREAM_SHUFFLE)
    model = MlpModel.init(sizes, rng)
    steps_per_epoch = -(-len(train) // config.batch_size)
    opt = Sgd(model, config, config.epochs * steps_per_epoch)
    step, history = 0, []
    for _ in range(config.epochs):
        total = 0.0
        for idx in _batches(len(train), config.batch_size, shuffle):
            logits, cache = model.forward(train.inputs[idx])
            loss, g = hard_cross_entropy(logits, train.labels[idx])
            opt.step(model, model.backward(cache, g), step)
            step += 1
            total += loss * idx.size
        history.append(total / len(train))
    return model, history


def distill(teacher, student_sizes, train, test, config, train_counts=None):
    """Train a student against a frozen teacher.

    Total loss ``hard_weight * CE(student, y) + div_weight * D(teacher, student)``
    with the teacher side always detached.  For class-wise weights the table
    is fed teacher probabilities every batch and committed once per epoch.
    """
    if config.loss not in DIVERGENCES:
        raise ValueError(f"unknown loss {config.loss!r}")
    if teacher.num_classes != student_sizes[-1]:
        raise ValueError(f"teacher has {teacher.num_classes} classes, student {student_sizes[-1]}")
    start = time.perf_counter()
    rng = Rng(config.seed, STREAM_INIT)
    shuffle = Rng(config.seed, STREAM_SHUFFLE)
    student = MlpModel.init(student_sizes, rng)
    lc = config.loss_config
    table = ClassWeightTable(student.num_classes) if _uses_table(config) else None
    steps_per_epoch = -(-len(train) // config.batch_size)
    opt = Sgd(student, config, config.epochs * steps_per_epoch)
    result = ExperimentResult(config.seed)
    step = 0
    for _ in range(config.epochs):
        total = div_total = 0.0
        for idx in _batches(len(train), config.batch_size, shuffle):
            x, y = train.inputs[idx], train.labels[idx]
            o_t = teacher.logits(x)
            o_s, cache = student.forward(x)
            ce, g = hard_cross_entropy(o_s, y)
            g = config.hard_weight * g
            loss = config.hard_weight * ce
            if config.loss != "hard_ce":
                res = divergence(config.loss, LogitPair(o_t, o_s, detach_m=True), lc, table, y)
                g = g + config.div_weight * res.grad_n
                loss += config.div_weight * res.value
                div_total += res.value * idx.size
            if table is not None:
                table.update(o_t, y, lc.tau)
            opt.step(student, student.backward(cache, g), step)
            step += 1
            total += loss * idx.size
        if table is not None:
            table.commit()
        result.train_loss.append(total / len(train))
        result.divergence.append(div_total / len(train))
        result.epoch_acc.append(accuracy(student, test))
    _fill_eval(result, student, test, None, train_counts)
    result.table = table
    result.seconds = time.perf_counter() - start
    return result


def adversarial_train(sizes, train, test, config, attack, lam, eval_attack=None, train_counts=None):
    """TRADES-style training: ``CE(natural, y) + lam * D(natural, adversarial)``.

    Adversarial inputs come from PGD on ``attack`` (KL to the natural
    prediction by default).  Neither branch is detached; the decoupled losses
    keep their own internal stop-gradients.  Class-wise tables accumulate
    natural-branch probabilities.
    """
    if config.loss not in ("kl", "dkl", "gkl", "jsd"):
        raise ValueError(f"adversarial training supports kl/dkl/gkl/jsd, got {config.loss!r}")
    start = time.perf_counter()
    rng = Rng(config.seed, STREAM_INIT)
    shuffle = Rng(config.seed, STREAM_SHUFFLE)
    attack_rng = Rng(config.seed, STREAM_ATTACK)
    model = MlpModel.init(sizes, rng)
    lc = config.loss_config
    table = ClassWeightTable(model.num_classes) if _uses_table(config) else None
    steps_per_epoch = -(-len(train) // config.batch_size)
    opt = Sgd(model, config, config.epochs * steps_per_epoch)
    result = ExperimentResult(config.seed)
    step = 0
    for _ in range(config.epochs):
        total = div_total = 0.0
        for idx in _batches(len(train), config.batch_size, shuffle):
            x, y = train.inputs[idx], train.labels[idx]
            o_nat, cache_nat = model.forward(x)
            x_adv = pgd_attack(model, x, attack, labels=y, natural_logits=o_nat, rng=attack_rng, box=train.box)
            o_adv, cache_adv = model.forward(x_adv)
            ce, g_nat = hard_cross_entropy(o_nat, y)
            res = divergence(config.loss, LogitPair(o_nat, o_adv), lc, table, y)
            g_nat = g_nat + lam * res.grad_m
            g_adv = lam * res.grad_n
            grads = model.backward(cache_nat, g_nat) + model.backward(cache_adv, g_adv)
            if table is not None:
                table.update(o_nat, y, lc.tau)
            opt.step(model, grads, step)
            step += 1
            total += (ce + lam * res.value) * idx.size
            div_total += res.value * idx.size
        if table is not None:
            table.commit()
        result.train_loss.append(total / len(train))
        result.divergence.append(div_total / len(train))
        result.epoch_acc.append(accuracy(model, test))
    if eval_attack is None:
        eval_attack = AttackConfig.evaluation(attack.epsilon)
    _fill_eval(result, model, test, eval_attack, train_counts, seed=config.seed)
    result.table = table
    result.seconds = time.perf_counter() - start
    return result


def evaluate(model, dataset, attack=None, train_counts=None, seed=0, tau=1.0):
    """Clean/robust accuracy, per-class accuracy and class-mean margins."""
    result = ExperimentResult(seed)
    _fill_eval(result, model, dataset, attack, train_counts, seed, tau)
    result.model = None
    return result


def accuracy(model, dataset):
    return float((np.argmax(model.logits(dataset.inputs), axis=1) == dataset.labels).mean())


def class_table(model, dataset, tau=1.0):
    """Committed class-mean table of ``softmax(logits / tau)`` over ``dataset``."""
    table = ClassWeightTable(model.num_classes)
    table.update(model.logits(dataset.inputs), dataset.labels, tau)
    return table.commit()


def _fill_eval(result, model, dataset, attack, train_counts, seed=0, tau=1.0):
    logits = model.logits(dataset.inputs)
    # argmax breaks ties toward the lowest index
    pred = np.argmax(logits, axis=1)
    correct = pred == dataset.labels
    result.clean_acc = float(correct.mean())
    C = model.num_classes
    per_class = []
    for y in range(C):
        mask = dataset.labels == y
        per_class.append(float(correct[mask].mean()) if mask.any() else float("nan"))
    result.per_class_acc = per_class
    if train_counts is not None:
        groups = split_groups(train_counts)
        result.group_acc = {}
        for name, members in groups.items():
            mask = np.isin(dataset.labels, members)
            result.group_acc[name] = float(correct[mask].mean()) if mask.any() else float("nan")
    table = class_table(model, dataset, tau)
    result.margins = table.margins().tolist()
    result.mean_true_score = [float(table.rows[y, y]) for y in range(C)]
    if attack is not None:
        result.robust_acc = robust_accuracy(model, dataset, attack, rng=Rng(seed, STREAM_EVAL))
    result.model = model
    return result
