"""Independent oracles for the divergence gradients.

The value oracles here are written from the definitions (explicit pairwise
sums, naive log-sum-exp) and share no code with :mod:`gklkit.divergence`
beyond the input containers.  Stop-gradient terms are realised by freezing
the stopped quantity at the base point before differencing.
"""
from __future__ import annotations

import math
import time
import tracemalloc
from dataclasses import dataclass, field

import numpy as np

from . import divergence as dv
from .classstats import ClassWeightTable
from .divergence import LogitPair, LossConfig, WeightTensor
from .numerics import Rng

__all__ = [
    "CheckReport",
    "FIXTURE",
    "compare",
    "equivalence_trial",
    "finite_diff",
    "fixture_pair",
    "kernel_equivalence_trial",
    "run_all",
    "THEOREM_SIZES",
]

FD_STEP = 1e-5
FD_RTOL = 1e-4
FD_ATOL = 1e-7


@dataclass
class CheckReport:
    name: str
    max_abs: float = 0.0
    max_rel: float = 0.0
    where: tuple = ()
    atol: float = 0.0
    rtol: float = 0.0
    passed: bool = True
    trials: int = 0
    seconds: float = 0.0
    notes: list = field(default_factory=list)

    def merge(self, other):
        """Fold another report for the same case into this one (worst case wins)."""
        if other.max_abs > self.max_abs:
            self.max_abs, self.where = other.max_abs, other.where
        self.max_rel = max(self.max_rel, other.max_rel)
        self.passed = self.passed and other.passed
        self.trials += other.trials
        self.notes.extend(other.notes)
        return self

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        where = "/".join(str(w) for w in self.where)
        return (f"{flag}  {self.name:<40s} trials={self.trials:<5d} max_abs={self.max_abs:.3e} "
                f"max_rel={self.max_rel:.3e} at={where or '-'} ({self.seconds:.2f}s)")


def compare(name, analytic, reference, atol, rtol=0.0, where=()):
    """Entrywise check ``|a - r| <= max(atol, rtol * |r|)``.

    ``where`` is prefixed to the (row, col) of the worst entry.
    """
    a = np.atleast_2d(np.asarray(analytic, dtype=np.float64))
    r = np.atleast_2d(np.asarray(reference, dtype=np.float64))
    if a.shape != r.shape:
        return CheckReport(name, math.inf, math.inf, tuple(where) + ("shape",), atol, rtol, False, 1)
    err = np.abs(a - r)
    bound = np.maximum(atol, rtol * np.abs(r))
    ok = bool(np.all(err <= bound)) and bool(np.all(np.isfinite(a)))
    idx = np.unravel_index(int(np.argmax(err)), err.shape) if err.size else ()
    rel = err / np.maximum(np.abs(r), np.finfo(float).tiny)
    return CheckReport(name, float(err.max(initial=0.0)), float(rel.max(initial=0.0)),
                       tuple(where) + tuple(int(i) for i in idx), atol, rtol, ok, 1)


def finite_diff(evaluate, pair, side, step=FD_STEP):
    """Central differences of ``evaluate(LogitPair) -> float`` w.r.t. ``o_m`` or ``o_n``."""
    if side not in ("m", "n"):
        raise ValueError(f"side must be 'm' or 'n', got {side!r}")
    if not 1e-7 <= step <= 1e-3:
        raise ValueError(f"step {step} outside [1e-7, 1e-3]")
    base = pair.o_m if side == "m" else pair.o_n
    out = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        vals = []
        for sgn in (1.0, -1.0):
            x = base.copy()
            x[idx] += sgn * step
            p = LogitPair(x, pair.o_n) if side == "m" else LogitPair(pair.o_m, x)
            v = float(evaluate(p))
            if not math.isfinite(v):
                raise ValueError(f"evaluator returned non-finite value {v} at {idx}")
            vals.append(v)
        out[idx] = (vals[0] - vals[1]) / (2.0 * step)
    return out


# ---------------------------------------------------------------------------
# value oracles written straight from the definitions


def _log_probs(o):
    o = np.atleast_2d(o)
    top = o.max(axis=1, keepdims=True)
    return o - top - np.log(np.exp(o - top).sum(axis=1, keepdims=True))


def _kl_value(o_m, o_n):
    lp, lq = _log_probs(o_m), _log_probs(o_n)
    return float(np.mean(np.sum(np.exp(lp) * (lp - lq), axis=1)))


def _ce_value(s_m, o_n):
    return float(np.mean(-np.sum(s_m * _log_probs(o_n), axis=1)))


def _wmse_value(o_m, o_n, c):
    """1/4 sum_b sum_j sum_k c_j c_k ((om_j - om_k) - (on_j - on_k))^2 / sum_b (sum c)^2."""
    total = 0.0
    for b in range(o_m.shape[0]):
        dm = o_m[b][:, None] - o_m[b][None, :]
        dn = o_n[b][:, None] - o_n[b][None, :]
        w = np.outer(c[b], c[b])
        total += float(np.sum(w * (dm - dn) ** 2))
    return 0.25 * total / float(np.sum(np.sum(c, axis=1) ** 2))


def _jsd_value(o_m, o_n):
    p, q = np.exp(_log_probs(o_m)), np.exp(_log_probs(o_n))
    m = 0.5 * (p + q)
    return float(np.mean(0.5 * np.sum(p * np.log(p / m), axis=1) + 0.5 * np.sum(q * np.log(q / m), axis=1)))


def decoupled_oracle(pair, config, factors, break_asymmetry):
    """Evaluators ``(f_m, f_n)`` of the decoupled loss with stopped pieces frozen.

    ``factors`` are the (already gamma-powered) weight factors at temperature
    ``t``; they and ``softmax(o_m / t)`` in the cross-entropy stay fixed.
    """
    t = config.kd_temperature
    a, b = config.alpha, config.beta
    om0, on0 = pair.o_m / t, pair.o_n / t
    s_m0 = np.exp(_log_probs(om0))

    def f_m(p):
        return t * t * a * _wmse_value(p.o_m / t, on0, factors)

    def f_n(p):
        on = p.o_n / t
        v = b * _ce_value(s_m0, on)
        if break_asymmetry:
            v += a * _wmse_value(om0, on, factors)
        return t * t * v

    return f_m, f_n


def fixture_pair():
    """The canonical two-class example: ``o_m = [1, 0]``, ``o_n = [0, 1]``."""
    return LogitPair(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))


def _fixture_oracle():
    # scalar math, independent of numpy paths
    e = math.e
    sm = [e / (1 + e), 1 / (1 + e)]
    sn = [1 / (1 + e), e / (1 + e)]
    kl = sum(p * math.log(p / q) for p, q in zip(sm, sn))
    ce = -sum(p * math.log(q) for p, q in zip(sm, sn))
    m = [0.5 * (p + q) for p, q in zip(sm, sn)]
    jsd = 0.5 * sum(p * math.log(p / r) for p, r in zip(sm, m)) + 0.5 * sum(q * math.log(q / r) for q, r in zip(sn, m))
    om, on = [1.0, 0.0], [0.0, 1.0]
    wmse = 0.25 * sum(sm[j] * sm[k] * ((om[j] - om[k]) - (on[j] - on[k])) ** 2 for j in range(2) for k in range(2))
    return {"kl": kl, "ce": ce, "wmse": wmse, "jsd": jsd, "kl_grad_n": [sn[0] - sm[0], sn[1] - sm[1]]}


# rounded to 5 decimals from the scalar oracle above
FIXTURE = {"kl": 0.46212, "ce": 1.04432, "wmse": 0.39322, "jsd": 0.11094, "kl_grad_n": [-0.46212, 0.46212]}


# ---------------------------------------------------------------------------
# trials


def _random_pair(rng, batch, classes, scale=5.0, detach_m=False):
    o_m = rng.uniform(-scale, scale, size=(batch, classes))
    o_n = rng.uniform(-scale, scale, size=(batch, classes))
    return LogitPair(o_m, o_n, detach_m=detach_m)


THEOREM_CONFIG = LossConfig(alpha=1.0, beta=1.0, gamma=1.0, weight_mode="sample_wise", break_asymmetry=False)


def equivalence_trial(rng, batch, classes, detach_m=False, atol=1e-10, losses=None):
    """Max gradient gap between KL and the decoupled loss at the reduction setting.

    Only gradients are compared; the values differ by design.
    """
    losses = losses or {}
    kl = losses.get("kl", dv.kl_loss)
    dkl = losses.get("dkl", dv.dkl_loss)
    pair = _random_pair(rng, batch, classes, detach_m=detach_m)
    r_kl, r_dkl = kl(pair), dkl(pair, THEOREM_CONFIG)
    rep = compare("theorem", r_kl.grad_n, r_dkl.grad_n, atol, where=("grad_n",))
    if not detach_m:
        rep = rep.merge(compare("theorem", r_kl.grad_m, r_dkl.grad_m, atol, where=("grad_m",)))
        rep.trials = 1
    return rep


def kernel_equivalence_trial(rng, batch, classes, gamma, break_asymmetry=True, atol=1e-9):
    """Naive vs memory-efficient weighted pairwise MSE, value and both gradients."""
    pair = _random_pair(rng, batch, classes)
    weights = WeightTensor.sample_wise(pair.o_m, gamma)
    a = dv.wmse_naive(pair, weights, break_asymmetry)
    b = dv.wmse_efficient(pair, weights, break_asymmetry)
    rep = compare("kernel", [[b.value]], [[a.value]], atol, where=("value",))
    rep.merge(compare("kernel", b.grad_m, a.grad_m, atol, where=("grad_m",)))
    rep.merge(compare("kernel", b.grad_n, a.grad_n, atol, where=("grad_n",)))
    rep.trials = 1
    return rep


def efficient_kernel_peak_bytes(batch=32, classes=10000, seed=0):
    """Peak traced allocation of one efficient-kernel call (inputs excluded)."""
    rng = Rng(seed, 99)
    pair = _random_pair(rng, batch, classes)
    weights = WeightTensor.sample_wise(pair.o_m, 0.5)
    tracemalloc.start()
    try:
        dv.wmse_efficient(pair, weights, True)
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    return peak


def _class_table(rng, classes):
    table = ClassWeightTable(classes)
    labels = np.arange(4 * classes) % classes
    table.update(rng.uniform(-3, 3, size=(labels.size, classes)), labels)
    return table.commit()


def fd_cases():
    """(name, builder) pairs; ``builder(rng, B, C)`` -> (pair, analytic LossResult, f_m, f_n)."""
    cases = []

    def plain(name, loss, oracle):
        def build(rng, B, C, losses):
            pair = _random_pair(rng, B, C)
            res = losses.get(name, loss)(pair)
            f = lambda p: oracle(p.o_m, p.o_n)  # noqa: E731
            return pair, res, f, f
        cases.append((name, build))

    plain("kl", dv.kl_loss, _kl_value)
    plain("jsd", dv.jsd_loss, _jsd_value)

    def build_ce(rng, B, C, losses):
        pair = _random_pair(rng, B, C)
        res = dv.soft_cross_entropy(pair)
        s_m0 = np.exp(_log_probs(pair.o_m))
        return pair, res, None, lambda p: _ce_value(s_m0, p.o_n)
    cases.append(("soft_cross_entropy", build_ce))

    for kernel in ("naive", "efficient"):
        for ba in (False, True):
            def build_w(rng, B, C, losses, kernel=kernel, ba=ba):
                pair = _random_pair(rng, B, C)
                gamma = float(rng.uniform(0.0, 1.0))
                weights = WeightTensor.sample_wise(pair.o_m, gamma)
                fn = dv.wmse_naive if kernel == "naive" else dv.wmse_efficient
                res = fn(pair, weights, ba)
                c = weights.c
                f_m = lambda p: _wmse_value(p.o_m, pair.o_n, c)  # noqa: E731
                f_n = (lambda p: _wmse_value(pair.o_m, p.o_n, c)) if ba else (lambda p: 0.0)
                return pair, res, f_m, f_n
            cases.append((f"wmse_{kernel}_ba_{'on' if ba else 'off'}", build_w))

    for ba in (False, True):
        def build_d(rng, B, C, losses, ba=ba):
            pair = _random_pair(rng, B, C)
            cfg = LossConfig(alpha=float(rng.uniform(0.5, 4)), beta=float(rng.uniform(0.5, 4)),
                             gamma=1.0, break_asymmetry=ba)
            res = dv.dkl_loss(pair, cfg)
            c = np.exp(_log_probs(pair.o_m))
            return (pair, res) + decoupled_oracle(pair, cfg, c, ba)
        cases.append((f"dkl_ba_{'on' if ba else 'off'}", build_d))

    for mode in ("sample_wise", "class_wise"):
        for gamma in (0.0, 0.3, 1.0):
            def build_g(rng, B, C, losses, mode=mode, gamma=gamma):
                pair = _random_pair(rng, B, C)
                t = (1.0, 2.0, 4.0)[rng.integers(3)]
                cfg = LossConfig(alpha=float(rng.uniform(0.5, 4)), beta=float(rng.uniform(0.5, 4)),
                                 gamma=gamma, weight_mode=mode, kd_temperature=t)
                if mode == "class_wise":
                    table = _class_table(rng, C)
                    labels = rng.integers(C, size=B)
                    res = dv.gkl_loss(pair, cfg, table, labels)
                    c = table.rows[labels] ** gamma
                else:
                    res = dv.gkl_loss(pair, cfg)
                    c = np.exp(_log_probs(pair.o_m / t)) ** gamma
                return (pair, res) + decoupled_oracle(pair, cfg, c, True)
            cases.append((f"gkl_{mode}_gamma_{gamma:g}", build_g))
    return cases


def fd_trial(builder, rng, B, C, losses=None, name="fd"):
    pair, res, f_m, f_n = builder(rng, B, C, losses or {})
    rep = CheckReport(name, trials=1, atol=FD_ATOL, rtol=FD_RTOL)
    if res.grad_m is not None and f_m is not None:
        rep.merge(compare(name, res.grad_m, finite_diff(f_m, pair, "m"), FD_ATOL, FD_RTOL, ("grad_m",)))
    if res.grad_n is not None and f_n is not None:
        rep.merge(compare(name, res.grad_n, finite_diff(f_n, pair, "n"), FD_ATOL, FD_RTOL, ("grad_n",)))
    rep.trials = 1
    return rep


# ---------------------------------------------------------------------------
# suites


def _timed(report, start):
    report.seconds = time.perf_counter() - start
    return report


THEOREM_SIZES = tuple((B, C) for B in (1, 8) for C in (2, 10, 100))


def theorem_suite(seed=0, trials=100, losses=None, sizes=THEOREM_SIZES):
    reports = []
    for B, C in sizes:
        start = time.perf_counter()
        rng = Rng(seed, 1000 + 10 * B + C)
        rep = CheckReport(f"theorem B={B} C={C}", atol=1e-10)
        for _ in range(trials):
            rep.merge(equivalence_trial(rng, B, C, losses=losses))
        reports.append(_timed(rep, start))
    start = time.perf_counter()
    rng = Rng(seed, 1999)
    rep = CheckReport("theorem detach_m B=8 C=10", atol=1e-10)
    for _ in range(trials):
        rep.merge(equivalence_trial(rng, 8, 10, detach_m=True, losses=losses))
    reports.append(_timed(rep, start))
    return reports


def fd_suite(seed=0, trials=50, losses=None):
    reports = []
    for k, (name, builder) in enumerate(fd_cases()):
        start = time.perf_counter()
        rng = Rng(seed, 2000 + k)
        rep = CheckReport(f"finite-diff {name}", atol=FD_ATOL, rtol=FD_RTOL)
        for i in range(trials):
            B = (1, 2, 4)[i % 3]
            C = (2, 3, 7, 10)[i % 4]
            rep.merge(fd_trial(builder, rng, B, C, losses, name))
        reports.append(_timed(rep, start))
    return reports


def kernel_suite(seed=0, trials=25, max_classes=1000, memory_limit=100 * 2 ** 20):
    reports = []
    for g_idx, gamma in enumerate((0.0, 0.3, 0.5, 1.0)):
        start = time.perf_counter()
        rng = Rng(seed, 3000 + g_idx)
        rep = CheckReport(f"kernel gamma={gamma:g}", atol=1e-9)
        sizes = [c for c in (2, 10, 100, 1000) if c <= max_classes]
        for i in range(trials):
            C = sizes[i % len(sizes)]
            B = 4 if C == 1000 else 16
            rep.merge(kernel_equivalence_trial(rng, B, C, gamma, break_asymmetry=bool(i % 2)))
        reports.append(_timed(rep, start))
    start = time.perf_counter()
    peak = efficient_kernel_peak_bytes(seed=seed)
    rep = CheckReport("kernel memory B=32 C=10000", float(peak), 0.0, ("bytes",), memory_limit, 0.0,
                      peak < memory_limit, 1)
    rep.notes.append(f"peak {peak / 2 ** 20:.1f} MiB")
    reports.append(_timed(rep, start))
    return reports


def eq10_pattern(pair, weights):
    """``sum_j W[i,j] (dm[i,j] - dn[i,j]) / normalizer`` by explicit loops."""
    B, C = pair.o_m.shape
    out = np.zeros((B, C))
    for b in range(B):
        for i in range(C):
            acc = 0.0
            for j in range(C):
                w = weights.c[b, i] * weights.c[b, j]
                acc += w * ((pair.o_m[b, i] - pair.o_m[b, j]) - (pair.o_n[b, i] - pair.o_n[b, j]))
            out[b, i] = acc / weights.normalizer
    return out


def stopgrad_suite(seed=0, trials=50, losses=None):
    losses = losses or {}
    dkl = losses.get("dkl", dv.dkl_loss)
    start = time.perf_counter()
    rng = Rng(seed, 4000)
    off = CheckReport("stop-grad detach_m BA off", atol=1e-15)
    on = CheckReport("stop-grad detach_m BA on", atol=1e-10)
    for i in range(trials):
        B, C = (1, 4, 8)[i % 3], (2, 5, 10)[i % 3]
        pair = _random_pair(rng, B, C, detach_m=True)
        alpha, beta = float(rng.uniform(0.5, 4)), float(rng.uniform(0.5, 4))
        ce = dv.soft_cross_entropy(pair)

        r = dkl(pair, LossConfig(alpha=alpha, beta=beta, break_asymmetry=False))
        off.merge(compare("", r.grad_n, beta * ce.grad_n, 1e-15, where=("grad_n",)))

        r = dkl(pair, LossConfig(alpha=alpha, beta=beta, break_asymmetry=True))
        extra = r.grad_n - beta * ce.grad_n
        pattern = -alpha * eq10_pattern(pair, WeightTensor.sample_wise(pair.o_m, 1.0))
        rep = compare("", extra, pattern, 1e-10, where=("grad_n",))
        if not np.any(np.abs(extra) > 0):
            rep.passed = False
            rep.notes.append("BA term vanished")
        on.merge(rep)
    _timed(off, start)
    on.seconds = off.seconds
    return [off, on]


def jsd_suite(seed=0, trials=50, losses=None):
    losses = losses or {}
    jsd = losses.get("jsd", dv.jsd_loss)
    start = time.perf_counter()
    rng = Rng(seed, 5000)
    sym = CheckReport("jsd symmetry", atol=1e-12)
    virt = CheckReport("jsd virtual-logit gradient", atol=1e-12)
    for i in range(trials):
        B, C = (1, 3)[i % 2], (2, 6, 10)[i % 3]
        pair = _random_pair(rng, B, C)
        a, b = jsd(pair), jsd(pair.swapped())
        sym.merge(compare("", [[a.value]], [[b.value]], 1e-12, where=("value",)))
        # 1/2 * sum_j s_n^i s_n^j (dn_ij - dm'_ij) / B with o_m' = log((s_m + s_n) / 2)
        p, q = np.exp(_log_probs(pair.o_m)), np.exp(_log_probs(pair.o_n))
        om_virtual = np.log(0.5 * (p + q))
        ref = np.zeros((B, C))
        for r in range(B):
            for ii in range(C):
                ref[r, ii] = sum(q[r, ii] * q[r, j] * ((pair.o_n[r, ii] - pair.o_n[r, j])
                                 - (om_virtual[r, ii] - om_virtual[r, j])) for j in range(C))
        virt.merge(compare("", a.grad_n, 0.5 * ref / B, 1e-12, where=("grad_n",)))
    _timed(sym, start)
    virt.seconds = sym.seconds
    return [sym, virt]


def fixture_suite(losses=None):
    losses = losses or {}
    start = time.perf_counter()
    pair = fixture_pair()
    oracle = _fixture_oracle()
    kl = losses.get("kl", dv.kl_loss)(pair)
    got = {
        "kl": kl.value,
        "ce": dv.soft_cross_entropy(pair).value,
        "wmse": dv.wmse_efficient(pair, WeightTensor.sample_wise(pair.o_m, 1.0)).value,
        "jsd": losses.get("jsd", dv.jsd_loss)(pair).value,
        "kl_grad_n": kl.grad_n[0],
    }
    reports = []
    for key, frozen in FIXTURE.items():
        # round-half-to-5-decimals agreement with the frozen value, and oracle agreement
        rep = compare(f"fixture {key}", np.round(got[key], 5), frozen, 1e-12, where=(key,))
        rep.merge(compare("", got[key], oracle[key], 1e-12, where=(key, "oracle")))
        reports.append(_timed(rep, start))
    return reports


def run_all(seed=0, trials=None, losses=None, sizes=THEOREM_SIZES):
    """Every verification suite; ``trials`` overrides the per-suite defaults.

    ``sizes`` lists the ``(batch, classes)`` shapes for the equivalence suite.
    """
    t = {} if trials is None else {"trials": trials}
    reports = []
    reports += theorem_suite(seed, losses=losses, sizes=sizes, **t)
    reports += fd_suite(seed, losses=losses, **t)
    reports += kernel_suite(seed, **t)
    reports += stopgrad_suite(seed, losses=losses, **t)
    reports += jsd_suite(seed, losses=losses, **t)
    reports += fixture_suite(losses)
    return reports
