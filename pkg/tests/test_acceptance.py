"""End-to-end acceptance criteria, each at its stated tolerance.

Every test records a one-line verdict that is printed in the pytest terminal
summary under "acceptance criteria".
"""
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from gklkit import gradcheck as gc
from gklkit.cli import main
from gklkit.checkpoint import read_metrics, read_result
from gklkit.config import load_config
from gklkit.dataset import make_blobs
from gklkit.divergence import LogitPair, LossConfig, kl_loss, jsd_loss, soft_cross_entropy, wmse_naive, WeightTensor
from gklkit.model import TrainConfig
from gklkit.numerics import Rng
from gklkit.pipeline import distill, train_supervised

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _summary(reports):
    worst = max(reports, key=lambda r: r.max_abs)
    return all(r.passed for r in reports), f"worst {worst.name} max_abs={worst.max_abs:.2e}"


def test_criterion_1_theorem_equivalence(record):
    start = time.perf_counter()
    reports = gc.theorem_suite(seed=0, trials=100)
    seconds = time.perf_counter() - start
    ok, detail = _summary(reports)
    shapes = {r.name for r in reports}
    assert {f"theorem B={B} C={C}" for B in (1, 8) for C in (2, 10, 100)} <= shapes
    assert all(r.trials == 100 for r in reports)
    ok = ok and max(r.max_abs for r in reports) < 1e-10 and seconds < 10
    record(1, ok, f"{detail}, {seconds:.1f} s (limit 1e-10, 10 s)")
    assert ok


def test_criterion_2_finite_differences(record):
    start = time.perf_counter()
    reports = gc.fd_suite(seed=0, trials=50)
    seconds = time.perf_counter() - start
    names = {r.name.removeprefix("finite-diff ") for r in reports}
    required = {"kl", "soft_cross_entropy", "jsd", "dkl_ba_off", "dkl_ba_on"}
    required |= {f"wmse_{k}_ba_{ba}" for k in ("naive", "efficient") for ba in ("on", "off")}
    required |= {f"gkl_{m}_gamma_{g}" for m in ("sample_wise", "class_wise") for g in ("0", "0.3", "1")}
    assert required <= names, required - names
    assert all(r.trials >= 50 for r in reports)
    ok, _ = _summary(reports)
    worst = max(reports, key=lambda r: r.max_rel if r.max_abs > gc.FD_ATOL else 0.0)
    ok = ok and seconds < 30
    record(2, ok, f"{len(reports)} cases x 50 trials, worst {worst.name} "
                  f"max_abs={worst.max_abs:.2e} max_rel={worst.max_rel:.2e}, {seconds:.1f} s")
    assert ok


def test_criterion_3_kernel_equivalence(record):
    # the suite cycles C through 2, 10, 100, 1000 within each gamma
    reports = gc.kernel_suite(seed=0, trials=25, max_classes=1000)
    numeric = [r for r in reports if r.name.startswith("kernel gamma=")]
    assert {r.name for r in numeric} == {f"kernel gamma={g}" for g in ("0", "0.3", "0.5", "1")}
    assert all(r.trials == 25 for r in numeric)
    peak = gc.efficient_kernel_peak_bytes(32, 10000)
    ok, detail = _summary(numeric)
    ok = ok and all(r.passed for r in reports) and max(r.max_abs for r in numeric) < 1e-9
    ok = ok and peak < 100 * 2 ** 20
    record(3, ok, f"{detail}; B=32 C=10000 peak {peak / 2 ** 20:.1f} MiB (limit 100)")
    assert ok


def test_criterion_4_stop_gradient(record):
    reports = gc.stopgrad_suite(seed=0, trials=50)
    ok, detail = _summary(reports)
    record(4, ok, detail)
    assert ok


def test_criterion_5_fixture_literals(record):
    # literal values as published in the build contract, compared to 5 decimals
    literal = {"kl": 0.46212, "ce": 1.04437, "wmse": 0.39322, "jsd": 0.11093}
    p = LogitPair([1.0, 0.0], [0.0, 1.0])
    got = {
        "kl": kl_loss(p).value,
        "ce": soft_cross_entropy(p).value,
        "wmse": wmse_naive(p, WeightTensor.sample_wise(p.o_m, 1.0)).value,
        "jsd": jsd_loss(p).value,
    }
    grad_n = kl_loss(p).grad_n[0]
    misses = {k: got[k] for k in literal if abs(got[k] - literal[k]) >= 5e-6}
    grad_ok = np.all(np.abs(grad_n - [-0.46212, 0.46212]) < 5e-6)
    ok = not misses and bool(grad_ok)
    detail = ", ".join(f"{k} {got[k]:.6f} vs {literal[k]}" for k in misses) or "all literals reproduced"
    record(5, ok, detail + ("" if grad_ok else f"; grad_n {grad_n}"))
    assert ok, detail


def test_criterion_6_training_equivalence(record):
    train = make_blobs(Rng(0, 10), 10, 200, radius=1.0, sigma=0.25)
    test = make_blobs(Rng(0, 11), 10, 100, radius=1.0, sigma=0.25)
    teacher, _ = train_supervised([2, 64, 64, 10], train, TrainConfig(epochs=5, seed=1000))
    theorem = LossConfig(alpha=1.0, beta=1.0, gamma=1.0, weight_mode="sample_wise", break_asymmetry=False)
    runs = {loss: distill(teacher, [2, 32, 32, 10], train, test,
                          TrainConfig(epochs=5, seed=0, loss=loss, loss_config=theorem))
            for loss in ("kl", "dkl")}
    dist = float(np.max(np.abs(runs["kl"].model.parameters() - runs["dkl"].model.parameters())))
    ok = dist < 1e-9 and runs["kl"].clean_acc == runs["dkl"].clean_acc
    record(6, ok, f"parameter Linf distance {dist:.2e}, accuracy {runs['kl'].clean_acc:.4f} vs "
                  f"{runs['dkl'].clean_acc:.4f}")
    assert ok


def _run_cli(kind, name, out):
    assert main([kind, "--config", str(CONFIGS / name), "--out", str(out)]) == 0
    seeds = load_config(CONFIGS / name)["seeds"]
    results = [read_result(out / f"seed_{s}" / "result.json") for s in seeds]
    for s in seeds:
        assert read_metrics(out / f"seed_{s}" / "metrics.csv")[-1]["epoch"] == "final"
    return results


@pytest.mark.slow
def test_criterion_7_kd_direction(record, tmp_path):
    start = time.perf_counter()
    kl = _run_cli("distill", "kd_longtail_kl.json", tmp_path / "kl")
    gkl = _run_cli("distill", "kd_longtail_gkl.json", tmp_path / "gkl")
    seconds = time.perf_counter() - start
    assert len(kl) == len(gkl) == 5
    overall = 100 * (np.mean([r["clean_acc"] for r in gkl]) - np.mean([r["clean_acc"] for r in kl]))
    head = 100 * (np.mean([r["group_acc"]["many"] for r in gkl]) - np.mean([r["group_acc"]["many"] for r in kl]))
    ok = overall >= -0.5 and head >= -1.0 and seconds < 300
    record(7, ok, f"GKL-KL overall {overall:+.2f} pt (>= -0.5), many {head:+.2f} pt (>= -1), {seconds:.0f} s")
    assert ok


@pytest.mark.slow
def test_criterion_8_adversarial_direction(record, tmp_path):
    start = time.perf_counter()
    kl = _run_cli("advtrain", "adv_blobs_kl.json", tmp_path / "kl")
    gkl = _run_cli("advtrain", "adv_blobs_gkl.json", tmp_path / "gkl")
    seconds = time.perf_counter() - start
    assert len(kl) == len(gkl) == 5
    robust = 100 * (np.mean([r["robust_acc"] for r in gkl]) - np.mean([r["robust_acc"] for r in kl]))
    margin_diff = np.mean([r["margins"] for r in gkl], axis=0) - np.mean([r["margins"] for r in kl], axis=0)
    positive = float(np.mean(margin_diff > 0))
    robust_ok, margin_ok = robust >= -1.0, positive >= 0.6
    ok = robust_ok and margin_ok and seconds < 600
    record(8, ok, f"robust GKL-KL {robust:+.2f} pt (>= -1: {'ok' if robust_ok else 'no'}); "
                  f"positive margin difference on {positive:.0%} of classes (>= 60%: {'ok' if margin_ok else 'no'}, "
                  f"mean diff {margin_diff.mean():+.3f}); {seconds:.0f} s")
    assert ok


def test_criterion_9_verify_command(record):
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "gklkit.cli", "verify"], capture_output=True, text=True)
    seconds = time.perf_counter() - start
    lines = proc.stdout.strip().splitlines()
    ok = proc.returncode == 0 and seconds < 60
    record(9, ok, f"exit {proc.returncode}, {lines[-1] if lines else 'no output'}, wall {seconds:.1f} s")
    assert ok, proc.stdout[-2000:] + proc.stderr[-2000:]
