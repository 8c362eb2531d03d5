"""``gklkit`` command line: verify, distill, advtrain, eval, margins.

Exit status: 0 success, 1 verification failure, 2 configuration error,
3 I/O error (unreadable or malformed input files).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import divergence as dv
from . import gradcheck
from .attack import AttackConfig
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint, write_metrics, write_result
from .config import (ConfigError, attack_configs, build_datasets, load_config, teacher_train_config,
                     train_config, validate_dataset)
from .dataset import IdxFormatError
from .pipeline import adversarial_train, class_table, distill, evaluate, train_supervised

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

FAULTS = ("kl-grad-n",)


def _flip_kl_grad_n(pair, temperature=1.0):
    res = dv.kl_loss(pair, temperature)
    return dv.LossResult(res.value, res.grad_m, None if res.grad_n is None else -res.grad_n)


def _parse_sizes(text):
    try:
        sizes = tuple(tuple(int(v) for v in item.lower().split("x")) for item in text.split(","))
    except ValueError:
        sizes = ()
    if not sizes or any(len(s) != 2 or s[0] < 1 or s[1] < 2 for s in sizes):
        raise ConfigError(f"--sizes: expected BxC[,BxC...] with B>=1, C>=2, got {text!r}")
    return sizes


def cmd_verify(args):
    losses = {"kl": _flip_kl_grad_n} if args.inject_fault == "kl-grad-n" else None
    sizes = _parse_sizes(args.sizes) if args.sizes else gradcheck.THEOREM_SIZES
    start = time.perf_counter()
    reports = gradcheck.run_all(args.seed, args.trials, losses=losses, sizes=sizes)
    for rep in reports:
        print(rep.line())
    failed = [r.name for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed in {time.perf_counter() - start:.1f} s")
    if failed:
        print("FAILED: " + ", ".join(failed))
        return EXIT_FAIL
    return EXIT_OK


def _run_seed(kind, cfg, seed, out_dir):
    """One seed of one experiment; writes its files under ``out_dir / seed_<n>``."""
    train, test, counts = build_datasets(cfg["dataset"], seed)
    config = train_config(cfg, seed)
    run_dir = Path(out_dir) / f"seed_{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    if kind == "distill":
        tblock = cfg["teacher"]
        if "checkpoint" in tblock:
            teacher, _, _ = load_checkpoint(tblock["checkpoint"])
            if teacher.sizes != tblock["layers"]:
                raise ConfigError(f"teacher.layers: {tblock['layers']} does not match checkpoint {teacher.sizes}")
        else:
            teacher, _ = train_supervised(tblock["layers"], train, teacher_train_config(cfg, seed))
            save_checkpoint(run_dir / "teacher.json", teacher, config=cfg)
        result = distill(teacher, cfg["student"]["layers"], train, test, config, train_counts=counts)
        extra = {"kind": kind, "loss": config.loss, "teacher_acc": float(np.mean(
            np.argmax(teacher.logits(test.inputs), axis=1) == test.labels))}
    else:
        train_attack, eval_attack = attack_configs(cfg)
        lam = float(cfg.get("lambda", 1.0))
        result = adversarial_train(cfg["model"]["layers"], train, test, config, train_attack, lam,
                                   eval_attack=eval_attack, train_counts=counts)
        extra = {"kind": kind, "loss": config.loss, "lambda": lam, "epsilon": train_attack.epsilon}
    write_result(run_dir / "result.json", result, extra)
    write_metrics(run_dir / "metrics.csv", result)
    save_checkpoint(run_dir / "model.json", result.model, result.table, cfg)
    return seed, result.clean_acc, result.robust_acc, result.group_acc, result.seconds


def _threads():
    raw = os.environ.get("GKLKIT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"GKLKIT_THREADS: expected a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"GKLKIT_THREADS: expected a positive integer, got {raw!r}")
    return n


def cmd_experiment(args):
    cfg = load_config(args.config)
    if cfg["kind"] != args.command:
        raise ConfigError(f"config.kind: {cfg['kind']!r} config given to the {args.command!r} command")
    seeds = [args.seed] if args.seed is not None else cfg["seeds"]
    out_dir = args.out or cfg.get("output_dir") or f"runs/{args.command}"
    workers = min(_threads(), len(seeds))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_run_seed, [args.command] * len(seeds), [cfg] * len(seeds), seeds,
                                 [out_dir] * len(seeds)))
    else:
        rows = [_run_seed(args.command, cfg, s, out_dir) for s in seeds]
    for seed, clean, robust, groups, seconds in rows:
        parts = [f"seed {seed}", f"clean_acc {clean:.4f}"]
        if robust is not None:
            parts.append(f"robust_acc {robust:.4f}")
        if groups:
            parts += [f"{k} {v:.4f}" for k, v in groups.items()]
        parts.append(f"{seconds:.1f} s")
        print("  ".join(parts))
    print(f"results in {out_dir}")
    return EXIT_OK


def _data_block(text):
    """``--data`` is inline JSON or a path to a JSON file holding a dataset block."""
    if text.lstrip().startswith("{"):
        source, raw = "--data", text
    else:
        source, raw = text, Path(text).read_text()
    try:
        block = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}: JSON parse error at line {e.lineno}, column {e.colno}: {e.msg}") from None
    validate_dataset(block, "data")
    return block


def _eval_split(args):
    model, _, _ = load_checkpoint(args.model)
    train, test, counts = build_datasets(_data_block(args.data), args.seed)
    data = train if args.split == "train" else test
    if data.dim != model.sizes[0] or data.num_classes != model.num_classes:
        raise ConfigError(f"data: {data.dim}-d inputs / {data.num_classes} classes do not fit "
                          f"model {model.sizes}")
    return model, data, counts


def cmd_eval(args):
    model, data, counts = _eval_split(args)
    attack = None if args.epsilon is None else AttackConfig(args.epsilon, steps=args.steps, random_start=False)
    result = evaluate(model, data, attack, train_counts=counts, seed=args.seed, tau=args.tau)
    print(f"clean_acc {result.clean_acc:.4f}")
    if result.robust_acc is not None:
        print(f"robust_acc {result.robust_acc:.4f} (PGD-{args.steps}, eps {args.epsilon})")
    for name, acc in (result.group_acc or {}).items():
        print(f"{name}_acc {acc:.4f}")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_result(args.out, result, {"model": str(args.model)})
    return EXIT_OK


def cmd_margins(args):
    model, data, _ = _eval_split(args)
    table = class_table(model, data, args.tau)
    margins = table.margins()
    print("class  margin     true_score")
    for y in range(model.num_classes):
        print(f"{y:5d}  {margins[y]:+.6f}  {table.rows[y, y]:.6f}")
    print(f"positive margins: {int((margins > 0).sum())}/{model.num_classes}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="gklkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the gradient verification suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=None, help="trials per case (default: per-suite)")
    p.add_argument("--sizes", default=None, help="equivalence shapes, e.g. 1x2,8x10")
    p.add_argument("--inject-fault", choices=FAULTS, default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    for name, text in (("distill", "knowledge distillation from a config"),
                       ("advtrain", "TRADES-style adversarial training from a config")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None, help="run only this seed")
        p.add_argument("--out", default=None, help="output directory (overrides output_dir)")
        p.set_defaults(func=cmd_experiment)

    for name, func, text in (("eval", cmd_eval, "clean and robust accuracy of a checkpoint"),
                             ("margins", cmd_margins, "per-class boundary margins of a checkpoint")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--model", required=True, help="checkpoint JSON")
        p.add_argument("--data", required=True, help="dataset block: inline JSON or a JSON file")
        p.add_argument("--split", choices=("train", "test"), default="test")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--tau", type=float, default=1.0)
        if name == "eval":
            p.add_argument("--epsilon", type=float, default=None, help="also report PGD robust accuracy")
            p.add_argument("--steps", type=int, default=20)
            p.add_argument("--out", default=None, help="write the result JSON here")
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "trials", None) is not None and args.trials < 1:
            raise ConfigError("--trials: must be at least 1")
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, CheckpointError, IdxFormatError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
