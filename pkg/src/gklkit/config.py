"""Experiment config files: JSON parsing, validation and object construction.

A config is a JSON object::

    {
      "kind": "distill",                       # or "advtrain"
      "dataset": {"generator": "blobs", ...},   # see DATASET_KEYS
      "teacher": {"layers": [2, 64, 64, 10], "train": {...}} ,  # distill only
      "student": {"layers": [2, 32, 32, 10]},                   # distill only
      "model": {"layers": [2, 64, 64, 10]},                     # advtrain only
      "train": {...}, "loss": {...}, "attack": {...}, "lambda": 6.0,
      "seeds": [0, 1, 2], "output_dir": "runs/kd"
    }

Unknown keys are rejected; every error names the offending key path.
"""
from __future__ import annotations

import json

import numpy as np

from .attack import AttackConfig
from .dataset import load_idx, long_tail_counts, make_blobs, make_spirals
from .divergence import LossConfig
from .model import TrainConfig
from .numerics import Rng
from .pipeline import DIVERGENCES

ADV_DIVERGENCES = ("kl", "dkl", "gkl", "jsd")

__all__ = ["ConfigError", "attack_configs", "build_datasets", "load_config", "loss_config", "parse_config",
           "teacher_train_config", "train_config", "validate_config"]

# dataset streams, disjoint from the training streams in pipeline
STREAM_TRAIN_DATA, STREAM_TEST_DATA = 10, 11


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the key path."""


NUM = (int, float)

TRAIN_KEYS = {"epochs": int, "batch_size": int, "lr": NUM, "schedule": str, "momentum": NUM,
              "weight_decay": NUM, "loss": str, "hard_weight": NUM, "div_weight": NUM}
# the run seed comes from "seeds"; only a pretrained-in-place teacher may pin its own
TEACHER_TRAIN_KEYS = {**{k: v for k, v in TRAIN_KEYS.items() if k not in ("loss", "hard_weight", "div_weight")},
                      "seed": int}
LOSS_KEYS = {"alpha": NUM, "beta": NUM, "gamma": NUM, "tau": NUM, "weight_mode": str,
             "break_asymmetry": bool, "kd_temperature": NUM}
ATTACK_KEYS = {"epsilon": NUM, "step_size": NUM, "train_steps": int, "eval_steps": int,
               "random_start": bool, "objective": str}
DATASET_KEYS = {
    "blobs": {"generator": str, "num_classes": int, "n_per_class": int, "long_tail": dict,
              "test_per_class": int, "radius": NUM, "sigma": NUM, "seed": int},
    "spirals": {"generator": str, "n": int, "test_n": int, "noise": NUM, "turns": NUM, "seed": int},
    "idx": {"generator": str, "train_images": str, "train_labels": str, "test_images": str,
            "test_labels": str, "num_classes": int},
}
LONG_TAIL_KEYS = {"n_max": int, "rho": NUM}
MODEL_KEYS = {"layers": list}
TEACHER_KEYS = {"layers": list, "checkpoint": str, "train": dict}
TOP_KEYS = {"kind": str, "dataset": dict, "teacher": dict, "student": dict, "model": dict,
            "train": dict, "loss": dict, "attack": dict, "lambda": NUM, "seeds": list, "output_dir": str}
REQUIRED = {
    "distill": ("kind", "dataset", "teacher", "student", "train", "seeds"),
    "advtrain": ("kind", "dataset", "model", "train", "attack", "seeds"),
}


def _check_block(block, schema, path, required=()):
    if not isinstance(block, dict):
        raise ConfigError(f"{path}: expected an object, got {type(block).__name__}")
    for key in block:
        if key not in schema:
            raise ConfigError(f"{path}.{key}: unknown key")
        want = schema[key]
        value = block[key]
        ok = isinstance(value, want) and not (want in (int, NUM) and isinstance(value, bool))
        if not ok:
            raise ConfigError(f"{path}.{key}: expected {getattr(want, '__name__', 'number')}, got {value!r}")
    for key in required:
        if key not in block:
            raise ConfigError(f"{path}.{key}: missing required key")


def _check_layers(layers, path):
    if len(layers) < 2 or not all(isinstance(v, int) and not isinstance(v, bool) and v > 0 for v in layers):
        raise ConfigError(f"{path}: expected a list of at least two positive integers")


def validate_dataset(block, path="dataset"):
    if not isinstance(block, dict) or "generator" not in block:
        raise ConfigError(f"{path}.generator: missing required key")
    gen = block["generator"]
    if gen not in DATASET_KEYS:
        raise ConfigError(f"{path}.generator: unknown generator {gen!r}; expected one of {sorted(DATASET_KEYS)}")
    required = {"blobs": ("num_classes",), "spirals": ("n",),
                "idx": ("train_images", "train_labels", "test_images", "test_labels")}[gen]
    _check_block(block, DATASET_KEYS[gen], path, required)
    if "long_tail" in block:
        _check_block(block["long_tail"], LONG_TAIL_KEYS, f"{path}.long_tail", ("n_max",))


def validate_config(cfg):
    """Raise :class:`ConfigError` unless ``cfg`` is a complete, well-typed config."""
    _check_block(cfg, TOP_KEYS, "config", ("kind",))
    kind = cfg["kind"]
    if kind not in REQUIRED:
        raise ConfigError(f"config.kind: expected one of {sorted(REQUIRED)}, got {kind!r}")
    _check_block(cfg, TOP_KEYS, "config", REQUIRED[kind])
    validate_dataset(cfg["dataset"])
    _check_block(cfg["train"], TRAIN_KEYS, "train")
    if "loss" in cfg:
        _check_block(cfg["loss"], LOSS_KEYS, "loss")
    if kind == "distill":
        _check_block(cfg["teacher"], TEACHER_KEYS, "teacher", ("layers",))
        _check_layers(cfg["teacher"]["layers"], "teacher.layers")
        if "checkpoint" not in cfg["teacher"] and "train" not in cfg["teacher"]:
            raise ConfigError("teacher.checkpoint: missing; give a teacher checkpoint or a teacher.train block")
        if "train" in cfg["teacher"]:
            _check_block(cfg["teacher"]["train"], TEACHER_TRAIN_KEYS, "teacher.train")
        _check_block(cfg["student"], MODEL_KEYS, "student", ("layers",))
        _check_layers(cfg["student"]["layers"], "student.layers")
        for name in ("model", "attack"):
            if name in cfg:
                raise ConfigError(f"config.{name}: not used by kind 'distill'")
    else:
        _check_block(cfg["model"], MODEL_KEYS, "model", ("layers",))
        _check_layers(cfg["model"]["layers"], "model.layers")
        _check_block(cfg["attack"], ATTACK_KEYS, "attack", ("epsilon",))
        for name in ("teacher", "student"):
            if name in cfg:
                raise ConfigError(f"config.{name}: not used by kind 'advtrain'")
    allowed = DIVERGENCES if kind == "distill" else ADV_DIVERGENCES
    if cfg["train"].get("loss", "kl") not in allowed:
        raise ConfigError(f"train.loss: expected one of {list(allowed)}, got {cfg['train']['loss']!r}")
    seeds = cfg["seeds"]
    if not seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        raise ConfigError("config.seeds: expected a non-empty list of integers")
    # construct once so range errors surface with their key path
    for name, fn in (("loss", loss_config), ("train", train_config)):
        try:
            fn(cfg)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{name}: {e}") from None
    if kind == "distill" and "train" in cfg["teacher"]:
        try:
            teacher_train_config(cfg, 0)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"teacher.train: {e}") from None
    if kind == "advtrain":
        try:
            attack_configs(cfg)
        except ValueError as e:
            raise ConfigError(f"attack: {e}") from None
    return cfg


def parse_config(text, source="<config>"):
    """Parse and validate JSON text; parse errors carry line and column."""
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}: JSON parse error at line {e.lineno}, column {e.colno}: {e.msg}") from None
    return validate_config(cfg)


def load_config(path):
    with open(path) as f:
        return parse_config(f.read(), str(path))


def loss_config(cfg):
    return LossConfig(**cfg.get("loss", {}))


def train_config(cfg, seed=0):
    return TrainConfig(loss_config=loss_config(cfg), seed=seed, **cfg["train"])


def teacher_train_config(cfg, seed):
    """Teacher cross-entropy schedule; its seed defaults to ``seed + 1000``."""
    block = dict(cfg["teacher"].get("train", {}))
    block.setdefault("seed", seed + 1000)
    block["loss"] = "hard_ce"
    return TrainConfig(**block)


def attack_configs(cfg):
    """``(training attack, evaluation attack)`` from the attack block."""
    a = cfg["attack"]
    eps = float(a["epsilon"])
    common = {"objective": a.get("objective", "kl_to_natural")}
    if "step_size" in a:
        common["step_size"] = float(a["step_size"])
    train = AttackConfig(eps, steps=a.get("train_steps", 10), random_start=a.get("random_start", True), **common)
    evaluation = AttackConfig(eps, step_size=common.get("step_size"), steps=a.get("eval_steps", 20),
                              random_start=False, objective="cross_entropy")
    return train, evaluation


def build_datasets(block, seed=0):
    """``(train, test, train_counts)`` for a dataset block.

    Synthetic data is drawn from ``block["seed"]`` if given, else the run seed.
    """
    validate_dataset(block)
    gen = block["generator"]
    s = block.get("seed", seed)
    if gen == "blobs":
        C = block["num_classes"]
        radius, sigma = block.get("radius", 1.0), block.get("sigma", 0.25)
        if "long_tail" in block:
            lt = block["long_tail"]
            counts = long_tail_counts(lt["n_max"], C, lt.get("rho", 0.05))
        else:
            counts = np.full(C, block.get("n_per_class", 200), dtype=np.int64)
        train = make_blobs(Rng(s, STREAM_TRAIN_DATA), C, counts, radius, sigma)
        test = make_blobs(Rng(s, STREAM_TEST_DATA), C, block.get("test_per_class", 200), radius, sigma)
        return train, test, train.class_counts()
    if gen == "spirals":
        noise, turns = block.get("noise", 0.05), block.get("turns", 1.5)
        train = make_spirals(Rng(s, STREAM_TRAIN_DATA), block["n"], noise, turns)
        test = make_spirals(Rng(s, STREAM_TEST_DATA), block.get("test_n", block["n"]), noise, turns)
        return train, test, train.class_counts()
    C = block.get("num_classes")
    train = load_idx(block["train_images"], block["train_labels"], C)
    test = load_idx(block["test_images"], block["test_labels"], C or train.num_classes)
    return train, test, train.class_counts()
