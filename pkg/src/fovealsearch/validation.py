"""Input and configuration validation.

Every run configuration is checked against the legal option matrix before
any data is touched; violations name the broken rule.  Array and corpus
checks guard the estimator entry points.
"""
from __future__ import annotations

import os

import numpy as np

from fovealsearch.encoding import LABEL_KINDS, TASK_HEATMAP_2D, TASK_HEATMAP_FLAT, TASK_ONEHOT
from fovealsearch.models import DUAL_ARCHITECTURES, HEAD_SIGMOID, HEAD_SOFTMAX


class ConfigError(ValueError):
    """An invalid option combination, reported before any work starts."""


def _rule(name: str, message: str) -> ConfigError:
    return ConfigError(f"rule {name}: {message}")


HIGH_LEVEL_TASK_ENCODINGS = (TASK_ONEHOT, TASK_HEATMAP_2D, TASK_HEATMAP_FLAT)


def check_common_options(cfg: dict) -> None:
    if cfg.get("label_encoding") not in LABEL_KINDS:
        raise _rule("label-encoding", f"label_encoding must be one of {LABEL_KINDS}")
    if not cfg.get("lr", 0) > 0:
        raise _rule("positive-lr", "learning rate must be positive")
    if cfg.get("batch_size", 0) < 1:
        raise _rule("batch-size", "batch size must be >= 1")
    if cfg.get("max_epochs", 0) < 1:
        raise _rule("max-epochs", "max_epochs must be >= 1")
    if cfg.get("patience", 0) < 1:
        raise _rule("patience", "patience must be >= 1")
    if not 0.0 <= cfg.get("dropout_rate", 0.0) < 1.0:
        raise _rule("dropout-rate", "dropout rate must lie in [0, 1)")
    if cfg.get("mask_radius", 1) < 1:
        raise _rule("mask-radius", "mask radius must be >= 1")
    if cfg.get("beam_width", 1) < 1:
        raise _rule("beam-width", "beam width must be >= 1")
    if cfg.get("path_length", 2) < 2:
        raise _rule("path-length", "path length must be >= 2")
    if cfg.get("seed", 0) < 0:
        raise _rule("seed", "seed must be non-negative")


def check_high_level_options(cfg: dict) -> None:
    check_common_options(cfg)
    if cfg["task_encoding"] not in HIGH_LEVEL_TASK_ENCODINGS:
        raise _rule(
            "high-level-task-encoding",
            f"task_encoding must be one of {HIGH_LEVEL_TASK_ENCODINGS}, got {cfg['task_encoding']!r}",
        )


def check_panoptic_options(cfg: dict) -> None:
    check_common_options(cfg)
    if cfg["head"] not in (HEAD_SIGMOID, HEAD_SOFTMAX):
        raise _rule("panoptic-head", f"head must be sigmoid or softmax, got {cfg['head']!r}")
    if cfg["head"] == HEAD_SIGMOID and cfg["label_encoding"] != "gaussian":
        raise _rule(
            "sigmoid-head-requires-gaussian-labels",
            "the per-cell sigmoid head is only valid with Gaussian ground-truth labels",
        )
    if cfg["depth"] < 1:
        raise _rule("recurrent-depth", "depth must be >= 1")


def check_dual_options(cfg: dict) -> None:
    check_common_options(cfg)
    if cfg["architecture"] not in DUAL_ARCHITECTURES:
        raise _rule(
            "dual-architecture", f"architecture must be one of {DUAL_ARCHITECTURES}"
        )
    if not 0.0 <= cfg["w_fix"] <= 1.0:
        raise _rule("w-fix-range", "w_fix must lie in [0, 1]")
    if cfg["w_pos"] <= 0 or cfg["w_neg"] <= 0:
        raise _rule("detection-class-weights", "detection class weights must be positive")


def check_corpus(corpus, require_features: bool = True) -> None:
    if not corpus.records:
        raise ConfigError("corpus has no records")
    for record in corpus.records:
        if len(record.xs) != 7:
            raise ConfigError(f"record {record.name!r} is not preprocessed to length 7")
    if require_features:
        for record in corpus.records:
            for variant in ("full", "blurred"):
                if not corpus.features.has(record.name, variant):
                    raise ConfigError(
                        f"record {record.name!r}: missing {variant!r} feature map"
                    )


def check_split_presence(corpus, split: str) -> list:
    records = corpus.subset(split)
    if not records:
        raise ConfigError(f"no records in split {split!r}")
    return records


def check_feature_matrix(X, name: str = "X") -> np.ndarray:
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2:
        raise ConfigError(f"{name} must be a 2-D array, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ConfigError(f"{name} contains non-finite values")
    return arr


def check_binary_targets(y, n: int, name: str = "y") -> np.ndarray:
    arr = np.asarray(y, dtype=np.float64).reshape(-1)
    if arr.shape[0] != n:
        raise ConfigError(f"{name} length {arr.shape[0]} does not match {n} samples")
    if not np.isin(arr, (0.0, 1.0)).all():
        raise ConfigError(f"{name} must be binary 0/1 labels")
    return arr


def worker_count() -> int:
    """Worker cap from FOVEAL_THREADS (default 1, serial)."""
    try:
        return max(1, int(os.environ.get("FOVEAL_THREADS", "1")))
    except ValueError:
        return 1
