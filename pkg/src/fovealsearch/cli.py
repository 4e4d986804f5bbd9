"""Command-line operator surface.

Subcommands: train-fix, train-dual, train-det, predict, eval, foveate,
gradcheck, synth.  Option precedence is CLI flag > config file > default;
every run writes its resolved configuration next to its outputs so a rerun
from that file reproduces results bit for bit under the same seed.

Exit codes: 0 success, 1 validation/configuration error, 2 runtime or
numeric error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from fovealsearch import data as dataio
from fovealsearch import models
from fovealsearch.encoding import GridSpec
from fovealsearch.estimators import (
    DualTaskScanpathEstimator,
    HighLevelScanpathEstimator,
    PanopticScanpathEstimator,
    TargetDetector,
    TrainingError,
    _ESTIMATOR_CLASSES,
)
from fovealsearch.foveation import FoveationConfig, foveate_image
from fovealsearch.metrics import tfp_table_rows
from fovealsearch.tensor import NumericError
from fovealsearch.validation import ConfigError

logger = logging.getLogger("fovealsearch")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


# ---------------------------------------------------------------------------
# configuration plumbing

CORPUS_DEFAULTS = {
    "data_dir": None,
    "features_dir": None,
    "synthetic": False,
    "grid_rows": 6,
    "grid_cols": 8,
    "tasks": 4,
    "scenes": 200,
    "difficulty": 0.2,
    "present_fraction": 1.0,
    "blur_sigma": 0.5,
    "noise_level": 0.1,
    "src_height": None,
    "src_width": None,
}

TRAIN_DEFAULTS = {
    "label_encoding": "gaussian",
    "mask_radius": 2.0,
    "fovea_px": None,
    "cumulative_mask": False,
    "use_batchnorm": True,
    "dropout_rate": 0.5,
    "lr": 0.001,
    "batch_size": 256,
    "max_epochs": 100,
    "patience": 5,
    "beam_width": 20,
    "path_length": 7,
    "seed": 0,
    "out": "runs",
    "resume": None,
}


def _add_options(parser: argparse.ArgumentParser, defaults: dict) -> None:
    for name, value in defaults.items():
        flag = "--" + name.replace("_", "-")
        if isinstance(value, bool):
            parser.add_argument(flag, action="store_true", default=argparse.SUPPRESS)
        elif isinstance(value, int) and not isinstance(value, bool):
            parser.add_argument(flag, type=int, default=argparse.SUPPRESS)
        elif isinstance(value, float):
            parser.add_argument(flag, type=float, default=argparse.SUPPRESS)
        else:
            parser.add_argument(flag, type=str, default=argparse.SUPPRESS)


def resolve_config(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults <- config file <- explicit CLI flags."""
    resolved = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys in {config_path}: {sorted(unknown)}")
        resolved.update(file_cfg)
    for key in defaults:
        if hasattr(args, key):
            resolved[key] = getattr(args, key)
    return resolved


def make_run_dir(base: str, seed: int) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    run_dir = Path(base) / f"{stamp}-s{seed}"
    suffix = 0
    while run_dir.exists():
        suffix += 1
        run_dir = Path(base) / f"{stamp}-s{seed}-{suffix}"
    run_dir.mkdir(parents=True)
    return run_dir


def write_config(run_dir: Path, command: str, cfg: dict) -> None:
    payload = {"command": command, **{k: v for k, v in cfg.items() if k != "resume"}}
    dataio._atomic_write_text(run_dir / "config.json", json.dumps(payload, indent=1))


def load_run_corpus(cfg: dict) -> dataio.SearchCorpus:
    if cfg.get("synthetic") or not cfg.get("data_dir"):
        grid = GridSpec(
            rows=cfg["grid_rows"],
            cols=cfg["grid_cols"],
            image_height=cfg["grid_rows"] * 32,
            image_width=cfg["grid_cols"] * 32,
        )
        corpus = dataio.synth_corpus(
            seed=cfg["seed"],
            grid=grid,
            n_tasks=cfg["tasks"],
            difficulty=cfg["difficulty"],
            n_scenes=cfg["scenes"],
            present_fraction=cfg["present_fraction"],
            blur_sigma=cfg["blur_sigma"],
            noise_level=cfg["noise_level"],
        )
    else:
        source_size = None
        if cfg.get("src_height") and cfg.get("src_width"):
            source_size = (int(cfg["src_height"]), int(cfg["src_width"]))
        data_dir = Path(cfg["data_dir"])
        if cfg.get("features_dir"):
            grid = None
            meta = data_dir / "meta.json"
            if meta.exists():
                grid = GridSpec.from_json(json.loads(meta.read_text())["grid"])
            elif not meta.exists():
                grid = GridSpec(
                    rows=cfg["grid_rows"],
                    cols=cfg["grid_cols"],
                    image_height=cfg["grid_rows"] * 32,
                    image_width=cfg["grid_cols"] * 32,
                )
            records = dataio.preprocess_all(
                dataio.load_scanpaths(data_dir / "scanpaths.json"), grid, source_size
            )
            store = dataio.FeatureStore(directory=cfg["features_dir"])
            corpus = dataio.SearchCorpus(grid=grid, records=records, features=store)
        else:
            corpus = dataio.load_corpus(data_dir, source_size=source_size)
    corpus.ensure_splits(cfg["seed"])
    return corpus


def effective_mask_radius(cfg: dict, grid: GridSpec) -> float:
    if cfg.get("fovea_px"):
        from fovealsearch.foveation import mask_radius_for_fovea

        return mask_radius_for_fovea(float(cfg["fovea_px"]), grid.cell_width)
    return cfg["mask_radius"]


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    cfg = resolve_config(args, {**CORPUS_DEFAULTS, "seed": 0, "out": "corpus"})
    corpus = load_run_corpus({**cfg, "synthetic": True})
    dataio.save_corpus(corpus, cfg["out"])
    n_present = sum(r.target_present for r in corpus.records)
    logger.info(
        "wrote %d scenes (%d target-present) to %s", len(corpus.records), n_present, cfg["out"]
    )
    return EXIT_OK


def _write_history_csv(path: Path, history: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "valid_loss", "seconds"])
        for row in history:
            writer.writerow([row["epoch"], row["train_loss"], row["valid_loss"], row["seconds"]])


def _train_command(args, estimator_cls, extra_defaults: dict, command: str) -> int:
    defaults = {**CORPUS_DEFAULTS, **TRAIN_DEFAULTS, **extra_defaults}
    cfg = resolve_config(args, defaults)
    run_dir = make_run_dir(cfg["out"], cfg["seed"])
    write_config(run_dir, command, cfg)
    est = estimator_cls()
    params = {k: cfg[k] for k in est.get_params() if k in cfg}
    est.set_params(**params)
    est._validate()  # fail before any data is loaded
    corpus = load_run_corpus(cfg)
    est.set_params(mask_radius=effective_mask_radius(cfg, corpus.grid))
    est.fit(corpus, resume_from=cfg.get("resume"), keep_trainer=True)
    est.save(run_dir / "checkpoint.zip", include_trainer_state=True)
    _write_history_csv(run_dir / "log.csv", est.history_)
    logger.info(
        "trained %d epochs (early stop: %s); checkpoint at %s",
        len(est.history_),
        est.stopped_early_,
        run_dir / "checkpoint.zip",
    )
    if est.family == models.FAMILY_DUAL:
        components = est.loss_components(corpus, "valid")
        dataio._atomic_write_text(
            run_dir / "loss_components.json", json.dumps(components, indent=1)
        )
    print(run_dir)
    return EXIT_OK


def cmd_train_fix(args) -> int:
    if args.family == "high-level":
        extra = {"family": "high-level", "task_encoding": "onehot"}
        return _train_command(args, HighLevelScanpathEstimator, extra, "train-fix")
    extra = {
        "family": "panoptic",
        "depth": 1,
        "head": "sigmoid",
        "mask_radius": 1.0,
        "cumulative_mask": True,
    }
    return _train_command(args, PanopticScanpathEstimator, extra, "train-fix")


def cmd_train_dual(args) -> int:
    extra = {"architecture": "A", "w_fix": 0.5, "w_pos": 1.6, "w_neg": 0.7,
             "present_fraction": 0.5}
    return _train_command(args, DualTaskScanpathEstimator, extra, "train-dual")


def cmd_train_det(args) -> int:
    defaults = {
        **CORPUS_DEFAULTS,
        "present_fraction": 0.5,
        "units": "512,256",
        "dropout_rate": 0.5,
        "lr": 0.001,
        "batch_size": 256,
        "max_epochs": 100,
        "patience": 5,
        "seed": 0,
        "task": None,
        "crop_window": 1,
        "out": "runs",
    }
    cfg = resolve_config(args, defaults)
    run_dir = make_run_dir(cfg["out"], cfg["seed"])
    write_config(run_dir, "train-det", cfg)
    corpus = load_run_corpus(cfg)
    tasks = [cfg["task"]] if cfg.get("task") else corpus.tasks
    units = tuple(int(u) for u in str(cfg["units"]).split(","))
    summary = {}
    for task in tasks:
        arrays = _detection_arrays(corpus, task, int(cfg["crop_window"]))
        (X_train, y_train), (X_valid, y_valid), (X_test, y_test) = arrays
        detector = TargetDetector(
            units=units,
            dropout_rate=cfg["dropout_rate"],
            lr=cfg["lr"],
            batch_size=cfg["batch_size"],
            max_epochs=cfg["max_epochs"],
            patience=cfg["patience"],
            seed=cfg["seed"],
            task=task,
        )
        detector.fit(X_train, y_train, validation_data=(X_valid, y_valid) if len(y_valid) else None)
        detector.save(run_dir / f"detector_{task}.zip")
        summary[task] = detector.metrics(X_test, y_test) if len(y_test) else None
        _write_history_csv(run_dir / f"log_{task}.csv", detector.history_)
    dataio._atomic_write_text(run_dir / "detection_metrics.json", json.dumps(summary, indent=1))
    logger.info("trained %d detector(s); outputs in %s", len(tasks), run_dir)
    print(run_dir)
    return EXIT_OK


def _detection_arrays(corpus, task, window):
    from fovealsearch.encoding import detection_labels

    splits = {"train": ([], []), "valid": ([], []), "test": ([], [])}
    for record in corpus.records:
        if record.task != task or record.split not in splits:
            continue
        xs, ys = splits[record.split]
        labels = detection_labels(record, corpus.grid)
        for cell, label in zip(record.fixation_cells(corpus.grid), labels):
            xs.append(dataio.crop_features(corpus.features, record.name, cell, corpus.grid, window))
            ys.append(label)
    out = []
    for split in ("train", "valid", "test"):
        xs, ys = splits[split]
        out.append((np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)))
    return out


PREDICT_DEFAULTS = {
    **CORPUS_DEFAULTS,
    "checkpoint": None,
    "beam_width": 20,
    "length": 7,
    "split": "test",
    "all_beams": False,
    "seed": 0,
    "out": "runs",
}


def _load_estimator(path: str):
    if path is None:
        raise ConfigError("--checkpoint is required")
    model, extra = dataio.load_checkpoint(path)
    if extra is None or "estimator" not in extra["json"]:
        raise ConfigError(f"{path}: checkpoint lacks estimator metadata")
    cls = _ESTIMATOR_CLASSES[extra["json"]["estimator"]["class"]]
    return cls.load(path)


def cmd_predict(args) -> int:
    cfg = resolve_config(args, PREDICT_DEFAULTS)
    est = _load_estimator(cfg["checkpoint"])
    corpus = load_run_corpus({**cfg, "seed": cfg["seed"]})
    run_dir = make_run_dir(cfg["out"], cfg["seed"])
    write_config(run_dir, "predict", cfg)
    predictions = est.predict(
        corpus, split=cfg["split"], beam_width=cfg["beam_width"], length=cfg["length"]
    )
    rows = []
    for pred in predictions:
        rows.extend(pred.to_json(est.grid_, all_beams=bool(cfg["all_beams"])))
    dataio._atomic_write_text(run_dir / "scanpaths.json", json.dumps(rows, indent=1))
    logger.info("wrote %d predicted scanpaths to %s", len(rows), run_dir / "scanpaths.json")
    print(run_dir)
    return EXIT_OK


EVAL_DEFAULTS = {
    **CORPUS_DEFAULTS,
    "checkpoint": None,
    "beam_width": 20,
    "split": "test",
    "eval_all_beams": False,
    "with_baseline": False,
    "seed": 0,
    "out": "runs",
}


def cmd_eval(args) -> int:
    cfg = resolve_config(args, EVAL_DEFAULTS)
    est = _load_estimator(cfg["checkpoint"])
    corpus = load_run_corpus(cfg)
    run_dir = make_run_dir(cfg["out"], cfg["seed"])
    write_config(run_dir, "eval", cfg)
    report, baseline = est.evaluate(
        corpus,
        split=cfg["split"],
        all_beams=bool(cfg["eval_all_beams"]),
        with_baseline=bool(cfg["with_baseline"]),
        beam_width=cfg["beam_width"],
    )
    payload = report.to_json()
    if baseline is not None:
        payload["random_baseline"] = baseline.to_json()["macro"]
    dataio._atomic_write_text(run_dir / "report.json", json.dumps(payload, indent=1))
    with open(run_dir / "tfp.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "tfp_model", "tfp_human"])
        for step, model_tfp, human_tfp in tfp_table_rows(report):
            writer.writerow([step, model_tfp, "" if human_tfp is None else human_tfp])
    logger.info(
        "search accuracy %.3f, TFP-AUC %.3f; report at %s",
        report.macro.search_accuracy,
        report.macro.tfp_auc,
        run_dir / "report.json",
    )
    print(run_dir)
    return EXIT_OK


def cmd_foveate(args) -> int:
    cfg_kwargs = {"fovea_px": args.fovea_px, "blur_sigma": args.sigma}
    config = FoveationConfig(**cfg_kwargs)
    image = dataio.read_image(args.input)
    out = foveate_image(image, (args.fix_x, args.fix_y), config)
    dataio.write_image(args.output, out)
    logger.info("foveated %s -> %s", args.input, args.output)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from fovealsearch import gradcheck

    rows = gradcheck.run_all(seed=args.seed, include_models=(args.scope in ("model", "all")))
    if args.scope == "model":
        rows = [r for r in rows if r[0].startswith("model/")]
    print(gradcheck.format_table(rows))
    failed = [name for name, err, tol in rows if err >= tol]
    if failed:
        logger.error("gradient check failed for: %s", ", ".join(failed))
        return EXIT_RUNTIME
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fovealsearch",
        description="Goal-directed visual search in foveated images",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic search corpus")
    p_synth.add_argument("--config", type=str, default=None)
    _add_options(p_synth, {**CORPUS_DEFAULTS, "seed": 0, "out": "corpus"})
    p_synth.set_defaults(func=cmd_synth)

    p_fix = sub.add_parser("train-fix", help="train a fixation prediction model")
    p_fix.add_argument("--config", type=str, default=None)
    p_fix.add_argument("--family", choices=["high-level", "panoptic"], default="high-level")
    _add_options(
        p_fix,
        {
            **CORPUS_DEFAULTS,
            **TRAIN_DEFAULTS,
            "task_encoding": "onehot",
            "depth": 1,
            "head": "sigmoid",
        },
    )
    p_fix.set_defaults(func=cmd_train_fix)

    p_dual = sub.add_parser("train-dual", help="train a dual fixation+detection model")
    p_dual.add_argument("--config", type=str, default=None)
    _add_options(
        p_dual,
        {
            **CORPUS_DEFAULTS,
            **TRAIN_DEFAULTS,
            "architecture": "A",
            "w_fix": 0.5,
            "w_pos": 1.6,
            "w_neg": 0.7,
        },
    )
    p_dual.set_defaults(func=cmd_train_dual)

    p_det = sub.add_parser("train-det", help="train per-task detection heads")
    p_det.add_argument("--config", type=str, default=None)
    _add_options(
        p_det,
        {
            **CORPUS_DEFAULTS,
            "present_fraction": 0.5,
            "units": "512,256",
            "dropout_rate": 0.5,
            "lr": 0.001,
            "batch_size": 256,
            "max_epochs": 100,
            "patience": 5,
            "seed": 0,
            "task": "",
            "crop_window": 1,
            "out": "runs",
        },
    )
    p_det.set_defaults(func=cmd_train_det)

    p_pred = sub.add_parser("predict", help="decode scanpaths with beam search")
    p_pred.add_argument("--config", type=str, default=None)
    _add_options(p_pred, PREDICT_DEFAULTS)
    p_pred.set_defaults(func=cmd_predict)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p_eval.add_argument("--config", type=str, default=None)
    _add_options(p_eval, EVAL_DEFAULTS)
    p_eval.set_defaults(func=cmd_eval)

    p_fov = sub.add_parser("foveate", help="foveate an RGB image (PNG or binary PPM)")
    p_fov.add_argument("input", type=str)
    p_fov.add_argument("output", type=str)
    p_fov.add_argument("--fovea-px", type=float, default=75.0)
    p_fov.add_argument("--sigma", type=float, default=2.0)
    p_fov.add_argument("--fix-x", type=float, required=True)
    p_fov.add_argument("--fix-y", type=float, required=True)
    p_fov.set_defaults(func=cmd_foveate)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p_grad.add_argument("--scope", choices=["layer", "model", "all"], default="all")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, dataio.FileFormatError,
            dataio.CheckpointMismatchError) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except ValueError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except (NumericError, TrainingError) as exc:
        logger.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
