"""Estimator API: fit/predict wrappers around training, decoding, and metrics.

Scanpath estimators consume a SearchCorpus (records + feature store) and
follow scikit-learn conventions: constructor arguments are hyperparameters
echoed by ``get_params``/``set_params``; fitted state lives in
underscore-suffixed attributes; ``fit`` returns self.
"""
from __future__ import annotations

import inspect
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from fovealsearch import data as dataio
from fovealsearch import models, seeding, validation
from fovealsearch.decode import Beam, beam_search, random_scanpath
from fovealsearch.encoding import (
    LABEL_GAUSSIAN,
    TASK_HEATMAP_2D,
    TASK_HEATMAP_FLAT,
    TASK_ONEHOT,
    TASK_SPATIAL,
    GridSpec,
    cell_on_target,
    detection_labels,
    make_label,
    spatial_task_encoding,
    task_heatmap,
    task_onehot,
)
from fovealsearch.foveation import FoveationConfig, compose_belief, make_mask
from fovealsearch.metrics import (
    MetricsReport,
    build_report,
    detection_metrics,
    step_confusion_matrices,
)
from fovealsearch.models import SequenceStepper, det_bce_loss, dual_loss, seq_ce_loss
from fovealsearch.nn import EarlyStopper
from fovealsearch.tensor import NumericError, Tape, Tensor, default_dtype
from fovealsearch.validation import ConfigError

SEQ_LEN = dataio.SEQUENCE_LENGTH


class TrainingError(RuntimeError):
    """Training aborted (typically a non-finite loss), with the batch named."""


class BaseEstimator:
    """Minimal scikit-learn-style parameter handling."""

    @classmethod
    def _param_names(cls) -> list[str]:
        signature = inspect.signature(cls.__init__)
        return [name for name in signature.parameters if name != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(f"invalid parameter {name!r} for {type(self).__name__}")
            setattr(self, name, value)
        return self

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"

    def _check_fitted(self, attr: str = "model_"):
        if not hasattr(self, attr):
            raise RuntimeError(f"{type(self).__name__} is not fitted yet; call fit() first")


# ---------------------------------------------------------------------------
# feature sequence assembly


def step_feature_maps(
    store: dataio.FeatureStore,
    record: dataio.ScanpathRecord,
    grid: GridSpec,
    fov_cfg: FoveationConfig,
) -> np.ndarray:
    """Teacher-forced input maps (T, H, W, C) along a record's fixations.

    Precomputed per-fixation variants (``fix0`` ..) win when present;
    otherwise each step blends the full and blurred maps through the
    fixation mask at the ground-truth gaze history.
    """
    cells = record.fixation_cells(grid)
    steps = []
    full = blurred = None
    for t in range(len(cells)):
        variant = f"fix{t}"
        if store.has(record.name, variant):
            steps.append(np.asarray(store.get(record.name, variant), dtype=np.float64))
            continue
        if full is None:
            full = np.asarray(store.get(record.name, "full"), dtype=np.float64)
            blurred = np.asarray(store.get(record.name, "blurred"), dtype=np.float64)
        mask = make_mask(cells[: t + 1], grid.rows, grid.cols, fov_cfg)
        steps.append(compose_belief(full, blurred, mask))
    return np.stack(steps)


def make_x_provider(store, name: str, grid: GridSpec, fov_cfg: FoveationConfig):
    """Feature maps for arbitrary decoded fixation histories."""
    full = np.asarray(store.get(name, "full"), dtype=np.float64)
    blurred = np.asarray(store.get(name, "blurred"), dtype=np.float64)

    def provider(cells):
        mask = make_mask(cells, grid.rows, grid.cols, fov_cfg)
        return compose_belief(full, blurred, mask)

    return provider


def fixation_targets(record, grid: GridSpec, label_kind: str) -> np.ndarray:
    """Next-fixation label grids (T, H*W); the final step repeats the last one."""
    cells = record.fixation_cells(grid)
    last = len(cells) - 1
    rows = []
    for t in range(len(cells)):
        target_cell = cells[min(t + 1, last)]
        rows.append(make_label(target_cell, grid, label_kind).values.reshape(-1))
    return np.stack(rows)


# ---------------------------------------------------------------------------
# training loop


class Trainer:
    """Minibatch teacher-forced training with early stopping and resume.

    ``loss_fn(model, batch_arrays, mode, rng)`` returns the scalar loss
    Tensor used for both optimization (train mode) and validation (infer
    mode).  All randomness flows through the named seed streams.
    """

    def __init__(
        self,
        model,
        loss_fn,
        train_arrays: tuple,
        valid_arrays: tuple | None,
        lr: float,
        batch_size: int,
        patience: int,
        seed: int,
    ):
        self.model = model
        self.loss_fn = loss_fn
        self.train_arrays = train_arrays
        self.valid_arrays = valid_arrays
        self.batch_size = batch_size
        self.params = model.params()
        self.optimizer = models.make_optimizer(model, lr=lr)
        self.stopper = EarlyStopper(patience)
        self.shuffle_rng = seeding.stream(seed, "shuffle")
        self.dropout_rng = seeding.stream(seed, "dropout")
        self.epoch = 0
        self.history: list[dict] = []
        self.stopped_early = False

    @property
    def n_train(self) -> int:
        return self.train_arrays[0].shape[0]

    def snapshot(self) -> dict:
        return {
            "params": {k: p.data.copy() for k, p in self.params.items()},
            "buffers": {k: np.copy(v) for k, v in self.model.buffers().items()},
        }

    def restore(self, snap: dict) -> None:
        for k, p in self.params.items():
            p.assign(snap["params"][k])
        if snap["buffers"]:
            self.model.load_buffers(snap["buffers"])

    def _epoch_pass(self) -> float:
        """Optimize one epoch; returns the mean per-batch training loss."""
        order = self.shuffle_rng.permutation(self.n_train)
        total = 0.0
        n_batches = 0
        for batch_idx, start in enumerate(range(0, self.n_train, self.batch_size)):
            take = order[start : start + self.batch_size]
            batch = tuple(a[take] for a in self.train_arrays)
            try:
                with Tape() as tape:
                    loss = self.loss_fn(self.model, batch, "train", self.dropout_rng)
                grads = tape.gradients(loss, self.params.values())
                self.optimizer.step(grads)
            except NumericError as exc:
                raise TrainingError(
                    f"non-finite loss in epoch {self.epoch + 1}, batch {batch_idx}: {exc}"
                ) from exc
            total += loss.item()
            n_batches += 1
        return total / n_batches

    def validation_loss(self) -> float:
        arrays = self.valid_arrays if self.valid_arrays is not None else self.train_arrays
        return self.loss_fn(self.model, arrays, "infer", None).item()

    def run(self, max_epochs: int) -> bool:
        """Advance to at most ``max_epochs`` total; True if stopped early."""
        while self.epoch < max_epochs and not self.stopped_early:
            started = time.perf_counter()
            train_loss = self._epoch_pass()
            self.epoch += 1
            valid_loss = self.validation_loss()
            self.history.append(
                {
                    "epoch": self.epoch,
                    "train_loss": train_loss,
                    "valid_loss": valid_loss,
                    "seconds": time.perf_counter() - started,
                }
            )
            if self.stopper.update(valid_loss, self.snapshot):
                self.stopped_early = True
        return self.stopped_early

    def finish(self) -> None:
        """Restore the best-validation snapshot taken during training."""
        if self.stopper.best_snapshot is not None:
            self.restore(self.stopper.best_snapshot)

    # -- resume support ----------------------------------------------------

    def state(self) -> dict:
        arrays = {}
        for k, v in self.optimizer.m.items():
            arrays[f"adam.m.{k}"] = v
        for k, v in self.optimizer.v.items():
            arrays[f"adam.v.{k}"] = v
        snap = self.stopper.best_snapshot
        if snap is not None:
            for k, v in snap["params"].items():
                arrays[f"best.params.{k}"] = v
            for k, v in snap["buffers"].items():
                arrays[f"best.buffers.{k}"] = v
        return {
            "json": {
                "epoch": self.epoch,
                "adam_t": self.optimizer.t,
                "stopped_early": self.stopped_early,
                "stopper": self.stopper.state(),
                "has_snapshot": snap is not None,
                "rng": {
                    "shuffle": seeding.generator_state(self.shuffle_rng),
                    "dropout": seeding.generator_state(self.dropout_rng),
                },
                "history": self.history,
            },
            "arrays": arrays,
        }

    def load_state(self, state: dict) -> None:
        payload = state["json"]
        arrays = state["arrays"]
        self.epoch = int(payload["epoch"])
        self.stopped_early = bool(payload["stopped_early"])
        self.history = list(payload["history"])
        self.optimizer.load_state(
            {
                "t": payload["adam_t"],
                "m": {k: arrays[f"adam.m.{k}"] for k in self.params},
                "v": {k: arrays[f"adam.v.{k}"] for k in self.params},
            }
        )
        snapshot = None
        if payload["has_snapshot"]:
            snapshot = {
                "params": {k: arrays[f"best.params.{k}"] for k in self.params},
                "buffers": {
                    k: arrays[f"best.buffers.{k}"] for k in self.model.buffers()
                },
            }
        self.stopper.load_state(payload["stopper"], snapshot)
        self.shuffle_rng = seeding.restore_generator(payload["rng"]["shuffle"])
        self.dropout_rng = seeding.restore_generator(payload["rng"]["dropout"])


# ---------------------------------------------------------------------------
# scanpath estimators


@dataclass
class ScanpathPrediction:
    """Decoded beams for one evaluated record."""

    record: dataio.ScanpathRecord
    beams: list[Beam]

    @property
    def best(self) -> Beam:
        return self.beams[0]

    def to_json(self, grid: GridSpec, all_beams: bool = False) -> list[dict]:
        rows = []
        beams = self.beams if all_beams else self.beams[:1]
        for rank, beam in enumerate(beams):
            xs, ys = beam.pixel_path(grid)
            row = {
                "name": self.record.name,
                "task": self.record.task,
                "condition": "present" if self.record.target_present else "absent",
                "X": xs,
                "Y": ys,
                "score": beam.log_prob,
                "rank": rank,
            }
            if self.record.bbox is not None:
                row["bbox"] = list(self.record.bbox)
            if beam.det_probs:
                row["detection"] = [float(p) for p in beam.det_probs]
            rows.append(row)
        return rows


class _ScanpathEstimatorBase(BaseEstimator):
    family = ""

    # subclasses define: _validate(), _build_model(rng, in_channels), _loss_fn()

    def _fov_config(self) -> FoveationConfig:
        return FoveationConfig(
            mask_radius=self.mask_radius, cumulative=self.cumulative_mask
        )

    def _task_values(self, task: str) -> np.ndarray:
        kind = getattr(self, "task_encoding", TASK_ONEHOT)
        index = self.tasks_.index(task)
        if kind == TASK_ONEHOT:
            return task_onehot(index, len(self.tasks_)).values
        if kind == TASK_SPATIAL:
            return spatial_task_encoding(index, len(self.tasks_), self.grid_).values
        return self.heatmaps_[task]

    def _task_matrix(self, records) -> np.ndarray:
        return np.stack([self._task_values(r.task) for r in records])

    def _build_arrays(self, records, with_detection: bool):
        grid = self.grid_
        fov = self._fov_config()
        dtype = default_dtype()
        X = np.stack(
            [step_feature_maps(self._store_, r, grid, fov) for r in records]
        ).astype(dtype)
        Y = np.stack(
            [fixation_targets(r, grid, self.label_encoding) for r in records]
        ).astype(dtype)
        arrays = [X, self._task_matrix(records).astype(dtype), Y]
        if with_detection:
            arrays.append(np.stack([detection_labels(r, grid) for r in records]).astype(dtype))
        return tuple(arrays)

    def _prepare(self, corpus: dataio.SearchCorpus):
        validation.check_corpus(corpus)
        corpus.ensure_splits(self.seed)
        self.grid_ = corpus.grid
        self.tasks_ = list(corpus.tasks)
        self._store_ = corpus.features
        train = validation.check_split_presence(corpus, "train")
        valid = corpus.subset("valid")
        kind = getattr(self, "task_encoding", TASK_ONEHOT)
        if kind in (TASK_HEATMAP_2D, TASK_HEATMAP_FLAT):
            flat = kind == TASK_HEATMAP_FLAT
            self.heatmaps_ = {
                task: task_heatmap(train, task, self.grid_, flat=flat).values
                for task in self.tasks_
            }
        else:
            self.heatmaps_ = {}
        return train, valid

    def fit(self, corpus: dataio.SearchCorpus, resume_from=None, keep_trainer: bool = False):
        """Train on the corpus's train split, early-stopping on valid loss."""
        self._validate()
        train, valid = self._prepare(corpus)
        with_det = self.family == models.FAMILY_DUAL
        train_arrays = self._build_arrays(train, with_det)
        valid_arrays = self._build_arrays(valid, with_det) if valid else None
        init_rng = seeding.stream(self.seed, "init")
        self.model_ = self._build_model(init_rng, corpus.feature_channels)
        trainer = Trainer(
            self.model_,
            self._loss_fn(),
            train_arrays,
            valid_arrays,
            lr=self.lr,
            batch_size=self.batch_size,
            patience=self.patience,
            seed=self.seed,
        )
        if resume_from is not None:
            loaded, extra = dataio.load_checkpoint(
                resume_from, expected_config={"family": self.family}
            )
            for name, param in self.model_.params().items():
                param.assign(loaded.params()[name].data)
            if loaded.buffers():
                self.model_.load_buffers(loaded.buffers())
            if extra is None or "trainer" not in extra["json"]:
                raise ConfigError(f"checkpoint {resume_from} carries no trainer state to resume")
            trainer.load_state({"json": extra["json"]["trainer"], "arrays": extra["arrays"]})
        trainer.run(self.max_epochs)
        trainer.finish()
        self.history_ = trainer.history
        self.stopped_early_ = trainer.stopped_early
        self._trainer_ = trainer if keep_trainer else None
        return self

    def save(self, path, include_trainer_state: bool = False) -> None:
        """Write a checkpoint; optionally embed optimizer/rng state for resume."""
        self._check_fitted()
        payload = {
            "estimator": {
                "class": type(self).__name__,
                "params": _jsonable(self.get_params()),
            },
            "tasks": self.tasks_,
            "grid": self.grid_.to_json(),
        }
        arrays = {}
        for task, values in self.heatmaps_.items():
            arrays[f"heatmap.{task}"] = values
        if include_trainer_state:
            if self._trainer_ is None:
                raise RuntimeError("fit(..., keep_trainer=True) required to save trainer state")
            state = self._trainer_.state()
            payload["trainer"] = state["json"]
            arrays.update(state["arrays"])
        elif hasattr(self, "history_"):
            payload["history"] = self.history_
        dataio.save_checkpoint(path, self.model_, extra={"json": payload, "arrays": arrays})

    @classmethod
    def load(cls, path):
        """Rebuild a fitted estimator from a checkpoint."""
        model, extra = dataio.load_checkpoint(path)
        if extra is None or "estimator" not in extra["json"]:
            raise ConfigError(f"checkpoint {path} carries no estimator config")
        info = extra["json"]["estimator"]
        est = _ESTIMATOR_CLASSES[info["class"]]()
        est.set_params(**_tupleize(est, info["params"]))
        est.model_ = model
        est.tasks_ = list(extra["json"]["tasks"])
        est.grid_ = GridSpec.from_json(extra["json"]["grid"])
        est.heatmaps_ = {
            key[len("heatmap.") :]: value
            for key, value in extra["arrays"].items()
            if key.startswith("heatmap.")
        }
        est.history_ = extra["json"].get("history", [])
        est._trainer_ = None
        return est

    # -- inference ----------------------------------------------------------

    def predict(
        self,
        corpus: dataio.SearchCorpus,
        split: str = "test",
        beam_width: int | None = None,
        length: int | None = None,
    ) -> list[ScanpathPrediction]:
        """Beam-search scanpaths for every record of the split."""
        self._check_fitted()
        records = validation.check_split_presence(corpus, split)
        width = beam_width if beam_width is not None else self.beam_width
        steps = length if length is not None else self.path_length
        fov = self._fov_config()
        store = corpus.features

        def decode_one(record):
            provider = make_x_provider(store, record.name, self.grid_, fov)
            stepper = SequenceStepper(self.model_, self._task_values(record.task), provider)
            return ScanpathPrediction(record, beam_search(stepper, self.grid_, width, steps))

        workers = validation.worker_count()
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(decode_one, records))
        return [decode_one(r) for r in records]

    def evaluate(
        self,
        corpus: dataio.SearchCorpus,
        split: str = "test",
        all_beams: bool = False,
        with_baseline: bool = False,
        beam_width: int | None = None,
    ) -> tuple[MetricsReport, MetricsReport | None]:
        """Full metric report for the split; optionally a random baseline too."""
        predictions = self.predict(corpus, split, beam_width=beam_width)
        grid = self.grid_
        triples = []
        for pred in predictions:
            beam = _select_beam(pred, grid, all_beams)
            triples.append((pred.record.task, beam.cells, pred.record.bbox))
        human = [
            (p.record.task, p.record.fixation_cells(grid), p.record.bbox) for p in predictions
        ]
        detection = self._detection_section(predictions, grid)
        report = build_report(
            triples, human=human, grid=grid, length=self.path_length, detection=detection
        )
        baseline_report = None
        if with_baseline:
            rng = seeding.stream(self.seed, "baseline")
            train = corpus.subset("train")
            baseline = []
            for pred in predictions:
                drawn = random_scanpath(train, pred.record.task, rng)
                baseline.append(
                    (pred.record.task, drawn.fixation_cells(grid), pred.record.bbox)
                )
            baseline_report = build_report(baseline, human=human, grid=grid, length=self.path_length)
        return report, baseline_report

    def _detection_section(self, predictions, grid) -> dict | None:
        return None

    def score(self, corpus: dataio.SearchCorpus, split: str = "test") -> float:
        """Macro-averaged search accuracy of the best beams."""
        report, _ = self.evaluate(corpus, split)
        return report.macro.search_accuracy


def _select_beam(pred: ScanpathPrediction, grid: GridSpec, all_beams: bool) -> Beam:
    """Best beam, or with ``all_beams`` the earliest-hitting one."""
    if not all_beams or pred.record.bbox is None:
        return pred.best
    from fovealsearch.metrics import first_hit_step

    best, best_hit = pred.best, None
    for beam in pred.beams:
        hit = first_hit_step(beam.cells, pred.record.bbox, grid)
        if hit is not None and (best_hit is None or hit < best_hit):
            best, best_hit = beam, hit
    return best


def _jsonable(params: dict) -> dict:
    return {
        k: (list(v) if isinstance(v, tuple) else v)
        for k, v in params.items()
    }


def _tupleize(est, params: dict) -> dict:
    defaults = est.get_params()
    return {
        k: (tuple(v) if isinstance(defaults.get(k), tuple) and isinstance(v, list) else v)
        for k, v in params.items()
    }


class HighLevelScanpathEstimator(_ScanpathEstimatorBase):
    """Fixation predictor over task-gated high-level feature maps."""

    family = models.FAMILY_HIGH_LEVEL

    def __init__(
        self,
        task_encoding: str = TASK_ONEHOT,
        label_encoding: str = LABEL_GAUSSIAN,
        filters: int = 5,
        kernel_size: int = 4,
        stride: int = 2,
        padding: int = 1,
        mask_radius: float = 2,
        cumulative_mask: bool = False,
        use_batchnorm: bool = True,
        dropout_rate: float = 0.5,
        lr: float = 0.001,
        batch_size: int = 256,
        max_epochs: int = 100,
        patience: int = 5,
        beam_width: int = 20,
        path_length: int = SEQ_LEN,
        seed: int = 0,
    ):
        self.task_encoding = task_encoding
        self.label_encoding = label_encoding
        self.filters = filters
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.mask_radius = mask_radius
        self.cumulative_mask = cumulative_mask
        self.use_batchnorm = use_batchnorm
        self.dropout_rate = dropout_rate
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.beam_width = beam_width
        self.path_length = path_length
        self.seed = seed

    def _validate(self):
        validation.check_high_level_options(self.get_params())

    def _build_model(self, rng, in_channels):
        return models.HighLevelFixationModel(
            self.grid_,
            in_channels,
            len(self.tasks_),
            task_encoding=self.task_encoding,
            filters=self.filters,
            kernel_size=self.kernel_size,
            stride=self.stride,
            padding=self.padding,
            use_batchnorm=self.use_batchnorm,
            dropout_rate=self.dropout_rate,
            rng=rng,
        )

    def _loss_fn(self):
        def loss_fn(model, batch, mode, rng):
            X, task, Y = batch
            x_steps = [Tensor(np.ascontiguousarray(X[:, t])) for t in range(X.shape[1])]
            probs = model.forward(x_steps, task, mode=mode, rng=rng)
            return seq_ce_loss(probs, np.ascontiguousarray(Y.transpose(1, 0, 2)))

        return loss_fn


class PanopticScanpathEstimator(_ScanpathEstimatorBase):
    """Fixation predictor over belief maps with spatial task planes."""

    family = models.FAMILY_PANOPTIC

    def __init__(
        self,
        depth: int = 1,
        head: str = models.HEAD_SIGMOID,
        label_encoding: str = LABEL_GAUSSIAN,
        filters: int = 10,
        kernel_size: int = 3,
        stride: int = 1,
        padding: int = 1,
        head_kernel: int = 2,
        head_padding: int = 1,
        mask_radius: float = 1,
        cumulative_mask: bool = True,
        use_batchnorm: bool = True,
        lr: float = 0.001,
        batch_size: int = 256,
        max_epochs: int = 100,
        patience: int = 5,
        beam_width: int = 20,
        path_length: int = SEQ_LEN,
        seed: int = 0,
    ):
        self.depth = depth
        self.head = head
        self.label_encoding = label_encoding
        self.filters = filters
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.head_kernel = head_kernel
        self.head_padding = head_padding
        self.mask_radius = mask_radius
        self.cumulative_mask = cumulative_mask
        self.use_batchnorm = use_batchnorm
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.beam_width = beam_width
        self.path_length = path_length
        self.seed = seed

    task_encoding = TASK_SPATIAL

    def _validate(self):
        validation.check_panoptic_options(self.get_params() | {"dropout_rate": 0.0})

    def _build_model(self, rng, in_channels):
        return models.PanopticFixationModel(
            self.grid_,
            in_channels,
            len(self.tasks_),
            depth=self.depth,
            head=self.head,
            filters=self.filters,
            kernel_size=self.kernel_size,
            stride=self.stride,
            padding=self.padding,
            head_kernel=self.head_kernel,
            head_padding=self.head_padding,
            use_batchnorm=self.use_batchnorm,
            rng=rng,
        )

    def _loss_fn(self):
        def loss_fn(model, batch, mode, rng):
            X, task, Y = batch
            x_steps = [Tensor(np.ascontiguousarray(X[:, t])) for t in range(X.shape[1])]
            probs = model.forward(x_steps, task, mode=mode, rng=rng)
            return seq_ce_loss(probs, np.ascontiguousarray(Y.transpose(1, 0, 2)))

        return loss_fn


class DualTaskScanpathEstimator(_ScanpathEstimatorBase):
    """Joint fixation prediction and per-step target detection."""

    family = models.FAMILY_DUAL

    def __init__(
        self,
        architecture: str = "A",
        w_fix: float = 0.5,
        w_pos: float = 1.6,
        w_neg: float = 0.7,
        label_encoding: str = LABEL_GAUSSIAN,
        filters: int = 5,
        kernel_size: int = 4,
        stride: int = 2,
        padding: int = 1,
        det_units: tuple = (64, 32),
        mask_radius: float = 2,
        cumulative_mask: bool = False,
        use_batchnorm: bool = True,
        dropout_rate: float = 0.5,
        lr: float = 0.001,
        batch_size: int = 256,
        max_epochs: int = 100,
        patience: int = 5,
        beam_width: int = 20,
        path_length: int = SEQ_LEN,
        seed: int = 0,
    ):
        self.architecture = architecture
        self.w_fix = w_fix
        self.w_pos = w_pos
        self.w_neg = w_neg
        self.label_encoding = label_encoding
        self.filters = filters
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.det_units = det_units
        self.mask_radius = mask_radius
        self.cumulative_mask = cumulative_mask
        self.use_batchnorm = use_batchnorm
        self.dropout_rate = dropout_rate
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.beam_width = beam_width
        self.path_length = path_length
        self.seed = seed

    task_encoding = TASK_ONEHOT

    def _validate(self):
        validation.check_dual_options(self.get_params())

    def _build_model(self, rng, in_channels):
        return models.DualTaskModel(
            self.grid_,
            in_channels,
            len(self.tasks_),
            architecture=self.architecture,
            filters=self.filters,
            kernel_size=self.kernel_size,
            stride=self.stride,
            padding=self.padding,
            det_units=tuple(self.det_units),
            use_batchnorm=self.use_batchnorm,
            dropout_rate=self.dropout_rate,
            rng=rng,
        )

    def _loss_fn(self):
        w_fix, weights = self.w_fix, (self.w_pos, self.w_neg)

        def loss_fn(model, batch, mode, rng):
            X, task, Y, D = batch
            x_steps = [Tensor(np.ascontiguousarray(X[:, t])) for t in range(X.shape[1])]
            fix_probs, det_probs = model.forward(x_steps, task, mode=mode, rng=rng)
            l_fix = seq_ce_loss(fix_probs, np.ascontiguousarray(Y.transpose(1, 0, 2)))
            l_det = det_bce_loss(det_probs, np.ascontiguousarray(D.T), weights=weights)
            return dual_loss(l_fix, l_det, w_fix)

        return loss_fn

    def loss_components(self, corpus: dataio.SearchCorpus, split: str = "valid") -> dict:
        """Weighted components of the combined loss on one split."""
        self._check_fitted()
        records = validation.check_split_presence(corpus, split)
        self._store_ = corpus.features
        X, task, Y, D = self._build_arrays(records, with_detection=True)
        x_steps = [Tensor(np.ascontiguousarray(X[:, t])) for t in range(X.shape[1])]
        fix_probs, det_probs = self.model_.forward(x_steps, task, mode="infer")
        l_fix = seq_ce_loss(fix_probs, np.ascontiguousarray(Y.transpose(1, 0, 2))).item()
        l_det = det_bce_loss(
            det_probs, np.ascontiguousarray(D.T), weights=(self.w_pos, self.w_neg)
        ).item()
        return {
            "loss_fix": l_fix,
            "loss_det": l_det,
            "total": self.w_fix * l_fix + (1.0 - self.w_fix) * l_det,
        }

    def _detection_section(self, predictions, grid) -> dict | None:
        probs, labels = [], []
        for pred in predictions:
            beam = pred.best
            if not beam.det_probs:
                return None
            row_labels = [
                1.0
                if pred.record.bbox is not None and cell_on_target(cell, pred.record.bbox, grid)
                else 0.0
                for cell in beam.cells[: len(beam.det_probs)]
            ]
            probs.append(beam.det_probs)
            labels.append(row_labels)
        probs_arr = np.asarray(probs)
        labels_arr = np.asarray(labels)
        overall = detection_metrics(probs_arr.reshape(-1), labels_arr.reshape(-1))
        return {
            "accuracy": overall["accuracy"],
            "precision": overall["precision"],
            "recall": overall["recall"],
            "per_step_confusion": step_confusion_matrices(probs_arr, labels_arr),
        }


# ---------------------------------------------------------------------------
# standalone target detector


class TargetDetector(BaseEstimator):
    """Binary classifier over fixation crop features (one per search task)."""

    family = models.FAMILY_DETECTOR

    def __init__(
        self,
        units: tuple = (512, 256),
        dropout_rate: float = 0.5,
        class_weights: tuple | None = None,
        lr: float = 0.001,
        batch_size: int = 256,
        max_epochs: int = 100,
        patience: int = 5,
        seed: int = 0,
        task: str = "",
    ):
        self.units = units
        self.dropout_rate = dropout_rate
        self.class_weights = class_weights
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed
        self.task = task

    def fit(self, X, y, validation_data: tuple | None = None):
        X = validation.check_feature_matrix(X)
        y = validation.check_binary_targets(y, X.shape[0])
        dtype = default_dtype()
        X = X.astype(dtype)
        self.model_ = models.DetectionHead(
            in_dim=X.shape[1],
            units=tuple(self.units),
            dropout_rate=self.dropout_rate,
            task=self.task,
            rng=seeding.stream(self.seed, "init"),
        )
        weights = tuple(self.class_weights) if self.class_weights else None

        def loss_fn(model, batch, mode, rng):
            bx, by = batch
            return det_bce_loss(model.forward(bx, mode=mode, rng=rng), by, weights=weights)

        valid_arrays = None
        if validation_data is not None:
            Xv = validation.check_feature_matrix(validation_data[0], "validation X").astype(dtype)
            yv = validation.check_binary_targets(validation_data[1], Xv.shape[0], "validation y")
            valid_arrays = (Xv, yv)
        trainer = Trainer(
            self.model_, loss_fn, (X, y), valid_arrays,
            lr=self.lr, batch_size=self.batch_size, patience=self.patience, seed=self.seed,
        )
        trainer.run(self.max_epochs)
        trainer.finish()
        self.history_ = trainer.history
        return self

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        X = validation.check_feature_matrix(X).astype(default_dtype())
        return self.model_.forward(X, mode="infer").data.copy()

    def predict(self, X, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(X) >= threshold).astype(np.int64)

    def score(self, X, y) -> float:
        y = validation.check_binary_targets(y, np.asarray(X).shape[0])
        return detection_metrics(self.predict_proba(X), y)["accuracy"]

    def metrics(self, X, y, threshold: float = 0.5) -> dict:
        y = validation.check_binary_targets(y, np.asarray(X).shape[0])
        return detection_metrics(self.predict_proba(X), y, threshold)

    def save(self, path) -> None:
        self._check_fitted()
        payload = {
            "estimator": {"class": type(self).__name__, "params": _jsonable(self.get_params())}
        }
        dataio.save_checkpoint(path, self.model_, extra={"json": payload, "arrays": {}})

    @classmethod
    def load(cls, path):
        model, extra = dataio.load_checkpoint(path)
        if extra is None or "estimator" not in extra["json"]:
            raise ConfigError(f"checkpoint {path} carries no estimator config")
        info = extra["json"]["estimator"]
        est = cls()
        est.set_params(**_tupleize(est, info["params"]))
        est.model_ = model
        est.history_ = []
        return est


_ESTIMATOR_CLASSES = {
    "HighLevelScanpathEstimator": HighLevelScanpathEstimator,
    "PanopticScanpathEstimator": PanopticScanpathEstimator,
    "DualTaskScanpathEstimator": DualTaskScanpathEstimator,
    "TargetDetector": TargetDetector,
}
