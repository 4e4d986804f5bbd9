"""Dataset ingestion, preprocessing, synthetic scenes, and file formats.

Scanpath JSON mirrors the COCO-Search18 field names (name, task, bbox, X,
Y, condition) so real exports drop in unmodified; unknown fields are
ignored.  Feature maps and model parameters travel in a small binary
tensor format, and checkpoints are zip archives of a JSON manifest plus
one tensor file per parameter.
"""
from __future__ import annotations

import dataclasses
import json
import os
import struct
import zipfile
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from fovealsearch import seeding
from fovealsearch.encoding import GridSpec, pixel_to_cell
from fovealsearch.foveation import gaussian_blur

Cell = tuple[int, int]

SEQUENCE_LENGTH = 7
MAX_SACCADES = SEQUENCE_LENGTH - 1


class FileFormatError(ValueError):
    """A tensor file, corpus file, or checkpoint is malformed."""


class CheckpointMismatchError(ValueError):
    """A checkpoint does not match the requested model configuration."""


# ---------------------------------------------------------------------------
# scanpath records


@dataclass
class ScanpathRecord:
    """One human or predicted gaze sequence for a search task."""

    name: str
    task: str
    target_present: bool
    bbox: tuple[float, float, float, float] | None
    xs: list[float]
    ys: list[float]
    split: str | None = None

    def __post_init__(self):
        if len(self.xs) != len(self.ys):
            raise ValueError(f"record {self.name!r}: X and Y lengths differ")
        if not self.target_present:
            self.bbox = None

    def fixation_cells(self, grid: GridSpec) -> list[Cell]:
        return [pixel_to_cell(x, y, grid) for x, y in zip(self.xs, self.ys)]

    def to_json(self) -> dict:
        payload = {
            "name": self.name,
            "task": self.task,
            "condition": "present" if self.target_present else "absent",
            "X": [float(x) for x in self.xs],
            "Y": [float(y) for y in self.ys],
        }
        if self.bbox is not None:
            payload["bbox"] = [float(v) for v in self.bbox]
        if self.split is not None:
            payload["split"] = self.split
        return payload

    @classmethod
    def from_json(cls, payload: Mapping) -> "ScanpathRecord":
        condition = payload.get("condition", "present")
        present = condition == "present"
        bbox = payload.get("bbox")
        if bbox is not None:
            bbox = tuple(float(v) for v in bbox)
        split = payload.get("split")
        if split not in (None, "train", "valid", "test"):
            split = None
        return cls(
            name=str(payload["name"]),
            task=str(payload["task"]),
            target_present=present,
            bbox=bbox if present else None,
            xs=[float(v) for v in payload["X"]],
            ys=[float(v) for v in payload["Y"]],
            split=split,
        )


def load_scanpaths(path: str | Path) -> list[ScanpathRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if not isinstance(payload, list):
        raise FileFormatError(f"{path}: scanpath file must hold a JSON list")
    return [ScanpathRecord.from_json(entry) for entry in payload]


def save_scanpaths(path: str | Path, records: Iterable[ScanpathRecord]) -> None:
    _atomic_write_text(path, json.dumps([r.to_json() for r in records], indent=1))


def preprocess(
    record: ScanpathRecord,
    grid: GridSpec,
    source_size: tuple[int, int] | None = None,
) -> ScanpathRecord | None:
    """Fix a raw record to exactly 7 fixations, or discard it.

    Records with more than 6 raw fixations (saccades) are dropped.  The
    imposed center fixation is prepended and the last fixation repeated up
    to length 7.  ``source_size`` (height, width) rescales pixel
    coordinates onto the grid's image size.  Already-processed records
    pass through unchanged.
    """
    if not record.xs:
        raise ValueError(f"record {record.name!r} has no fixations")
    cx, cy = grid.center_pixel
    if len(record.xs) == SEQUENCE_LENGTH and record.xs[0] == cx and record.ys[0] == cy:
        return record
    xs, ys = list(record.xs), list(record.ys)
    bbox = record.bbox
    if source_size is not None:
        src_h, src_w = source_size
        sx = grid.image_width / src_w
        sy = grid.image_height / src_h
        xs = [x * sx for x in xs]
        ys = [y * sy for y in ys]
        if bbox is not None:
            bbox = (bbox[0] * sx, bbox[1] * sy, bbox[2] * sx, bbox[3] * sy)
    if len(xs) > MAX_SACCADES:
        return None
    xs = [cx] + xs
    ys = [cy] + ys
    while len(xs) < SEQUENCE_LENGTH:
        xs.append(xs[-1])
        ys.append(ys[-1])
    return dataclasses.replace(record, xs=xs, ys=ys, bbox=bbox)


def preprocess_all(
    records: Iterable[ScanpathRecord],
    grid: GridSpec,
    source_size: tuple[int, int] | None = None,
) -> list[ScanpathRecord]:
    out = []
    for record in records:
        processed = preprocess(record, grid, source_size)
        if processed is not None:
            out.append(processed)
    return out


def _largest_remainder(total: int, ratios: Sequence[float]) -> list[int]:
    exact = [total * r for r in ratios]
    counts = [int(np.floor(e)) for e in exact]
    remainder = total - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: exact[i] - counts[i], reverse=True)
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def split_records(
    records: Sequence[ScanpathRecord],
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
    seed: int = 0,
) -> list[ScanpathRecord]:
    """Stratified train/valid/test assignment per task class.

    Deterministic under the seed; all sequences of an image land in the
    same split so no image straddles splits.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    by_task: dict[str, list[ScanpathRecord]] = defaultdict(list)
    for record in records:
        by_task[record.task].append(record)
    assignment: dict[tuple[str, str], str] = {}
    rng = seeding.stream(seed, "split")
    for task in sorted(by_task):
        task_records = by_task[task]
        if len(task_records) < 3:
            raise ValueError(f"task {task!r} has fewer than 3 records; cannot split")
        names = sorted({r.name for r in task_records})
        rng.shuffle(names)
        n_train, n_valid, n_test = _largest_remainder(len(names), ratios)
        for i, name in enumerate(names):
            tag = "train" if i < n_train else ("valid" if i < n_train + n_valid else "test")
            assignment[(task, name)] = tag
    return [dataclasses.replace(r, split=assignment[(r.task, r.name)]) for r in records]


# ---------------------------------------------------------------------------
# feature storage


class FeatureStore:
    """Maps (image name, variant tag) to feature tensors.

    Variants used by the pipeline: ``full`` and ``blurred`` acuity maps;
    per-fixation (``fix0`` ..) and per-cell crop (``crop_r_c``) tags are
    read when present.  Backed by memory, a directory of tensor files, or
    both (memory wins).
    """

    def __init__(self, arrays: dict | None = None, directory: str | Path | None = None):
        self._arrays: dict[tuple[str, str], np.ndarray] = dict(arrays or {})
        self._directory = Path(directory) if directory is not None else None

    def _path(self, name: str, variant: str) -> Path | None:
        if self._directory is None:
            return None
        return self._directory / f"{name}__{variant}.ftns"

    def has(self, name: str, variant: str) -> bool:
        if (name, variant) in self._arrays:
            return True
        path = self._path(name, variant)
        return path is not None and path.exists()

    def get(self, name: str, variant: str) -> np.ndarray:
        key = (name, variant)
        if key not in self._arrays:
            path = self._path(name, variant)
            if path is None or not path.exists():
                raise KeyError(f"no features for image {name!r} variant {variant!r}")
            self._arrays[key] = read_tensor_file(path)
        return self._arrays[key]

    def put(self, name: str, variant: str, array: np.ndarray) -> None:
        self._arrays[(name, variant)] = np.asarray(array)

    def keys(self) -> list[tuple[str, str]]:
        return sorted(self._arrays)

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for (name, variant), array in self._arrays.items():
            write_tensor_file(directory / f"{name}__{variant}.ftns", array)


@dataclass
class SearchCorpus:
    """A grid, its preprocessed scanpath records, and their feature maps."""

    grid: GridSpec
    records: list[ScanpathRecord]
    features: FeatureStore
    tasks: list[str] = field(default_factory=list)
    feature_channels: int = 0

    def __post_init__(self):
        if not self.tasks:
            self.tasks = sorted({r.task for r in self.records})
        if not self.feature_channels and self.records:
            name = self.records[0].name
            if self.features.has(name, "full"):
                self.feature_channels = int(self.features.get(name, "full").shape[-1])

    def subset(self, split: str) -> list[ScanpathRecord]:
        return [r for r in self.records if r.split == split]

    def ensure_splits(self, seed: int) -> None:
        if any(r.split is None for r in self.records):
            self.records = split_records(self.records, seed=seed)


def crop_features(
    store: FeatureStore, name: str, cell: Cell, grid: GridSpec, window: int = 1
) -> np.ndarray:
    """Flattened feature neighborhood around a fixation cell.

    Uses a precomputed ``crop_r_c`` variant when available, otherwise
    derives a zero-padded (2*window+1)^2 patch from the full-acuity map.
    """
    r, c = cell
    variant = f"crop_{r}_{c}"
    if store.has(name, variant):
        return store.get(name, variant).reshape(-1)
    full = store.get(name, "full")
    channels = full.shape[-1]
    padded = np.zeros((grid.rows + 2 * window, grid.cols + 2 * window, channels), full.dtype)
    padded[window : window + grid.rows, window : window + grid.cols] = full
    patch = padded[r : r + 2 * window + 1, c : c + 2 * window + 1]
    return patch.reshape(-1)


# ---------------------------------------------------------------------------
# synthetic scenes


def synth_corpus(
    seed: int,
    grid: GridSpec | None = None,
    n_tasks: int = 4,
    difficulty: float = 0.2,
    n_scenes: int = 200,
    present_fraction: float = 1.0,
    n_channels: int | None = None,
    blur_sigma: float = 1.0,
    noise_level: float = 0.2,
    distractor_prob: float = 0.5,
) -> SearchCorpus:
    """Grid-world corpus standing in for a real gaze dataset.

    Each scene plants its target class's signature (a unit bump on that
    class's feature channel) at a random cell, plus distractor signatures
    of other classes.  "Human" scanpaths jump to the target with
    probability 1 - difficulty per step and wander otherwise, then hold
    fixation once the target is found.  Full and Gaussian-blurred feature
    variants are emitted for belief-map composition.
    """
    if grid is None:
        grid = GridSpec(rows=6, cols=8, image_height=192, image_width=256)
    if not 0.0 <= difficulty <= 1.0:
        raise ValueError("difficulty must be in [0, 1]")
    rng = seeding.stream(seed, "synth")
    tasks = [f"target{i:02d}" for i in range(n_tasks)]
    channels = n_channels if n_channels is not None else n_tasks + 4
    if channels < n_tasks:
        raise ValueError("need at least one feature channel per task")
    store = FeatureStore()
    records: list[ScanpathRecord] = []
    cells = [(r, c) for r in range(grid.rows) for c in range(grid.cols)]
    center = grid.center_cell

    def random_cell(exclude: set[Cell]) -> Cell:
        while True:
            cell = cells[int(rng.integers(len(cells)))]
            if cell not in exclude:
                return cell

    def jitter_pixel(cell: Cell) -> tuple[float, float]:
        x0, y0, w, h = grid.cell_rect(cell)
        return (x0 + (0.1 + 0.8 * rng.random()) * w, y0 + (0.1 + 0.8 * rng.random()) * h)

    for i in range(n_scenes):
        name = f"scene{i:05d}"
        task_idx = i % n_tasks
        present = bool(rng.random() < present_fraction)
        target = random_cell({center})
        features = rng.uniform(0.0, noise_level, size=(grid.rows, grid.cols, channels))
        occupied = {target}
        if present:
            features[target[0], target[1], task_idx] += 1.0
        for other in range(n_tasks):
            if other != task_idx and rng.random() < distractor_prob:
                cell = random_cell(occupied | {center})
                occupied.add(cell)
                features[cell[0], cell[1], other] += 1.0
        store.put(name, "full", features.astype(np.float32))
        store.put(name, "blurred", gaussian_blur(features, blur_sigma).astype(np.float32))

        path: list[Cell] = []
        if present:
            for _ in range(MAX_SACCADES):
                nxt = target if rng.random() >= difficulty else random_cell(set())
                path.append(nxt)
                if nxt == target:
                    break
        else:
            for _ in range(int(rng.integers(1, MAX_SACCADES + 1))):
                path.append(random_cell(set()))
        xs, ys = zip(*(jitter_pixel(cell) for cell in path))
        records.append(
            ScanpathRecord(
                name=name,
                task=tasks[task_idx],
                target_present=present,
                bbox=tuple(float(v) for v in grid.cell_rect(target)) if present else None,
                xs=list(xs),
                ys=list(ys),
            )
        )

    processed = preprocess_all(records, grid)
    return SearchCorpus(grid=grid, records=processed, features=store, tasks=tasks)


def save_corpus(corpus: SearchCorpus, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "grid": corpus.grid.to_json(),
        "tasks": corpus.tasks,
        "feature_channels": corpus.feature_channels,
    }
    _atomic_write_text(directory / "meta.json", json.dumps(meta, indent=1))
    save_scanpaths(directory / "scanpaths.json", corpus.records)
    corpus.features.save(directory / "features")


def load_corpus(
    directory: str | Path,
    grid: GridSpec | None = None,
    source_size: tuple[int, int] | None = None,
) -> SearchCorpus:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if grid is None:
        if not meta_path.exists():
            raise FileFormatError(f"{directory}: no meta.json and no grid given")
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
        grid = GridSpec.from_json(meta["grid"])
    records = preprocess_all(load_scanpaths(directory / "scanpaths.json"), grid, source_size)
    store = FeatureStore(directory=directory / "features")
    return SearchCorpus(grid=grid, records=records, features=store)


# ---------------------------------------------------------------------------
# tensor file format

_MAGIC = b"FTNS"
_VERSION = 1
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def write_tensor_file(path: str | Path, array: np.ndarray) -> None:
    """Binary layout: "FTNS", version u32, dtype u8 (0=f32, 1=f64),
    ndim u32, dims u32 each, then the row-major little-endian payload."""
    arr = np.ascontiguousarray(array)
    if arr.dtype not in _CODE_FOR_KIND:
        arr = arr.astype(np.float64 if arr.dtype == np.float64 else np.float32)
    code = _CODE_FOR_KIND[np.dtype(arr.dtype)]
    for dim in arr.shape:
        if dim > 0xFFFFFFFF:
            raise FileFormatError(f"dimension {dim} overflows the u32 header field")
    header = _MAGIC + struct.pack("<IBI", _VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    payload = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
    _atomic_write_bytes(path, header + payload)


def read_tensor_file(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    return decode_tensor(blob, str(path))


def decode_tensor(blob: bytes, origin: str = "<bytes>") -> np.ndarray:
    if blob[:4] != _MAGIC:
        raise FileFormatError(f"{origin}: bad magic bytes")
    if len(blob) < 13:
        raise FileFormatError(f"{origin}: truncated header")
    version, code, ndim = struct.unpack_from("<IBI", blob, 4)
    if version != _VERSION:
        raise FileFormatError(f"{origin}: unsupported version {version}")
    if code not in _DTYPE_CODES:
        raise FileFormatError(f"{origin}: unknown dtype code {code}")
    offset = 13
    if len(blob) < offset + 4 * ndim:
        raise FileFormatError(f"{origin}: truncated dimension list")
    dims = struct.unpack_from(f"<{ndim}I", blob, offset) if ndim else ()
    offset += 4 * ndim
    dtype = _DTYPE_CODES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
    if len(blob) - offset != expected:
        raise FileFormatError(
            f"{origin}: corrupt payload, expected {expected} bytes, got {len(blob) - offset}"
        )
    arr = np.frombuffer(blob, dtype=dtype, count=-1, offset=offset).reshape(dims)
    return arr.astype(dtype.newbyteorder("=")).copy()


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | Path, model, extra: dict | None = None) -> None:
    """Archive = manifest JSON + one tensor file per parameter and buffer.

    ``extra`` may carry trainer state: {"json": <serializable>, "arrays":
    {name: ndarray}}.  The file is committed with an atomic rename.
    """
    path = Path(path)
    manifest = {
        "format": "fovealsearch.checkpoint",
        "version": 1,
        "model": model.manifest(),
        "params": sorted(model.params()),
        "buffers": sorted(model.buffers()),
    }
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=1))
        for name, param in model.params().items():
            zf.writestr(f"params/{name}.ftns", _tensor_bytes(param.data))
        for name, buf in model.buffers().items():
            zf.writestr(f"buffers/{name}.ftns", _tensor_bytes(buf))
        if extra is not None:
            zf.writestr("state/state.json", json.dumps(extra.get("json", {}), indent=1))
            for name, arr in extra.get("arrays", {}).items():
                zf.writestr(f"state/{name}.ftns", _tensor_bytes(np.asarray(arr)))
    os.replace(tmp, path)


def load_checkpoint(path: str | Path, expected_config: Mapping | None = None):
    """Rebuild the archived model; returns (model, extra_state or None)."""
    from fovealsearch import models as model_registry

    with zipfile.ZipFile(path, "r") as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format") != "fovealsearch.checkpoint":
            raise FileFormatError(f"{path}: not a checkpoint archive")
        model_manifest = manifest["model"]
        if expected_config:
            stated = {"family": model_manifest["family"], **model_manifest["config"]}
            for key, wanted in expected_config.items():
                if key in stated and stated[key] != wanted:
                    raise CheckpointMismatchError(
                        f"{key}: expected {wanted!r}, checkpoint has {stated[key]!r}"
                    )
        model = model_registry.model_from_manifest(model_manifest)
        params = model.params()
        for name in manifest["params"]:
            if f"params/{name}.ftns" not in zf.namelist():
                raise FileFormatError(f"{path}: missing parameter {name}")
        for name, param in params.items():
            try:
                blob = zf.read(f"params/{name}.ftns")
            except KeyError:
                raise FileFormatError(f"{path}: missing parameter {name}") from None
            value = decode_tensor(blob, name)
            if value.shape != param.shape:
                raise CheckpointMismatchError(
                    f"parameter {name}: shape {value.shape} does not fit {param.shape}"
                )
            param.assign(value.astype(param.data.dtype))
        buffer_values = {}
        for name in manifest["buffers"]:
            buffer_values[name] = decode_tensor(zf.read(f"buffers/{name}.ftns"), name)
        model.load_buffers(buffer_values)
        extra = None
        if "state/state.json" in zf.namelist():
            arrays = {}
            for info in zf.namelist():
                if info.startswith("state/") and info.endswith(".ftns"):
                    arrays[info[len("state/") : -len(".ftns")]] = decode_tensor(zf.read(info), info)
            extra = {"json": json.loads(zf.read("state/state.json")), "arrays": arrays}
    return model, extra


def _tensor_bytes(array: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(array)
    if arr.dtype not in _CODE_FOR_KIND:
        arr = arr.astype(np.float64)
    code = _CODE_FOR_KIND[np.dtype(arr.dtype)]
    header = _MAGIC + struct.pack("<IBI", _VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    return header + arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C")


# ---------------------------------------------------------------------------
# images (PNG via Pillow, binary PPM natively)


def read_image(path: str | Path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        return _read_ppm(path)
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def write_image(path: str | Path, array: np.ndarray) -> None:
    path = Path(path)
    arr = np.asarray(array, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) uint8 image, got shape {arr.shape}")
    if path.suffix.lower() == ".ppm":
        header = f"P6\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
        _atomic_write_bytes(path, header + arr.tobytes())
        return
    from PIL import Image

    Image.fromarray(arr, mode="RGB").save(path)


def _read_ppm(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"P6"):
        raise FileFormatError(f"{path}: not a binary PPM (P6) file")
    tokens = []
    i = 2
    while len(tokens) < 3:
        while i < len(blob) and blob[i : i + 1].isspace():
            i += 1
        if blob[i : i + 1] == b"#":
            while i < len(blob) and blob[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(blob) and not blob[i : i + 1].isspace():
            i += 1
        tokens.append(blob[start:i])
    i += 1  # single whitespace after maxval
    width, height, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise FileFormatError(f"{path}: only 8-bit PPM supported")
    expected = width * height * 3
    payload = blob[i : i + expected]
    if len(payload) != expected:
        raise FileFormatError(f"{path}: truncated PPM payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()


def _atomic_write_bytes(path: str | Path, blob: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def _atomic_write_text(path: str | Path, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))
