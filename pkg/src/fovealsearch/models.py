"""Model families for fixation prediction and target detection.

Three families share one contract: consume a teacher-forced sequence of
feature maps plus a task encoding, emit per-step scores over the fixation
grid (and detection probabilities for the dual family).

* high_level: task-gated features -> ConvLSTM -> batch norm -> dense softmax.
* panoptic: channel-concatenated spatial task planes -> a stack of
  ConvLSTM+BatchNorm layers -> a 1-filter conv head, either sigmoid scores
  per cell or ReLU + dense softmax.
* dual: a shared task-gated input feeding a fixation branch and a
  detection branch with state handoff between them (architectures A/B/C).
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from fovealsearch import tensor as T
from fovealsearch.encoding import (
    TASK_HEATMAP_2D,
    TASK_HEATMAP_FLAT,
    TASK_ONEHOT,
    TASK_SPATIAL,
    GridSpec,
)
from fovealsearch.nn import Adam, BatchNorm, ConvLstmCell, dropout, init_dense
from fovealsearch.tensor import Tensor

FAMILY_HIGH_LEVEL = "high_level"
FAMILY_PANOPTIC = "panoptic"
FAMILY_DUAL = "dual"
FAMILY_DETECTOR = "detector"

HEAD_SIGMOID = "sigmoid"
HEAD_SOFTMAX = "softmax"

DUAL_ARCHITECTURES = ("A", "B", "C")

EPS_LOG = 1e-12


# ---------------------------------------------------------------------------
# losses


def seq_ce_loss(predicted: Tensor, target) -> Tensor:
    """Cross entropy summed over batch, time, and cells: -sum y * log(y_hat).

    Predictions are floored at 1e-12 before the log.  Works for softmax
    distributions and for per-cell sigmoid scores alike.
    """
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target))
    if target.shape != predicted.shape:
        raise ValueError(f"loss shape mismatch: {predicted.shape} vs {target.shape}")
    return T.neg(T.mul(target, T.log(T.clip(predicted, EPS_LOG, None))).sum())


def det_bce_loss(predicted: Tensor, target, weights: tuple[float, float] | None = None) -> Tensor:
    """Mean binary cross entropy, optionally class-weighted.

    With ``weights=(w1, w0)`` each element's BCE term is scaled by
    w = y*w1 + (1-y)*w0 before the mean, countering detection imbalance.
    """
    target_arr = np.asarray(target.data if isinstance(target, Tensor) else target)
    if target_arr.shape != predicted.shape:
        raise ValueError(f"loss shape mismatch: {predicted.shape} vs {target_arr.shape}")
    y = Tensor(target_arr)
    pos = T.mul(y, T.log(T.clip(predicted, EPS_LOG, None)))
    neg_term = T.mul(1.0 - y, T.log(T.clip(T.sub(1.0, predicted), EPS_LOG, None)))
    bce = T.neg(T.add(pos, neg_term))
    if weights is not None:
        w1, w0 = weights
        if w1 <= 0 or w0 <= 0:
            raise ValueError("class weights must be positive")
        w = Tensor(target_arr * w1 + (1.0 - target_arr) * w0)
        bce = T.mul(w, bce)
    return bce.mean()


def dual_loss(loss_fix: Tensor, loss_det: Tensor, w_fix: float) -> Tensor:
    """Convex combination w_fix * L_fix + (1 - w_fix) * L_det."""
    if not 0.0 <= w_fix <= 1.0:
        raise ValueError(f"w_fix must lie in [0, 1], got {w_fix}")
    return T.add(T.mul(loss_fix, w_fix), T.mul(loss_det, 1.0 - w_fix))


# ---------------------------------------------------------------------------
# shared pieces


def _as_batch(values, expected_ndim: int) -> Tensor:
    arr = values.data if isinstance(values, Tensor) else np.asarray(values)
    if arr.ndim == expected_ndim - 1:
        arr = arr[None]
    if arr.ndim != expected_ndim:
        raise ValueError(f"expected {expected_ndim - 1}- or {expected_ndim}-dim input, got {arr.shape}")
    return values if isinstance(values, Tensor) and values.ndim == expected_ndim else Tensor(arr)


class MlpHead:
    """Stack of dense layers: ReLU between, sigmoid at the end."""

    def __init__(
        self,
        in_dim: int,
        units: Sequence[int],
        rng: np.random.Generator,
        dropout_rate: float | None = None,
        name: str = "head",
    ):
        self.in_dim = in_dim
        self.units = tuple(units)
        self.dropout_rate = dropout_rate
        self.name = name
        dims = [in_dim, *units, 1]
        self.layers = [init_dense(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)]

    def __call__(self, x: Tensor, mode: str, rng: np.random.Generator | None = None) -> Tensor:
        out = x
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            out = T.dense(out, w, b)
            if i < last:
                out = T.relu(out)
                if self.dropout_rate:
                    out = dropout(out, self.dropout_rate, mode, rng)
            else:
                out = T.sigmoid(out)
        return out

    def params(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(self.layers):
            out[f"{self.name}.fc{i + 1}.w"] = w
            out[f"{self.name}.fc{i + 1}.b"] = b
        return out


class _TaskGate:
    """Task-encoding aggregation via elementwise multiply.

    Flat encodings (one-hot, flattened heat map) pass through a dense
    layer with tanh and dropout, producing a per-channel gain; 2-D heat
    maps multiply spatially and need no parameters.
    """

    def __init__(self, kind: str, task_dim: int, channels: int, dropout_rate: float,
                 rng: np.random.Generator, name: str = "task"):
        if kind not in (TASK_ONEHOT, TASK_HEATMAP_2D, TASK_HEATMAP_FLAT):
            raise ValueError(f"unsupported task encoding {kind!r} for multiplicative gating")
        self.kind = kind
        self.dropout_rate = dropout_rate
        self.name = name
        if kind in (TASK_ONEHOT, TASK_HEATMAP_FLAT):
            self.weight, self.bias = init_dense(task_dim, channels, rng)
        else:
            self.weight = self.bias = None

    def __call__(self, task: Tensor, mode: str, rng: np.random.Generator | None) -> Tensor:
        if self.kind == TASK_HEATMAP_2D:
            b, rows, cols = task.shape
            return task.reshape(b, rows, cols, 1)
        gain = T.tanh(T.dense(task, self.weight, self.bias))
        gain = dropout(gain, self.dropout_rate, mode, rng)
        b, ch = gain.shape
        return gain.reshape(b, 1, 1, ch)

    def params(self) -> dict[str, Tensor]:
        if self.weight is None:
            return {}
        return {f"{self.name}.w": self.weight, f"{self.name}.b": self.bias}


class SequenceStepper:
    """Single-sequence inference driver used by decoding.

    ``x_provider(cells)`` returns the feature map observed after fixating
    the given cell history; the model threads its recurrent state.
    """

    def __init__(self, model, task_values: np.ndarray, x_provider: Callable):
        self.model = model
        self.task_values = np.asarray(task_values)
        self.x_provider = x_provider

    def begin(self):
        return self.model.infer_initial_state()

    def step(self, state, cells):
        x = self.x_provider(cells)
        return self.model.infer_step(x, self.task_values, state)


# ---------------------------------------------------------------------------
# high-level-feature fixation model


class HighLevelFixationModel:
    """Task-gated feature maps -> ConvLSTM -> batch norm -> dense softmax."""

    family = FAMILY_HIGH_LEVEL

    def __init__(
        self,
        grid: GridSpec,
        in_channels: int,
        n_tasks: int,
        task_encoding: str = TASK_ONEHOT,
        filters: int = 5,
        kernel_size: int = 4,
        stride: int = 2,
        padding: int = 1,
        use_batchnorm: bool = True,
        dropout_rate: float = 0.5,
        rng: np.random.Generator | None = None,
    ):
        if rng is None:
            rng = np.random.default_rng(0)
        self.grid = grid
        self.in_channels = in_channels
        self.n_tasks = n_tasks
        self.task_encoding = task_encoding
        self.use_batchnorm = use_batchnorm
        self.dropout_rate = dropout_rate
        task_dim = n_tasks if task_encoding == TASK_ONEHOT else grid.n_cells
        self.task_gate = _TaskGate(task_encoding, task_dim, in_channels, dropout_rate, rng)
        self.cell = ConvLstmCell(in_channels, filters, kernel_size, stride, padding, rng, name="lstm")
        self.state_rows, self.state_cols = self.cell.out_spatial(grid.rows, grid.cols)
        self.bn = BatchNorm(filters, name="bn") if use_batchnorm else None
        flat = self.state_rows * self.state_cols * filters
        self.out_w, self.out_b = init_dense(flat, grid.n_cells, rng)

    def forward(self, x_steps: Sequence, task_values, mode: str = "train",
                rng: np.random.Generator | None = None) -> Tensor:
        """Per-step distributions over grid cells, shaped (T, B, H*W)."""
        xs = [_as_batch(x, 4) for x in x_steps]
        batch = xs[0].shape[0]
        task = _as_batch(task_values, 2 if self.task_encoding != TASK_HEATMAP_2D else 3)
        gate = self.task_gate(task, mode, rng)
        h, c = self.cell.initial_state(batch, self.grid.rows, self.grid.cols)
        states = []
        for x in xs:
            h, c = self.cell.step(T.mul(x, gate), h, c)
            states.append(h)
        stacked = T.stack(states)
        if self.bn is not None:
            stacked = self.bn(stacked, mode)
        flat = stacked.reshape(len(xs) * batch, -1)
        probs = T.softmax(T.dense(flat, self.out_w, self.out_b))
        return probs.reshape(len(xs), batch, self.grid.n_cells)

    def infer_initial_state(self):
        return self.cell.initial_state(1, self.grid.rows, self.grid.cols)

    def infer_step(self, x: np.ndarray, task_values: np.ndarray, state):
        h_prev, c_prev = state
        task = _as_batch(task_values, 2 if self.task_encoding != TASK_HEATMAP_2D else 3)
        gate = self.task_gate(task, "infer", None)
        x4 = _as_batch(x, 4)
        h, c = self.cell.step(T.mul(x4, gate), h_prev, c_prev)
        out = self.bn(h, "infer") if self.bn is not None else h
        probs = T.softmax(T.dense(out.reshape(1, -1), self.out_w, self.out_b))
        return probs.data[0], (h, c), None

    def params(self) -> dict[str, Tensor]:
        out = dict(self.task_gate.params())
        out.update(self.cell.params())
        if self.bn is not None:
            out.update(self.bn.params())
        out["out.w"] = self.out_w
        out["out.b"] = self.out_b
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        return dict(self.bn.buffers()) if self.bn is not None else {}

    def load_buffers(self, values) -> None:
        if self.bn is not None:
            self.bn.load_buffers(values)

    def manifest(self) -> dict:
        return {
            "family": self.family,
            "config": {
                "grid": self.grid.to_json(),
                "in_channels": self.in_channels,
                "n_tasks": self.n_tasks,
                "task_encoding": self.task_encoding,
                "filters": self.cell.filters,
                "kernel_size": self.cell.kernel_size,
                "stride": self.cell.stride,
                "padding": self.cell.padding,
                "use_batchnorm": self.use_batchnorm,
                "dropout_rate": self.dropout_rate,
            },
        }


# ---------------------------------------------------------------------------
# panoptic-feature fixation model


class PanopticFixationModel:
    """Belief maps concatenated with spatial task planes through a ConvLSTM stack.

    The head convolution (1 filter, kernel 2, padding 1) over-produces one
    row and column, which are cropped back to the grid before the final
    activation.  The sigmoid head emits per-cell scores and is only valid
    with Gaussian ground truth; the softmax head flattens through a dense
    layer instead.
    """

    family = FAMILY_PANOPTIC

    def __init__(
        self,
        grid: GridSpec,
        in_channels: int,
        n_tasks: int,
        depth: int = 1,
        head: str = HEAD_SIGMOID,
        filters: int = 10,
        kernel_size: int = 3,
        stride: int = 1,
        padding: int = 1,
        head_kernel: int = 2,
        head_padding: int = 1,
        use_batchnorm: bool = True,
        rng: np.random.Generator | None = None,
    ):
        if rng is None:
            rng = np.random.default_rng(0)
        if depth < 1:
            raise ValueError("depth must be >= 1")
        if head not in (HEAD_SIGMOID, HEAD_SOFTMAX):
            raise ValueError(f"unknown head {head!r}")
        self.grid = grid
        self.in_channels = in_channels
        self.n_tasks = n_tasks
        self.depth = depth
        self.head = head
        self.use_batchnorm = use_batchnorm
        self.task_encoding = TASK_SPATIAL
        self.cells: list[ConvLstmCell] = []
        self.bns: list[BatchNorm] = []
        rows, cols = grid.rows, grid.cols
        for layer in range(depth):
            cin = in_channels + n_tasks if layer == 0 else filters
            cell = ConvLstmCell(cin, filters, kernel_size, stride, padding, rng, name=f"lstm{layer + 1}")
            out_rows, out_cols = cell.out_spatial(rows, cols)
            if (out_rows, out_cols) != (rows, cols):
                raise ValueError(
                    "recurrent stack must preserve the grid resolution; "
                    f"layer {layer + 1} maps {rows}x{cols} to {out_rows}x{out_cols}"
                )
            self.cells.append(cell)
            if use_batchnorm:
                self.bns.append(BatchNorm(filters, name=f"bn{layer + 1}"))
        from fovealsearch.nn import init_conv

        self.head_kernel = head_kernel
        self.head_padding = head_padding
        self.head_conv = init_conv(head_kernel, filters, 1, rng)
        self.head_bias = Tensor(np.zeros(1, dtype=T.default_dtype()), requires_grad=True)
        if head == HEAD_SOFTMAX:
            self.out_w, self.out_b = init_dense(grid.n_cells, grid.n_cells, rng)

    def _run_stack(self, steps: list[Tensor], mode: str) -> Tensor:
        seq = steps
        stacked = None
        n_steps, batch = len(steps), steps[0].shape[0]
        for layer, cell in enumerate(self.cells):
            h, c = cell.initial_state(batch, self.grid.rows, self.grid.cols)
            outputs = []
            for x in seq:
                h, c = cell.step(x, h, c)
                outputs.append(h)
            stacked = T.stack(outputs)
            if self.use_batchnorm:
                stacked = self.bns[layer](stacked, mode)
            if layer < self.depth - 1:
                seq = [T.index_axis0(stacked, t) for t in range(n_steps)]
        return stacked

    def _head(self, stacked: Tensor, n_steps: int, batch: int) -> Tensor:
        rows, cols = self.grid.rows, self.grid.cols
        merged = stacked.reshape(n_steps * batch, rows, cols, -1)
        conv = T.conv2d(merged, self.head_conv, self.head_bias, stride=1, pad=self.head_padding)
        conv = T.crop2d(conv, rows, cols)
        if self.head == HEAD_SIGMOID:
            scores = T.sigmoid(conv)
            return scores.reshape(n_steps, batch, self.grid.n_cells)
        flat = T.relu(conv).reshape(n_steps * batch, self.grid.n_cells)
        probs = T.softmax(T.dense(flat, self.out_w, self.out_b))
        return probs.reshape(n_steps, batch, self.grid.n_cells)

    def forward(self, x_steps: Sequence, task_values, mode: str = "train",
                rng: np.random.Generator | None = None) -> Tensor:
        task = _as_batch(task_values, 4)
        xs = []
        for x in x_steps:
            xb = _as_batch(x, 4)
            batch = xb.shape[0]
            task_b = task if task.shape[0] == batch else Tensor(
                np.broadcast_to(task.data, (batch, *task.shape[1:])).copy()
            )
            xs.append(T.concat([xb, task_b], axis=3))
        stacked = self._run_stack(xs, mode)
        return self._head(stacked, len(xs), xs[0].shape[0])

    def infer_initial_state(self):
        return [cell.initial_state(1, self.grid.rows, self.grid.cols) for cell in self.cells]

    def infer_step(self, x: np.ndarray, task_values: np.ndarray, state):
        task = _as_batch(task_values, 4)
        current = T.concat([_as_batch(x, 4), task], axis=3)
        new_state = []
        for layer, cell in enumerate(self.cells):
            h, c = cell.step(current, *state[layer])
            new_state.append((h, c))
            current = self.bns[layer](h, "infer") if self.use_batchnorm else h
        out = self._head(current.reshape(1, 1, self.grid.rows, self.grid.cols, -1), 1, 1)
        return out.data[0, 0], new_state, None

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for cell in self.cells:
            out.update(cell.params())
        for bn in self.bns:
            out.update(bn.params())
        out["head.conv"] = self.head_conv
        out["head.bias"] = self.head_bias
        if self.head == HEAD_SOFTMAX:
            out["out.w"] = self.out_w
            out["out.b"] = self.out_b
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for bn in self.bns:
            out.update(bn.buffers())
        return out

    def load_buffers(self, values) -> None:
        for bn in self.bns:
            bn.load_buffers(values)

    def manifest(self) -> dict:
        return {
            "family": self.family,
            "config": {
                "grid": self.grid.to_json(),
                "in_channels": self.in_channels,
                "n_tasks": self.n_tasks,
                "depth": self.depth,
                "head": self.head,
                "filters": self.cells[0].filters,
                "kernel_size": self.cells[0].kernel_size,
                "stride": self.cells[0].stride,
                "padding": self.cells[0].padding,
                "head_kernel": self.head_kernel,
                "head_padding": self.head_padding,
                "use_batchnorm": self.use_batchnorm,
            },
        }


# ---------------------------------------------------------------------------
# dual-task model


class DualTaskModel:
    """Joint fixation prediction and per-step target detection.

    Architecture A: the fixation ConvLSTM is self-recurrent; every step its
    fresh (h, c) is handed to the detection ConvLSTM as that branch's
    previous state.  Architecture B swaps the roles.  Architecture C drops
    the detection ConvLSTM; its head reads flatten(x_t) concatenated with
    flatten(h_t) of the fixation branch.
    """

    family = FAMILY_DUAL

    def __init__(
        self,
        grid: GridSpec,
        in_channels: int,
        n_tasks: int,
        architecture: str = "A",
        filters: int = 5,
        kernel_size: int = 4,
        stride: int = 2,
        padding: int = 1,
        det_units: Sequence[int] = (64, 32),
        use_batchnorm: bool = True,
        dropout_rate: float = 0.5,
        rng: np.random.Generator | None = None,
    ):
        if rng is None:
            rng = np.random.default_rng(0)
        if architecture not in DUAL_ARCHITECTURES:
            raise ValueError(f"architecture must be one of {DUAL_ARCHITECTURES}, got {architecture!r}")
        self.grid = grid
        self.in_channels = in_channels
        self.n_tasks = n_tasks
        self.architecture = architecture
        self.use_batchnorm = use_batchnorm
        self.dropout_rate = dropout_rate
        self.det_units = tuple(det_units)
        self.task_encoding = TASK_ONEHOT
        self.task_gate = _TaskGate(TASK_ONEHOT, n_tasks, in_channels, dropout_rate, rng)
        self.fix_cell = ConvLstmCell(in_channels, filters, kernel_size, stride, padding, rng, name="fix")
        self.state_rows, self.state_cols = self.fix_cell.out_spatial(grid.rows, grid.cols)
        state_flat = self.state_rows * self.state_cols * filters
        if architecture in ("A", "B"):
            self.det_cell = ConvLstmCell(in_channels, filters, kernel_size, stride, padding, rng, name="det")
            self.det_in_dim = state_flat
        else:
            self.det_cell = None
            self.det_in_dim = grid.rows * grid.cols * in_channels + state_flat
        self.fix_bn = BatchNorm(filters, name="fix_bn") if use_batchnorm else None
        self.fix_w, self.fix_b = init_dense(state_flat, grid.n_cells, rng)
        self.det_head = MlpHead(self.det_in_dim, det_units, rng, dropout_rate=None, name="det_head")

    def _branches(self, xs: list[Tensor], trace: dict | None):
        batch = xs[0].shape[0]
        fix_states, det_feeds = [], []
        if self.architecture == "A":
            h_f, c_f = self.fix_cell.initial_state(batch, self.grid.rows, self.grid.cols)
            for x in xs:
                h_f, c_f = self.fix_cell.step(x, h_f, c_f)
                if trace is not None:
                    trace["det_prev"].append((h_f.data, c_f.data))
                h_d, _ = self.det_cell.step(x, h_f, c_f)
                fix_states.append(h_f)
                det_feeds.append(h_d)
        elif self.architecture == "B":
            h_d, c_d = self.det_cell.initial_state(batch, self.grid.rows, self.grid.cols)
            for x in xs:
                h_d, c_d = self.det_cell.step(x, h_d, c_d)
                if trace is not None:
                    trace["fix_prev"].append((h_d.data, c_d.data))
                h_f, _ = self.fix_cell.step(x, h_d, c_d)
                fix_states.append(h_f)
                det_feeds.append(h_d)
        else:
            h_f, c_f = self.fix_cell.initial_state(batch, self.grid.rows, self.grid.cols)
            for x in xs:
                h_f, c_f = self.fix_cell.step(x, h_f, c_f)
                fix_states.append(h_f)
                det_feeds.append(T.concat([x.reshape(batch, -1), h_f.reshape(batch, -1)], axis=1))
        if trace is not None:
            trace["fix_h"] = [h.data for h in fix_states]
            trace["det_feed"] = [d.data for d in det_feeds]
        return fix_states, det_feeds

    def forward(self, x_steps: Sequence, task_values, mode: str = "train",
                rng: np.random.Generator | None = None, trace: dict | None = None):
        """Returns (fixation (T, B, H*W), detection (T, B)) score tensors."""
        xs = [_as_batch(x, 4) for x in x_steps]
        batch = xs[0].shape[0]
        task = _as_batch(task_values, 2)
        gate = self.task_gate(task, mode, rng)
        gated = [T.mul(x, gate) for x in xs]
        if trace is not None:
            trace.setdefault("det_prev", [])
            trace.setdefault("fix_prev", [])
        fix_states, det_feeds = self._branches(gated, trace)
        n_steps = len(xs)
        stacked = T.stack(fix_states)
        if self.fix_bn is not None:
            stacked = self.fix_bn(stacked, mode)
        fix_flat = stacked.reshape(n_steps * batch, -1)
        fix_probs = T.softmax(T.dense(fix_flat, self.fix_w, self.fix_b))
        det_in = T.stack(det_feeds).reshape(n_steps * batch, self.det_in_dim)
        det_probs = self.det_head(det_in, mode, rng).reshape(n_steps, batch)
        return fix_probs.reshape(n_steps, batch, self.grid.n_cells), det_probs

    def infer_initial_state(self):
        cell = self.det_cell if self.architecture == "B" else self.fix_cell
        return cell.initial_state(1, self.grid.rows, self.grid.cols)

    def infer_step(self, x: np.ndarray, task_values: np.ndarray, state):
        task = _as_batch(task_values, 2)
        gate = self.task_gate(task, "infer", None)
        xg = T.mul(_as_batch(x, 4), gate)
        if self.architecture == "A":
            h_f, c_f = self.fix_cell.step(xg, *state)
            h_d, _ = self.det_cell.step(xg, h_f, c_f)
            new_state, det_feed = (h_f, c_f), h_d.reshape(1, -1)
        elif self.architecture == "B":
            h_d, c_d = self.det_cell.step(xg, *state)
            h_f, _ = self.fix_cell.step(xg, h_d, c_d)
            new_state, det_feed = (h_d, c_d), h_d.reshape(1, -1)
        else:
            h_f, c_f = self.fix_cell.step(xg, *state)
            new_state = (h_f, c_f)
            det_feed = T.concat([xg.reshape(1, -1), h_f.reshape(1, -1)], axis=1)
        out = self.fix_bn(h_f, "infer") if self.fix_bn is not None else h_f
        probs = T.softmax(T.dense(out.reshape(1, -1), self.fix_w, self.fix_b))
        det = self.det_head(det_feed, "infer", None)
        return probs.data[0], new_state, float(det.data.reshape(-1)[0])

    def params(self) -> dict[str, Tensor]:
        out = dict(self.task_gate.params())
        out.update(self.fix_cell.params())
        if self.det_cell is not None:
            out.update(self.det_cell.params())
        if self.fix_bn is not None:
            out.update(self.fix_bn.params())
        out["fix_out.w"] = self.fix_w
        out["fix_out.b"] = self.fix_b
        out.update(self.det_head.params())
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        return dict(self.fix_bn.buffers()) if self.fix_bn is not None else {}

    def load_buffers(self, values) -> None:
        if self.fix_bn is not None:
            self.fix_bn.load_buffers(values)

    def manifest(self) -> dict:
        return {
            "family": self.family,
            "config": {
                "grid": self.grid.to_json(),
                "in_channels": self.in_channels,
                "n_tasks": self.n_tasks,
                "architecture": self.architecture,
                "filters": self.fix_cell.filters,
                "kernel_size": self.fix_cell.kernel_size,
                "stride": self.fix_cell.stride,
                "padding": self.fix_cell.padding,
                "det_units": list(self.det_units),
                "use_batchnorm": self.use_batchnorm,
                "dropout_rate": self.dropout_rate,
            },
        }


# ---------------------------------------------------------------------------
# standalone detection head


class DetectionHead:
    """Binary target-presence classifier over fixation crop features."""

    family = FAMILY_DETECTOR

    def __init__(
        self,
        in_dim: int,
        units: Sequence[int] = (512, 256),
        dropout_rate: float = 0.5,
        task: str = "",
        rng: np.random.Generator | None = None,
    ):
        if rng is None:
            rng = np.random.default_rng(0)
        self.in_dim = in_dim
        self.units = tuple(units)
        self.dropout_rate = dropout_rate
        self.task = task
        self.head = MlpHead(in_dim, units, rng, dropout_rate=dropout_rate, name="det")

    def forward(self, x, mode: str = "infer", rng: np.random.Generator | None = None) -> Tensor:
        xt = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
        if xt.ndim == 1:
            xt = xt.reshape(1, -1)
        if xt.shape[-1] != self.in_dim:
            raise ValueError(f"feature length {xt.shape[-1]} does not match head fan-in {self.in_dim}")
        return self.head(xt, mode, rng).reshape(-1)

    def params(self) -> dict[str, Tensor]:
        return self.head.params()

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def load_buffers(self, values) -> None:
        pass

    def manifest(self) -> dict:
        return {
            "family": self.family,
            "config": {
                "in_dim": self.in_dim,
                "units": list(self.units),
                "dropout_rate": self.dropout_rate,
                "task": self.task,
            },
        }


# ---------------------------------------------------------------------------
# manifest registry


def model_from_manifest(manifest: dict, rng: np.random.Generator | None = None):
    family = manifest["family"]
    config = dict(manifest["config"])
    if "grid" in config:
        config["grid"] = GridSpec.from_json(config["grid"])
    if rng is None:
        rng = np.random.default_rng(0)
    builders = {
        FAMILY_HIGH_LEVEL: HighLevelFixationModel,
        FAMILY_PANOPTIC: PanopticFixationModel,
        FAMILY_DUAL: DualTaskModel,
        FAMILY_DETECTOR: DetectionHead,
    }
    if family not in builders:
        raise ValueError(f"unknown model family {family!r}")
    return builders[family](**config, rng=rng)


def make_optimizer(model, lr: float = 0.001) -> Adam:
    return Adam(model.params(), lr=lr)
