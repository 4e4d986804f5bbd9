"""Layers and optimizer built on the autodiff tensor core.

ConvLSTM cell, batch normalization with moving statistics, inverted
dropout, Adam, Glorot initialization, and validation-loss early stopping.
"""
from __future__ import annotations

import logging
from typing import Callable, Mapping

import numpy as np

from fovealsearch import tensor as T
from fovealsearch.tensor import Tensor, default_dtype

logger = logging.getLogger(__name__)

GATES = ("input", "forget", "output", "cell")


def glorot_uniform(shape: tuple, fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(default_dtype())


def init_dense(n_in: int, n_out: int, rng: np.random.Generator) -> tuple[Tensor, Tensor]:
    """Glorot-uniform weights and zero bias for an affine layer."""
    w = Tensor(glorot_uniform((n_in, n_out), n_in, n_out, rng), requires_grad=True)
    b = Tensor(np.zeros(n_out, dtype=default_dtype()), requires_grad=True)
    return w, b


def init_conv(kernel: int, c_in: int, filters: int, rng: np.random.Generator) -> Tensor:
    fan_in = kernel * kernel * c_in
    fan_out = kernel * kernel * filters
    return Tensor(
        glorot_uniform((kernel, kernel, c_in, filters), fan_in, fan_out, rng), requires_grad=True
    )


def conv_output_size(size: int, kernel: int, stride: int, pad_total: int) -> int:
    return (size + pad_total - kernel) // stride + 1


def same_padding(kernel: int) -> tuple:
    """Asymmetric zero padding keeping spatial size under stride 1."""
    total = kernel - 1
    before = total // 2
    return (before, total - before), (before, total - before)


class ConvLstmCell:
    """Convolutional LSTM cell.

    Gate pre-activations are cross-correlations: the input path uses the
    configured stride/padding, the recurrent path is stride 1 with same
    padding so the state keeps its shape across time.  Gates use the
    hard-sigmoid recurrent activation; candidate and output use tanh:

        i = hs(W_i * x + U_i * h),  f = hs(W_f * x + U_f * h)
        o = hs(W_o * x + U_o * h),  c~ = tanh(W_c * x + U_c * h)
        c' = f . c + i . c~,        h' = o . tanh(c')
    """

    def __init__(
        self,
        in_channels: int,
        filters: int,
        kernel_size: int,
        stride: int = 1,
        padding: int = 0,
        rng: np.random.Generator | None = None,
        name: str = "convlstm",
    ):
        if rng is None:
            rng = np.random.default_rng(0)
        self.in_channels = in_channels
        self.filters = filters
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.name = name
        self.input_kernels = {g: init_conv(kernel_size, in_channels, filters, rng) for g in GATES}
        self.recurrent_kernels = {g: init_conv(kernel_size, filters, filters, rng) for g in GATES}
        self.biases = {
            g: Tensor(np.zeros(filters, dtype=default_dtype()), requires_grad=True) for g in GATES
        }
        self._same_pad = same_padding(kernel_size)

    def out_spatial(self, height: int, width: int) -> tuple[int, int]:
        k, s, p = self.kernel_size, self.stride, self.padding
        if k > height + 2 * p or k > width + 2 * p:
            raise ValueError("cell kernel larger than padded input")
        return conv_output_size(height, k, s, 2 * p), conv_output_size(width, k, s, 2 * p)

    def initial_state(self, batch: int, in_height: int, in_width: int) -> tuple[Tensor, Tensor]:
        h, w = self.out_spatial(in_height, in_width)
        shape = (batch, h, w, self.filters) if batch else (h, w, self.filters)
        zeros = np.zeros(shape, dtype=default_dtype())
        return Tensor(zeros), Tensor(zeros.copy())

    def _gate_preact(self, gate: str, x: Tensor, h_prev: Tensor) -> Tensor:
        from_x = T.conv2d(
            x, self.input_kernels[gate], self.biases[gate], stride=self.stride, pad=self.padding
        )
        from_h = T.conv2d(h_prev, self.recurrent_kernels[gate], stride=1, pad=self._same_pad)
        return T.add(from_x, from_h)

    def step(self, x: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
        h, c, _ = self.step_with_gates(x, h_prev, c_prev)
        return h, c

    def step_with_gates(self, x: Tensor, h_prev: Tensor, c_prev: Tensor):
        """One step, additionally returning the gate activations for audits."""
        if h_prev.shape != c_prev.shape:
            raise ValueError(f"state shape mismatch: h {h_prev.shape} vs c {c_prev.shape}")
        i = T.hard_sigmoid(self._gate_preact("input", x, h_prev))
        f = T.hard_sigmoid(self._gate_preact("forget", x, h_prev))
        o = T.hard_sigmoid(self._gate_preact("output", x, h_prev))
        c_tilde = T.tanh(self._gate_preact("cell", x, h_prev))
        c = T.add(T.mul(f, c_prev), T.mul(i, c_tilde))
        h = T.mul(o, T.tanh(c))
        return h, c, {"input": i, "forget": f, "output": o, "candidate": c_tilde}

    def params(self) -> dict[str, Tensor]:
        out = {}
        for g in GATES:
            out[f"{self.name}.w_{g}"] = self.input_kernels[g]
            out[f"{self.name}.u_{g}"] = self.recurrent_kernels[g]
            out[f"{self.name}.b_{g}"] = self.biases[g]
        return out


class BatchNorm:
    """Per-channel batch normalization over the last axis.

    Training normalizes with the current batch mean/variance and updates
    the moving statistics ``M <- M*momentum + mu*(1-momentum)`` (same for
    the variance).  Inference normalizes with the stored statistics only.
    """

    def __init__(self, channels: int, eps: float = 1e-3, momentum: float = 0.99, name: str = "bn"):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.name = name
        self.scale = Tensor(np.ones(channels, dtype=default_dtype()), requires_grad=True)
        self.offset = Tensor(np.zeros(channels, dtype=default_dtype()), requires_grad=True)
        self.moving_mean = np.zeros(channels, dtype=np.float64)
        self.moving_var = np.ones(channels, dtype=np.float64)
        self._trained = False

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        if x.shape[-1] != self.channels:
            raise ValueError(f"batchnorm channel mismatch: {x.shape[-1]} vs {self.channels}")
        if mode == "train":
            axes = tuple(range(x.ndim - 1))
            mean = x.mean(axis=axes, keepdims=True)
            centered = T.sub(x, mean)
            var = T.mul(centered, centered).mean(axis=axes, keepdims=True)
            normed = T.div(centered, T.sqrt(T.add(var, self.eps)))
            m = self.momentum
            self.moving_mean = self.moving_mean * m + mean.data.reshape(-1) * (1.0 - m)
            self.moving_var = self.moving_var * m + var.data.reshape(-1) * (1.0 - m)
            self._trained = True
        elif mode == "infer":
            if not self._trained:
                logger.warning("%s: inference before any training update (M=0, V=1)", self.name)
            mean = Tensor(self.moving_mean.astype(x.data.dtype))
            var = Tensor(self.moving_var.astype(x.data.dtype))
            normed = T.div(T.sub(x, mean), T.sqrt(T.add(var, self.eps)))
        else:
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        return T.add(T.mul(normed, self.scale), self.offset)

    def params(self) -> dict[str, Tensor]:
        return {f"{self.name}.scale": self.scale, f"{self.name}.offset": self.offset}

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.moving_mean": self.moving_mean, f"{self.name}.moving_var": self.moving_var}

    def load_buffers(self, values: Mapping[str, np.ndarray]) -> None:
        self.moving_mean = np.asarray(values[f"{self.name}.moving_mean"], dtype=np.float64).copy()
        self.moving_var = np.asarray(values[f"{self.name}.moving_var"], dtype=np.float64).copy()
        self._trained = True


def dropout(x: Tensor, rate: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) during training."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "infer" or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype)
    return T.mul(x, Tensor(keep / (1.0 - rate)))


class Adam:
    """Bias-corrected Adam over a named parameter set."""

    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float = 0.001,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros(p.shape, dtype=p.data.dtype) for k, p in self.params.items()}
        self.v = {k: np.zeros(p.shape, dtype=p.data.dtype) for k, p in self.params.items()}

    def step(self, grads: Mapping[Tensor, Tensor]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            grad = grads.get(p)
            if grad is None:
                continue
            g = grad.data
            if g.shape != p.shape:
                raise ValueError(f"gradient shape mismatch for {name}: {g.shape} vs {p.shape}")
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.assign(p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))

    def state(self) -> dict:
        return {
            "t": self.t,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        for k in self.params:
            self.m[k] = np.asarray(state["m"][k]).copy()
            self.v[k] = np.asarray(state["v"][k]).copy()


class EarlyStopper:
    """Stops when the validation loss has not improved for ``patience`` epochs.

    Keeps a snapshot of the best-scoring state so training can end on the
    best weights rather than the last epoch's.
    """

    def __init__(self, patience: int):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.best_loss = np.inf
        self.best_snapshot = None
        self.epochs_since_improvement = 0

    def update(self, loss: float, snapshot: Callable[[], dict]) -> bool:
        """Record one epoch's validation loss; True means stop now."""
        if loss < self.best_loss:
            self.best_loss = float(loss)
            self.best_snapshot = snapshot()
            self.epochs_since_improvement = 0
            return False
        self.epochs_since_improvement += 1
        return self.epochs_since_improvement == self.patience

    def state(self) -> dict:
        return {
            "best_loss": None if np.isinf(self.best_loss) else self.best_loss,
            "epochs_since_improvement": self.epochs_since_improvement,
        }

    def load_state(self, state: dict, snapshot: dict | None) -> None:
        self.best_loss = np.inf if state["best_loss"] is None else float(state["best_loss"])
        self.epochs_since_improvement = int(state["epochs_since_improvement"])
        self.best_snapshot = snapshot
