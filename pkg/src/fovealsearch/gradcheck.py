"""Finite-difference verification of analytic gradients.

Runs in 64-bit mode: central differences at eps=1e-4 against the tape's
backward pass, for single operations and for whole model families on tiny
shapes.  The relative error uses a unit floor so near-zero gradients are
compared absolutely.
"""
from __future__ import annotations

import time
from typing import Callable, Iterable

import numpy as np

from fovealsearch import tensor as T
from fovealsearch.tensor import Tape, Tensor

DEFAULT_EPS = 1e-4
OP_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-3


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise |a - n| / max(1, |a|, |n|)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def finite_difference(f: Callable[[], float], param: Tensor, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Central-difference gradient of scalar f() with respect to param."""
    base = param.data.copy()
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)
    for i in range(base.size):
        bumped = base.reshape(-1).copy()
        bumped[i] = base.reshape(-1)[i] + eps
        param.assign(bumped.reshape(base.shape))
        hi = f()
        bumped[i] = base.reshape(-1)[i] - eps
        param.assign(bumped.reshape(base.shape))
        lo = f()
        flat[i] = (hi - lo) / (2.0 * eps)
    param.assign(base)
    return grad


def check_scalar_function(
    f: Callable[[], Tensor], params: dict[str, Tensor], eps: float = DEFAULT_EPS
) -> dict[str, float]:
    """Compare tape gradients of f() against finite differences, per group."""
    with Tape() as tape:
        for p in params.values():
            tape.watch(p)
        loss = f()
    grads = tape.gradients(loss, params.values())
    errors = {}
    for name, p in params.items():
        numeric = finite_difference(lambda: f().item(), p, eps)
        errors[name] = relative_error(grads[p].data, numeric)
    return errors


def _away_from_kinks(arr: np.ndarray, kinks: Iterable[float], margin: float = 1e-2) -> np.ndarray:
    """Nudge values that sit within ``margin`` of a non-differentiable point."""
    out = arr.copy()
    for k in kinks:
        near = np.abs(out - k) < margin
        out[near] = k + margin * np.where(out[near] >= k, 1.0, -1.0) * 2.0
    return out


def check_elementwise_ops(seed: int = 0) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    errors: dict[str, float] = {}

    def run(name, build, *params):
        errors[name] = max(
            check_scalar_function(build, {f"arg{i}": p for i, p in enumerate(params)}).values()
        )

    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True, dtype=np.float64)
    b = Tensor(rng.normal(size=(3, 4)), requires_grad=True, dtype=np.float64)
    w = rng.normal(size=(3, 4))
    for kind in ("add", "sub", "mul"):
        run(kind, lambda k=kind: (T.elementwise(k, a, b) * w).sum(), a, b)
    run("div", lambda: (T.div(a, b + 3.0) * w).sum(), a, b)
    for kind in ("tanh", "sigmoid", "exp"):
        run(kind, lambda k=kind: (T.elementwise(k, a) * w).sum(), a)
    hs_in = Tensor(
        _away_from_kinks(rng.normal(scale=2.0, size=(3, 4)), (-2.5, 2.5)),
        requires_grad=True,
        dtype=np.float64,
    )
    run("hard-sigmoid", lambda: (T.hard_sigmoid(hs_in) * w).sum(), hs_in)
    relu_in = Tensor(
        _away_from_kinks(rng.normal(size=(3, 4)), (0.0,)), requires_grad=True, dtype=np.float64
    )
    run("relu", lambda: (T.relu(relu_in) * w).sum(), relu_in)
    clip_in = Tensor(
        _away_from_kinks(rng.normal(size=(3, 4)), (-1.0, 1.0)), requires_grad=True, dtype=np.float64
    )
    run("clip", lambda: (T.clip(clip_in, -1.0, 1.0) * w).sum(), clip_in)
    pos = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True, dtype=np.float64)
    run("log", lambda: (T.log(pos) * w).sum(), pos)
    run("sqrt", lambda: (T.sqrt(pos) * w).sum(), pos)
    return errors


def check_structural_ops(seed: int = 0) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    errors: dict[str, float] = {}

    x = Tensor(rng.normal(size=(8,)), requires_grad=True, dtype=np.float64)
    wd = Tensor(rng.normal(size=(8, 4)), requires_grad=True, dtype=np.float64)
    bd = Tensor(rng.normal(size=(4,)), requires_grad=True, dtype=np.float64)
    wvec = rng.normal(size=(4,))
    errors["dense"] = max(
        check_scalar_function(
            lambda: (T.dense(x, wd, bd) * wvec).sum(), {"x": x, "w": wd, "b": bd}
        ).values()
    )

    xi = Tensor(rng.normal(size=(5, 6, 3)), requires_grad=True, dtype=np.float64)
    k = Tensor(rng.normal(size=(3, 3, 3, 2)), requires_grad=True, dtype=np.float64)
    bc = Tensor(rng.normal(size=(2,)), requires_grad=True, dtype=np.float64)
    wconv = rng.normal(size=(3, 4, 2))
    errors["conv2d"] = max(
        check_scalar_function(
            lambda: (T.crop2d(T.conv2d(xi, k, bc, stride=1, pad=1), 3, 4) * wconv).sum(),
            {"x": xi, "k": k, "b": bc},
        ).values()
    )

    s = Tensor(rng.normal(size=(10,)), requires_grad=True, dtype=np.float64)
    wsm = rng.normal(size=(10,))
    errors["softmax"] = max(
        check_scalar_function(lambda: (T.softmax(s) * wsm).sum(), {"x": s}).values()
    )

    st = Tensor(rng.normal(size=(2, 3)), requires_grad=True, dtype=np.float64)
    wst = rng.normal(size=(2, 2, 3))
    errors["stack/index/reshape"] = max(
        check_scalar_function(
            lambda: (
                T.stack([T.index_axis0(T.stack([st, st * 2.0]), 1), st]).reshape(2, 2, 3) * wst
            ).sum(),
            {"x": st},
        ).values()
    )

    c1 = Tensor(rng.normal(size=(2, 2)), requires_grad=True, dtype=np.float64)
    c2 = Tensor(rng.normal(size=(2, 3)), requires_grad=True, dtype=np.float64)
    wcc = rng.normal(size=(2, 5))
    errors["concat"] = max(
        check_scalar_function(
            lambda: (T.concat([c1, c2], axis=1) * wcc).sum(), {"a": c1, "b": c2}
        ).values()
    )

    cr = Tensor(rng.normal(size=(4, 4, 2)), requires_grad=True, dtype=np.float64)
    wcr = rng.normal(size=(3, 3, 2))
    errors["crop2d"] = max(
        check_scalar_function(lambda: (T.crop2d(cr, 3, 3) * wcr).sum(), {"x": cr}).values()
    )
    return errors


def check_model(build_loss: Callable[[], tuple], eps: float = DEFAULT_EPS) -> dict[str, float]:
    """Gradient-check a model against a scalar training loss.

    ``build_loss`` returns (loss_fn, params) where loss_fn() recomputes the
    loss Tensor from current parameter values.
    """
    loss_fn, params = build_loss()
    return check_scalar_function(loss_fn, params, eps)


def run_all(seed: int = 0, include_models: bool = True) -> list[tuple[str, float, float]]:
    """Run every check; rows are (group, max_rel_err, tolerance)."""
    from fovealsearch import modelcheck

    rows: list[tuple[str, float, float]] = []
    with T.using_dtype("float64"):
        for name, err in check_elementwise_ops(seed).items():
            rows.append((f"op/{name}", err, OP_TOLERANCE))
        for name, err in check_structural_ops(seed).items():
            rows.append((f"op/{name}", err, OP_TOLERANCE))
        if include_models:
            for name, err in modelcheck.check_all_families(seed).items():
                rows.append((f"model/{name}", err, MODEL_TOLERANCE))
    return rows


def format_table(rows: list[tuple[str, float, float]]) -> str:
    width = max(len(r[0]) for r in rows) + 2
    lines = [f"{'group':<{width}}{'max rel err':>14}  {'tol':>8}  status"]
    for name, err, tol in rows:
        status = "ok" if err < tol else "FAIL"
        lines.append(f"{name:<{width}}{err:>14.3e}  {tol:>8.0e}  {status}")
    return "\n".join(lines)
