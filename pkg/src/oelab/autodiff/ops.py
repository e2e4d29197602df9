"""Differentiable operations.

Each op validates shapes, runs the forward computation (rowwise and
elementwise pieces go through the kernel backend), and, when a tape is
active and some input requires gradients, records a backward closure.
Backward closures work on raw numpy buffers and accumulate into parents in
recording order, so replay is deterministic.
"""

from __future__ import annotations

import math

import numpy as np

from oelab.backend import kernels
from oelab.autodiff.core import (
    DiffArray,
    ShapeError,
    active_tape,
    constant,
    count_macs_event,
)

OP_REGISTRY: dict[str, object] = {}


def op(name: str):
    def deco(fn):
        OP_REGISTRY[name] = fn
        return fn

    return deco


def _as_diff(x, like: DiffArray) -> DiffArray:
    if isinstance(x, DiffArray):
        return x
    return constant(np.asarray(x, dtype=like.dtype))


def _same_dtype(*arrays: DiffArray) -> None:
    dtypes = {a.dtype for a in arrays}
    if len(dtypes) > 1:
        raise TypeError(f"mixed dtypes in op: {sorted(d.name for d in dtypes)}")


def _finalize(out_data: np.ndarray, parents: tuple[DiffArray, ...], make_backward):
    """Wrap out_data; record backward if needed.

    make_backward is called lazily (only when recording) and must return a
    closure taking the output gradient.
    """
    tape = active_tape()
    needs = tape is not None and any(p.requires_grad for p in parents)
    out = DiffArray(out_data, requires_grad=needs)
    if needs:
        tape.record(out, make_backward())
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / arithmetic


@op("add")
def add(a: DiffArray, b) -> DiffArray:
    b = _as_diff(b, a)
    _same_dtype(a, b)
    try:
        out = a.data + b.data
    except ValueError as e:
        raise ShapeError(f"add: cannot broadcast {a.shape} + {b.shape}") from e

    def make_backward():
        def backward(g):
            a.accumulate_grad(_unbroadcast(g, a.shape))
            b.accumulate_grad(_unbroadcast(g, b.shape))

        return backward

    return _finalize(out, (a, b), make_backward)


@op("mul")
def mul(a: DiffArray, b) -> DiffArray:
    b = _as_diff(b, a)
    _same_dtype(a, b)
    try:
        out = a.data * b.data
    except ValueError as e:
        raise ShapeError(f"mul: cannot broadcast {a.shape} * {b.shape}") from e

    def make_backward():
        def backward(g):
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

        return backward

    return _finalize(out, (a, b), make_backward)


@op("neg")
def neg(a: DiffArray) -> DiffArray:
    def make_backward():
        def backward(g):
            a.accumulate_grad(-g)

        return backward

    return _finalize(-a.data, (a,), make_backward)


@op("scale")
def scale(a: DiffArray, s: float) -> DiffArray:
    s = float(s)

    def make_backward():
        def backward(g):
            a.accumulate_grad(g * np.asarray(s, dtype=a.dtype))

        return backward

    return _finalize(a.data * np.asarray(s, dtype=a.dtype), (a,), make_backward)


def sub(a: DiffArray, b: DiffArray) -> DiffArray:
    return add(a, neg(b))


# ---------------------------------------------------------------------------
# contractions


@op("matmul")
def matmul(a: DiffArray, b) -> DiffArray:
    b = _as_diff(b, a)
    _same_dtype(a, b)
    if a.data.ndim != b.data.ndim or a.data.ndim not in (2, 3):
        raise ShapeError(f"matmul: ndim must match and be 2 or 3, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2] or (a.data.ndim == 3 and a.shape[0] != b.shape[0]):
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)
    batch = a.shape[0] if a.data.ndim == 3 else 1
    count_macs_event(batch * a.shape[-2] * a.shape[-1] * b.shape[-1])

    def make_backward():
        def backward(g):
            a.accumulate_grad(np.matmul(g, np.swapaxes(b.data, -1, -2)))
            b.accumulate_grad(np.matmul(np.swapaxes(a.data, -1, -2), g))

        return backward

    return _finalize(out, (a, b), make_backward)


@op("affine")
def affine(x: DiffArray, w: DiffArray, b: DiffArray) -> DiffArray:
    """y = x @ w + b with x [N, K], w [K, M], b [M]."""
    _same_dtype(x, w, b)
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeError(
            f"affine: expected x [N,K], w [K,M], b [M]; got {x.shape}, {w.shape}, {b.shape}"
        )
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ShapeError(
            f"affine: inner extents disagree: x {x.shape}, w {w.shape}, b {b.shape}"
        )
    out = x.data @ w.data + b.data
    count_macs_event(x.shape[0] * x.shape[1] * w.shape[1])

    def make_backward():
        def backward(g):
            x.accumulate_grad(g @ w.data.T)
            w.accumulate_grad(x.data.T @ g)
            b.accumulate_grad(g.sum(axis=0))

        return backward

    return _finalize(out, (x, w, b), make_backward)


# ---------------------------------------------------------------------------
# nonlinearities and normalization


def _flat(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.reshape(-1))


@op("relu")
def relu(a: DiffArray) -> DiffArray:
    out = kernels.relu_forward(_flat(a.data)).reshape(a.shape)

    def make_backward():
        def backward(g):
            a.accumulate_grad(kernels.relu_backward(_flat(g), _flat(a.data)).reshape(a.shape))

        return backward

    return _finalize(out, (a,), make_backward)


@op("gelu")
def gelu(a: DiffArray) -> DiffArray:
    out = kernels.gelu_forward(_flat(a.data)).reshape(a.shape)

    def make_backward():
        def backward(g):
            a.accumulate_grad(kernels.gelu_backward(_flat(g), _flat(a.data)).reshape(a.shape))

        return backward

    return _finalize(out, (a,), make_backward)


@op("layer_norm")
def layer_norm(x: DiffArray, gamma: DiffArray, beta: DiffArray, eps: float = 1e-5) -> DiffArray:
    _same_dtype(x, gamma, beta)
    d = x.shape[-1]
    if d < 1 or gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: gamma/beta must be [{d}]; got {gamma.shape}, {beta.shape}"
        )
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    x2d = np.ascontiguousarray(x.data.reshape(-1, d))
    y2d, mean, rstd = kernels.layer_norm_forward(x2d, gamma.data, beta.data, float(eps))

    def make_backward():
        def backward(g):
            g2d = np.ascontiguousarray(g.reshape(-1, d))
            gx, dgamma, dbeta = kernels.layer_norm_backward(g2d, x2d, gamma.data, mean, rstd)
            x.accumulate_grad(gx.reshape(x.shape))
            gamma.accumulate_grad(dgamma)
            beta.accumulate_grad(dbeta)

        return backward

    return _finalize(y2d.reshape(x.shape), (x, gamma, beta), make_backward)


def _rows_for_axis(data: np.ndarray, axis: int) -> np.ndarray:
    """View of data with `axis` moved last, flattened to 2D, contiguous."""
    moved = np.moveaxis(data, axis, -1)
    return np.ascontiguousarray(moved.reshape(-1, moved.shape[-1])), moved.shape


@op("softmax")
def softmax(x: DiffArray, axis: int = -1) -> DiffArray:
    axis = axis if axis >= 0 else x.data.ndim + axis
    if not 0 <= axis < x.data.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {x.shape}")
    x2d, moved_shape = _rows_for_axis(x.data, axis)
    y2d = kernels.softmax_forward(x2d)
    out = np.moveaxis(y2d.reshape(moved_shape), -1, axis)

    def make_backward():
        def backward(g):
            g2d, _ = _rows_for_axis(g, axis)
            gx2d = kernels.softmax_backward(g2d, y2d)
            x.accumulate_grad(np.moveaxis(gx2d.reshape(moved_shape), -1, axis))

        return backward

    return _finalize(out, (x,), make_backward)


@op("logsumexp")
def logsumexp(x: DiffArray, axis: int = -1) -> DiffArray:
    """Reduce `axis` by log-sum-exp; -inf entries drop out exactly."""
    axis = axis if axis >= 0 else x.data.ndim + axis
    if not 0 <= axis < x.data.ndim:
        raise ShapeError(f"logsumexp: axis {axis} invalid for shape {x.shape}")
    x2d, moved_shape = _rows_for_axis(x.data, axis)
    lse = kernels.logsumexp_forward(x2d)
    out = lse.reshape(moved_shape[:-1])

    def make_backward():
        def backward(g):
            g1d = np.ascontiguousarray(g.reshape(-1))
            gx2d = kernels.logsumexp_backward(g1d, x2d, lse)
            x.accumulate_grad(np.moveaxis(gx2d.reshape(moved_shape), -1, axis))

        return backward

    return _finalize(out, (x,), make_backward)


# ---------------------------------------------------------------------------
# reductions


def _norm_reduce_axis(x: DiffArray, axis: int | None) -> int | None:
    if axis is None:
        return None
    axis = axis if axis >= 0 else x.data.ndim + axis
    if not 0 <= axis < x.data.ndim:
        raise ShapeError(f"axis {axis} invalid for shape {x.shape}")
    return axis


def _spread_reduce_grad(g: np.ndarray, x: DiffArray, axis: int | None, scale: float):
    """Undo a sum/mean reduction. g may arrive as (1,) for scalar outputs."""
    if axis is None:
        return np.broadcast_to(g.reshape(()) * scale, x.shape).astype(x.dtype, copy=False)
    reduced = x.shape[:axis] + x.shape[axis + 1 :]
    g = np.expand_dims(g.reshape(reduced) * scale, axis)
    return np.broadcast_to(g, x.shape).astype(x.dtype, copy=False)


@op("reduce_sum")
def reduce_sum(x: DiffArray, axis: int | None = None) -> DiffArray:
    axis = _norm_reduce_axis(x, axis)
    out = x.data.sum(axis=axis)

    def make_backward():
        def backward(g):
            x.accumulate_grad(_spread_reduce_grad(g, x, axis, 1.0))

        return backward

    return _finalize(np.asarray(out, dtype=x.dtype), (x,), make_backward)


@op("reduce_mean")
def reduce_mean(x: DiffArray, axis: int | None = None) -> DiffArray:
    axis = _norm_reduce_axis(x, axis)
    inv = 1.0 / (x.size if axis is None else x.shape[axis])
    out = x.data.mean(axis=axis)

    def make_backward():
        def backward(g):
            x.accumulate_grad(_spread_reduce_grad(g, x, axis, inv))

        return backward

    return _finalize(np.asarray(out, dtype=x.dtype), (x,), make_backward)


# ---------------------------------------------------------------------------
# layout


@op("reshape")
def reshape(x: DiffArray, shape) -> DiffArray:
    shape = tuple(shape)

    def make_backward():
        def backward(g):
            x.accumulate_grad(g.reshape(x.shape))

        return backward

    return _finalize(x.data.reshape(shape), (x,), make_backward)


@op("transpose")
def transpose(x: DiffArray, axes) -> DiffArray:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def make_backward():
        def backward(g):
            x.accumulate_grad(np.ascontiguousarray(g.transpose(inv)))

        return backward

    return _finalize(x.data.transpose(axes), (x,), make_backward)


@op("concat")
def concat(xs: list[DiffArray], axis: int = 0) -> DiffArray:
    if not xs:
        raise ShapeError("concat: empty input list")
    _same_dtype(*xs)
    out = np.concatenate([x.data for x in xs], axis=axis)
    sizes = [x.shape[axis] for x in xs]

    def make_backward():
        def backward(g):
            offset = 0
            for x, n in zip(xs, sizes):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(offset, offset + n)
                x.accumulate_grad(np.ascontiguousarray(g[tuple(idx)]))
                offset += n

        return backward

    return _finalize(out, tuple(xs), make_backward)


@op("gather_rows")
def gather_rows(x: DiffArray, idx) -> DiffArray:
    """out[i] = x[idx[i]]; repeated indices sum their gradients."""
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows: idx must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for leading extent {x.shape[0]}")
    out = x.data[idx]

    def make_backward():
        def backward(g):
            gx = np.zeros_like(x.data)
            np.add.at(gx, idx, g)
            x.accumulate_grad(gx)

        return backward

    return _finalize(out, (x,), make_backward)


@op("segment_mean")
def segment_mean(x: DiffArray, seg_ids, num_segments: int) -> DiffArray:
    """Mean of x rows per segment id; empty segments give zero rows."""
    seg_ids = np.asarray(seg_ids, dtype=np.intp)
    if x.data.ndim != 2 or seg_ids.shape != (x.shape[0],):
        raise ShapeError(
            f"segment_mean: x must be [N,D] with seg_ids [N]; got {x.shape}, {seg_ids.shape}"
        )
    counts = np.bincount(seg_ids, minlength=num_segments).astype(x.dtype)
    sums = np.zeros((num_segments, x.shape[1]), dtype=x.dtype)
    np.add.at(sums, seg_ids, x.data)
    denom = np.maximum(counts, 1.0)
    out = sums / denom[:, None]

    def make_backward():
        def backward(g):
            x.accumulate_grad(g[seg_ids] / denom[seg_ids, None])

        return backward

    return _finalize(out, (x,), make_backward)


# ---------------------------------------------------------------------------
# geometry helpers


@op("l2_normalize_rows")
def l2_normalize_rows(x: DiffArray, eps: float = 1e-8) -> DiffArray:
    """Rows scaled to unit norm; rows with norm <= eps divide by eps instead,
    so a zero row stays zero (cosine 0 to everything)."""
    if x.data.ndim != 2:
        raise ShapeError(f"l2_normalize_rows: expected [N,D], got {x.shape}")
    norm = np.sqrt(np.square(x.data).sum(axis=1))
    denom = np.maximum(norm, np.asarray(eps, dtype=x.dtype))
    y = x.data / denom[:, None]

    def make_backward():
        def backward(g):
            proj = (g * y).sum(axis=1)
            gx = (g - y * proj[:, None]) / denom[:, None]
            # Rows clamped at eps are a plain division by a constant.
            clamped = norm <= eps
            if clamped.any():
                gx[clamped] = g[clamped] / denom[clamped, None]
            x.accumulate_grad(gx)

        return backward

    return _finalize(y, (x,), make_backward)


@op("scaled_dot_attention")
def scaled_dot_attention(q: DiffArray, k: DiffArray, v: DiffArray, attn_bias=None) -> DiffArray:
    """softmax(q kᵀ / sqrt(D) + bias) v for 2-D [N, D] operands."""
    _same_dtype(q, k, v)
    if q.data.ndim != 2 or q.shape != k.shape or q.shape != v.shape:
        raise ShapeError(
            f"scaled_dot_attention: q, k, v must share [N,D]; got {q.shape}, {k.shape}, {v.shape}"
        )
    d = q.shape[1]
    scores = scale(matmul(q, transpose(k, (1, 0))), 1.0 / math.sqrt(d))
    if attn_bias is not None:
        scores = add(scores, attn_bias)
    attn = softmax(scores, axis=1)
    return matmul(attn, v)
