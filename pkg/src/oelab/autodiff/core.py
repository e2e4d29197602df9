"""Define-by-run reverse-mode engine over dense numpy buffers.

A Tape records operations in execution order, which is already a topological
order, so the backward pass is a single reversed replay. Arrays are float32
for training and float64 for gradient checks; an operation never mixes the
two.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Iterator

import numpy as np

_ALLOWED_DTYPES = (np.float32, np.float64)

_node_ids = itertools.count()

_TAPE_STACK: list["Tape"] = []

_MAC_COUNTERS: list["MacCounter"] = []


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DiffArray:
    """Dense array participating in reverse-mode differentiation.

    Buffers are C-contiguous and at least rank 1: a scalar result is stored
    with shape (1,). Ops that reduce to a true scalar therefore reshape the
    incoming gradient before undoing the reduction.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id")

    def __init__(self, data: np.ndarray, requires_grad: bool = False):
        data = np.ascontiguousarray(data)
        if data.dtype.type not in _ALLOWED_DTYPES:
            raise TypeError(f"dtype must be float32 or float64, got {data.dtype}")
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def accumulate_grad(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return (
            f"DiffArray(shape={self.shape}, dtype={self.data.dtype.name}, "
            f"requires_grad={self.requires_grad}, node_id={self.node_id})"
        )


def parameter(data: np.ndarray, dtype=None) -> DiffArray:
    """Leaf array that collects gradients."""
    arr = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
    if arr.dtype.type not in _ALLOWED_DTYPES:
        arr = arr.astype(np.float32)
    return DiffArray(arr, requires_grad=True)


def constant(data: np.ndarray, dtype=None) -> DiffArray:
    """Leaf array outside differentiation."""
    arr = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
    if arr.dtype.type not in _ALLOWED_DTYPES:
        arr = arr.astype(np.float32)
    return DiffArray(arr, requires_grad=False)


class Tape:
    """Ordered record of one forward pass."""

    __slots__ = ("_entries",)

    def __init__(self):
        self._entries: list[tuple[DiffArray, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, out: DiffArray, backward_fn: Callable[[np.ndarray], None]) -> None:
        self._entries.append((out, backward_fn))

    def backward(self, loss: DiffArray) -> None:
        """Populate .grad on every array reachable from loss."""
        if loss.size != 1:
            raise ShapeError(f"backward root must be scalar, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, backward_fn in reversed(self._entries):
            if out.grad is not None:
                backward_fn(out.grad)


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class MacCounter:
    """Tally of multiply-accumulates in matmul-family contractions."""

    __slots__ = ("total",)

    def __init__(self):
        self.total = 0

    def add(self, n: int) -> None:
        self.total += n


@contextmanager
def mac_counting() -> Iterator[MacCounter]:
    """Count MACs of every contraction executed in the block.

    Only affine/matmul contractions count; norms, nonlinearities and
    softmax are free under this convention.
    """
    counter = MacCounter()
    _MAC_COUNTERS.append(counter)
    try:
        yield counter
    finally:
        _MAC_COUNTERS.pop()


def count_macs_event(n: int) -> None:
    for counter in _MAC_COUNTERS:
        counter.add(n)
