"""Representation probes.

Features come from the probe path (every sensor token encoded, no masking,
no dropout) pooled over tokens. kNN classifies by cosine vote among the 20
nearest training features; the linear probe is full-batch softmax
regression. probe_sweep crosses normalization x pooling x learning rate on
a 60/20/20 split and reports the test metric of the best validation cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from oelab.data.tasks import split_indices
from oelab.model import Model
from oelab.tokens.grid import TokenSet

DEFAULT_LR_GRID = (0.03, 0.1, 0.3, 1.0)


def extract_features(
    model: Model, token_sets: list[TokenSet], pooling: str = "mean"
) -> np.ndarray:
    if pooling not in ("mean", "max"):
        raise ValueError(f"pooling must be mean or max, got {pooling!r}")
    feats = []
    for ts in token_sets:
        enc = model.encode_all(ts).data
        feats.append(enc.mean(axis=0) if pooling == "mean" else enc.max(axis=0))
    return np.stack(feats).astype(np.float64)


def normalize_features(
    train: np.ndarray, other: np.ndarray, mode: str
) -> tuple[np.ndarray, np.ndarray]:
    """"pretrain" keeps the encoder's scale; "dataset" standardizes per
    dimension with train-split statistics."""
    if mode == "pretrain":
        return train, other
    if mode == "dataset":
        mu = train.mean(axis=0)
        sd = np.maximum(train.std(axis=0), 1e-8)
        return (train - mu) / sd, (other - mu) / sd
    raise ValueError(f"normalization must be pretrain or dataset, got {mode!r}")


def _l2(x: np.ndarray) -> np.ndarray:
    return x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-12)


def knn_probe(
    train_x: np.ndarray,
    train_y: np.ndarray,
    test_x: np.ndarray,
    test_y: np.ndarray,
    k: int = 20,
) -> float:
    """Cosine kNN accuracy; vote ties go to the nearest neighbor's label."""
    k = min(k, train_x.shape[0])
    sims = _l2(test_x) @ _l2(train_x).T
    correct = 0
    for i in range(test_x.shape[0]):
        order = np.argsort(-sims[i], kind="stable")[:k]
        votes = np.bincount(train_y[order])
        top = np.flatnonzero(votes == votes.max())
        if top.size == 1:
            pred = top[0]
        else:
            # nearest neighbor whose label is among the tied classes
            pred = next(train_y[j] for j in order if train_y[j] in top)
        correct += int(pred == test_y[i])
    return correct / test_x.shape[0]


@dataclass
class LinearProbeResult:
    accuracy: float
    lr: float
    weights: np.ndarray
    bias: np.ndarray


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def train_softmax_regression(
    x: np.ndarray, y: np.ndarray, num_classes: int, lr: float, iters: int = 200,
    weight_decay: float = 1e-4,
) -> tuple[np.ndarray, np.ndarray]:
    n, d = x.shape
    w = np.zeros((d, num_classes))
    b = np.zeros(num_classes)
    onehot = np.eye(num_classes)[y]
    for _ in range(iters):
        p = _softmax_rows(x @ w + b)
        g = (p - onehot) / n
        w -= lr * (x.T @ g + weight_decay * w)
        b -= lr * g.sum(axis=0)
    return w, b


def linear_probe(
    train_x, train_y, val_x, val_y, test_x, test_y,
    num_classes: int,
    lr_grid: tuple[float, ...] = DEFAULT_LR_GRID,
    iters: int = 200,
) -> LinearProbeResult:
    best = None
    for lr in lr_grid:
        w, b = train_softmax_regression(train_x, train_y, num_classes, lr, iters)
        val_acc = float(((val_x @ w + b).argmax(axis=1) == val_y).mean())
        if best is None or val_acc > best[0]:
            best = (val_acc, lr, w, b)
    _, lr, w, b = best
    acc = float(((test_x @ w + b).argmax(axis=1) == test_y).mean())
    return LinearProbeResult(accuracy=acc, lr=lr, weights=w, bias=b)


def probe_sweep(
    model: Model,
    token_sets: list[TokenSet],
    labels: np.ndarray,
    num_classes: int,
    lr_grid: tuple[float, ...] = DEFAULT_LR_GRID,
    split_seed: int = 0,
    iters: int = 200,
) -> dict:
    """Cross normalization x pooling x lr; pick the best cell on val."""
    cells = []
    tr, va, te = split_indices(len(token_sets), seed=split_seed)
    for pooling in ("mean", "max"):
        feats = extract_features(model, token_sets, pooling=pooling)
        for norm in ("pretrain", "dataset"):
            f_tr, f_va = normalize_features(feats[tr], feats[va], norm)
            _, f_te = normalize_features(feats[tr], feats[te], norm)
            for lr in lr_grid:
                w, b = train_softmax_regression(f_tr, labels[tr], num_classes, lr, iters)
                val_acc = float(((f_va @ w + b).argmax(axis=1) == labels[va]).mean())
                test_acc = float(((f_te @ w + b).argmax(axis=1) == labels[te]).mean())
                cells.append(
                    {
                        "pooling": pooling,
                        "normalization": norm,
                        "lr": lr,
                        "val_accuracy": val_acc,
                        "test_accuracy": test_acc,
                    }
                )
    best = max(cells, key=lambda c: c["val_accuracy"])
    return {"best": best, "cells": cells, "test_accuracy": best["test_accuracy"]}
