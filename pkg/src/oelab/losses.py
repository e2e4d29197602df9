"""Contrastive objectives.

Patch discrimination: every predicted token must pick out its own frozen
target among the targets of the same modality across the micro-batch;
cross-modality pairs are inadmissible, so adding or removing another
modality leaves a row's loss bit-identical. Near-duplicate targets (cosine
above a threshold, decode-only tokens only) are excluded from the
denominator: one-hot map patches repeat constantly and would otherwise be
false negatives. A row with no admissible negatives contributes exactly 0.

Instance discrimination: symmetric InfoNCE between the two pooled views of
each scene.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from oelab.autodiff import DiffArray, constant, ops
from oelab.model import TwoViewBatch


@dataclass(frozen=True)
class ContrastiveConfig:
    tau_token: float = 0.2
    tau_instance: float = 0.2
    lambda_instance: float = 0.05
    hard_negative_threshold: float = 0.999
    filter_hard_negatives: bool = True

    def __post_init__(self):
        if self.tau_token <= 0 or self.tau_instance <= 0:
            raise ValueError("temperatures must be positive")
        if not 0.0 <= self.lambda_instance:
            raise ValueError("lambda_instance must be non-negative")


def l2_normalize_np(x: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    norm = np.sqrt(np.square(x).sum(axis=1))
    return x / np.maximum(norm, eps)[:, None]


def duplicate_rate(
    targets: np.ndarray, modality_ids: np.ndarray, threshold: float = 0.999
) -> float:
    """Fraction of tokens whose target nearly equals another same-modality
    target. Diagnostic only."""
    if targets.shape[0] < 2:
        return 0.0
    t = l2_normalize_np(targets.astype(np.float64))
    cos = t @ t.T
    same_mod = modality_ids[:, None] == modality_ids[None, :]
    np.fill_diagonal(same_mod, False)
    dup = (cos >= threshold) & same_mod
    return float(dup.any(axis=1).mean())


def hard_negative_exclusions(
    targets_norm: np.ndarray,
    modality_ids: np.ndarray,
    decode_only: np.ndarray,
    threshold: float,
) -> np.ndarray:
    """[M, M] bool: True where pair (i, j) must leave the denominator."""
    cos = targets_norm @ targets_norm.T
    excl = (
        (cos >= threshold)
        & (modality_ids[:, None] == modality_ids[None, :])
        & decode_only[:, None]
        & decode_only[None, :]
    )
    np.fill_diagonal(excl, False)
    return excl


def patch_discrimination(
    preds: DiffArray,
    targets: np.ndarray,
    modality_ids: np.ndarray,
    decode_only: np.ndarray,
    cfg: ContrastiveConfig,
) -> tuple[DiffArray, dict]:
    """Scores are computed one modality block at a time. Cross-modality
    pairs are inadmissible anyway, and block-local matmuls make the
    invariance literal: removing another modality cannot perturb a row's
    arithmetic even in floating point. The positive is read off the block
    diagonal, so a row with no admissible negatives cancels to exactly 0.
    """
    m = preds.shape[0]
    if m == 0:
        raise ValueError("patch discrimination needs at least one target token")
    if targets.shape != preds.shape:
        raise ValueError(f"targets {targets.shape} vs preds {preds.shape}")
    dt = preds.data.dtype
    t_norm = l2_normalize_np(targets.astype(np.float64)).astype(dt)
    p = ops.l2_normalize_rows(preds)

    blocks = []
    order = []
    per_row_np = np.empty(m, dtype=np.float64)
    excluded_pairs = 0
    excluded_rows = 0
    for mod in np.unique(modality_ids):
        rows = np.flatnonzero(modality_ids == mod)
        tn = t_norm[rows]
        tn64 = tn.astype(np.float64)
        excl = np.zeros((rows.size, rows.size), dtype=bool)
        if cfg.filter_hard_negatives:
            excl = hard_negative_exclusions(
                tn64, modality_ids[rows], decode_only[rows], cfg.hard_negative_threshold
            )
        excluded_pairs += int(excl.sum())
        excluded_rows += int(excl.any(axis=1).sum())
        bias = np.where(excl, -np.inf, 0.0).astype(dt)
        pg = ops.gather_rows(p, rows)
        sg = ops.scale(ops.matmul(pg, constant(tn.T)), 1.0 / cfg.tau_token)
        lse = ops.logsumexp(ops.add(sg, constant(bias)), axis=1)
        pos = ops.reduce_sum(
            ops.mul(sg, constant(np.eye(rows.size, dtype=dt))), axis=1
        )
        pr = ops.add(lse, ops.neg(pos))
        blocks.append(pr)
        order.append(rows)
    per_row = blocks[0] if len(blocks) == 1 else ops.concat(blocks, axis=0)
    loss = ops.reduce_mean(per_row)
    per_row_np[np.concatenate(order)] = per_row.data
    aux = {
        "per_row": per_row_np,
        "n_excluded_pairs": excluded_pairs,
        "excluded_row_fraction": excluded_rows / m,
    }
    return loss, aux


def instance_infonce(
    pooled_a: DiffArray, pooled_b: DiffArray, tau: float
) -> tuple[DiffArray, dict]:
    """Symmetric InfoNCE across the batch; scene i of view A matches scene i
    of view B."""
    if pooled_a.shape != pooled_b.shape:
        raise ValueError(f"view shapes differ: {pooled_a.shape} vs {pooled_b.shape}")
    za = ops.l2_normalize_rows(pooled_a)
    zb = ops.l2_normalize_rows(pooled_b)
    s = ops.scale(ops.matmul(za, ops.transpose(zb, (1, 0))), 1.0 / tau)
    pos = ops.scale(ops.reduce_sum(ops.mul(za, zb), axis=1), 1.0 / tau)
    row = ops.add(ops.logsumexp(s, axis=1), ops.neg(pos))
    col = ops.add(ops.logsumexp(s, axis=0), ops.neg(pos))
    loss = ops.scale(ops.add(ops.reduce_mean(row), ops.reduce_mean(col)), 0.5)
    return loss, {"per_row": row.data.copy(), "per_col": col.data.copy()}


def total_loss(batch: TwoViewBatch, cfg: ContrastiveConfig) -> tuple[DiffArray, dict]:
    la, aux_a = patch_discrimination(
        batch.preds_a, batch.targets_a, batch.modality_a, batch.decode_only_a, cfg
    )
    lb, aux_b = patch_discrimination(
        batch.preds_b, batch.targets_b, batch.modality_b, batch.decode_only_b, cfg
    )
    token = ops.scale(ops.add(la, lb), 0.5)
    inst, aux_i = instance_infonce(batch.pooled_a, batch.pooled_b, cfg.tau_instance)
    total = ops.add(token, ops.scale(inst, cfg.lambda_instance))
    metrics = {
        "loss_token": float(token.data[0]),
        "loss_inst": float(inst.data[0]),
        "loss_total": float(total.data[0]),
        "excluded_pairs_a": aux_a["n_excluded_pairs"],
        "excluded_pairs_b": aux_b["n_excluded_pairs"],
    }
    return total, metrics
