"""Supervised finetuning of a pretrained encoder with a linear head.

The head sees mean-pooled probe-path features. Backbone learning rates come
from a plan: uniform, frozenstart (backbone frozen early, then trained at a
reduced rate), or llrd (static layer-wise decay). Because the optimizer
allocates moment state lazily and skips zero-multiplier parameters, staged
unfreezing is observable through ``AdamW.state_names()``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from oelab.autodiff import DiffArray, Tape, constant, ops, parameter
from oelab.model import Model
from oelab.seeding import rng_for
from oelab.tokens.grid import TokenSet
from oelab.training.groups import (
    FinetunePlan,
    frozenstart_plan,
    llrd_plan,
    uniform_plan,
)
from oelab.training.optim import AdamW, OptimConfig
from oelab.training.schedule import ScheduleConfig, lr_at

PLAN_NAMES = ("uniform", "frozenstart", "llrd")


@dataclass(frozen=True)
class FinetuneConfig:
    plan: str = "frozenstart"
    steps: int = 200
    batch: int = 8
    peak_lr: float = 1e-3
    warmup_steps: int = 20
    final_frac: float = 0.0
    llrd_decay: float = 0.65
    frozen_frac: float = 0.2
    thaw_scale: float = 0.1
    seed: int = 0
    log_every: int = 10

    def validate(self) -> list[str]:
        problems = []
        if self.plan not in PLAN_NAMES:
            problems.append(f"plan must be one of {PLAN_NAMES}, got {self.plan!r}")
        if self.steps < 1:
            problems.append(f"steps must be >= 1, got {self.steps}")
        if self.batch < 1:
            problems.append(f"batch must be >= 1, got {self.batch}")
        if not 0 <= self.warmup_steps < self.steps:
            problems.append(
                f"warmup_steps must be in [0, steps), got {self.warmup_steps}"
            )
        if self.peak_lr <= 0:
            problems.append(f"peak_lr must be positive, got {self.peak_lr}")
        return problems


@dataclass
class FinetuneResult:
    model: Model
    head: dict[str, DiffArray]
    history: list[dict]
    train_accuracy: float
    plan: FinetunePlan


def make_head(
    dim: int, num_classes: int, seed: int, dtype=np.float32
) -> dict[str, DiffArray]:
    rng = rng_for(seed, "head")
    w = (0.02 * rng.standard_normal((dim, num_classes))).astype(dtype)
    return {
        "head.w": parameter(w),
        "head.b": parameter(np.zeros(num_classes, dtype=dtype)),
    }


def cross_entropy(logits: DiffArray, labels: np.ndarray) -> DiffArray:
    """Mean softmax cross-entropy: logsumexp minus the true-class logit."""
    k = logits.data.shape[1]
    onehot = constant(np.eye(k, dtype=logits.data.dtype)[labels])
    lse = ops.logsumexp(logits, axis=1)
    pos = ops.reduce_sum(ops.mul(logits, onehot), axis=1)
    return ops.reduce_mean(ops.sub(lse, pos))


def build_plan(cfg: FinetuneConfig, names: list[str], enc_blocks: int) -> FinetunePlan:
    if cfg.plan == "uniform":
        return uniform_plan(names, cfg.steps)
    if cfg.plan == "frozenstart":
        return frozenstart_plan(names, cfg.steps, cfg.frozen_frac, cfg.thaw_scale)
    if cfg.plan == "llrd":
        return llrd_plan(names, cfg.steps, enc_blocks, cfg.llrd_decay)
    raise ValueError(f"unknown plan {cfg.plan!r}")


def batch_logits(
    model: Model,
    token_sets: list[TokenSet],
    head: dict[str, DiffArray],
) -> DiffArray:
    pooled = []
    for ts in token_sets:
        enc = model.encode_all(ts)
        pooled.append(
            ops.reshape(ops.reduce_mean(enc, axis=0), (1, enc.data.shape[1]))
        )
    feats = pooled[0] if len(pooled) == 1 else ops.concat(pooled, axis=0)
    return ops.affine(feats, head["head.w"], head["head.b"])


def evaluate_accuracy(
    model: Model,
    token_sets: list[TokenSet],
    labels: np.ndarray,
    head: dict[str, DiffArray],
) -> float:
    logits = batch_logits(model, token_sets, head)
    return float((logits.data.argmax(axis=1) == labels).mean())


def finetune(
    model: Model,
    token_sets: list[TokenSet],
    labels: np.ndarray,
    num_classes: int,
    cfg: FinetuneConfig = FinetuneConfig(),
    out_dir: str | Path | None = None,
    step_callback=None,
) -> FinetuneResult:
    """Train head + backbone under the configured plan.

    ``step_callback(step, optimizer, multipliers)`` fires after every
    update, mainly so tests can watch optimizer state grow at the thaw.
    """
    problems = cfg.validate()
    if problems:
        raise ValueError("invalid finetune config: " + "; ".join(problems))
    if len(token_sets) != len(labels):
        raise ValueError(
            f"{len(token_sets)} token sets but {len(labels)} labels"
        )

    head = make_head(model.cfg.dim, num_classes, cfg.seed, model.cfg.np_dtype)
    params: dict[str, DiffArray] = dict(model.parameters())
    params.update(head)
    opt = AdamW(params, OptimConfig())
    plan = build_plan(cfg, list(params), model.cfg.enc_blocks)
    schedule = ScheduleConfig(
        peak_lr=cfg.peak_lr,
        warmup_steps=cfg.warmup_steps,
        total_steps=cfg.steps,
        final_frac=cfg.final_frac,
    )

    history: list[dict] = []
    n = len(token_sets)
    for step in range(cfg.steps):
        rng = rng_for(cfg.seed, "finetune", step)
        picked = rng.choice(n, size=min(cfg.batch, n), replace=False)
        batch_sets = [token_sets[i] for i in picked]
        batch_y = labels[picked]
        opt.zero_grad()
        with Tape() as tape:
            logits = batch_logits(model, batch_sets, head)
            loss = cross_entropy(logits, batch_y)
            tape.backward(loss)
        multipliers = plan.multipliers(step)
        opt.step(lr_at(step, schedule), multipliers)
        acc = float((logits.data.argmax(axis=1) == batch_y).mean())
        history.append(
            {
                "step": step,
                "loss": float(loss.data[0]),
                "batch_accuracy": acc,
                "lr": lr_at(step, schedule),
                "trained_params": len(opt.state_names()),
            }
        )
        if step_callback is not None:
            step_callback(step, opt, multipliers)

    train_accuracy = evaluate_accuracy(model, token_sets, labels, head)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "finetune.jsonl", "w") as f:
            for rec in history:
                if rec["step"] % cfg.log_every == 0 or rec["step"] == cfg.steps - 1:
                    f.write(json.dumps(rec) + "\n")
    return FinetuneResult(
        model=model,
        head=head,
        history=history,
        train_accuracy=train_accuracy,
        plan=plan,
    )
