"""Pretraining loop.

Each step samples a micro-batch of pre-patchified scenes, runs the two-view
forward, backpropagates the combined contrastive loss, and applies one
AdamW update under the warmup+cosine schedule. Metrics stream to JSONL; a
non-finite loss aborts with the last good checkpoint preserved and a
diagnostics file written next to it.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from oelab.autodiff import Tape
from oelab.data.scenes import SceneConfig, make_dataset
from oelab.io.checkpoint import load_checkpoint, save_checkpoint
from oelab.losses import ContrastiveConfig, total_loss
from oelab.model import Model, ModelConfig, forward_two_views
from oelab.seeding import rng_for
from oelab.tokens.grid import patchify_scene
from oelab.training.optim import AdamW, OptimConfig
from oelab.training.schedule import ScheduleConfig, lr_at


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, value: float, checkpoint: str | None, diagnostics: str):
        self.step = step
        self.value = value
        self.checkpoint = checkpoint
        self.diagnostics = diagnostics
        super().__init__(
            f"non-finite loss ({value}) at step {step}; "
            f"last good checkpoint: {checkpoint or 'none'}; diagnostics: {diagnostics}"
        )


@dataclass
class PretrainConfig:
    preset: str = "nano"
    steps: int = 600
    micro_batch: int = 8
    peak_lr: float = 0.0015
    warmup_steps: int = 50
    final_frac: float = 0.0
    strategy: str = "v11"
    ratio: float = 0.5
    p_t: float = 0.5
    r_max: float = 0.2
    tau_token: float = 0.2
    tau_instance: float = 0.2
    lambda_instance: float = 0.05
    filter_hard_negatives: bool = True
    target_mode: str = "nonlinear"
    pool_scenes: int = 64
    patch: int = 8
    grouping: str = "single"
    height: int = 32
    width: int = 32
    timesteps: int = 4
    seed: int = 0
    log_every: int = 10
    safety_every: int = 100  # cadence of rolling last-good checkpoints

    def validate(self) -> list[str]:
        problems = []
        if self.preset not in ("nano", "tiny", "base"):
            problems.append(f"preset: must be nano, tiny, or base, got {self.preset!r}")
        if self.steps < 1:
            problems.append(f"steps: must be >= 1, got {self.steps}")
        if self.micro_batch < 1:
            problems.append(f"micro_batch: must be >= 1, got {self.micro_batch}")
        if self.peak_lr <= 0:
            problems.append(f"peak_lr: must be > 0, got {self.peak_lr}")
        if not 0 <= self.warmup_steps < self.steps:
            problems.append(
                f"warmup_steps: must be in [0, steps), got {self.warmup_steps}"
            )
        if self.strategy not in ("v11", "v1", "random", "time"):
            problems.append(f"strategy: unknown {self.strategy!r}")
        if not 0.0 < self.ratio < 1.0:
            problems.append(f"ratio: must be in (0, 1), got {self.ratio}")
        if not 0.0 <= self.p_t <= 1.0:
            problems.append(f"p_t: must be in [0, 1], got {self.p_t}")
        if not 0.0 <= self.r_max < 1.0:
            problems.append(f"r_max: must be in [0, 1), got {self.r_max}")
        if self.tau_token <= 0 or self.tau_instance <= 0:
            problems.append("tau_token/tau_instance: must be > 0")
        if self.lambda_instance < 0:
            problems.append(f"lambda_instance: must be >= 0, got {self.lambda_instance}")
        if self.target_mode not in ("nonlinear", "linear"):
            problems.append(f"target_mode: unknown {self.target_mode!r}")
        if self.grouping not in ("single", "v1"):
            problems.append(f"grouping: must be single or v1, got {self.grouping!r}")
        if self.pool_scenes < self.micro_batch:
            problems.append("pool_scenes: must be >= micro_batch")
        for name in ("height", "width"):
            if getattr(self, name) % self.patch:
                problems.append(f"{name}: must be a multiple of patch={self.patch}")
        if self.timesteps < 1:
            problems.append(f"timesteps: must be >= 1, got {self.timesteps}")
        return problems

    def scene_config(self) -> SceneConfig:
        return SceneConfig(height=self.height, width=self.width, timesteps=self.timesteps)

    def model_config(self) -> ModelConfig:
        return ModelConfig.preset(
            self.preset,
            patch=self.patch,
            grouping=self.grouping,
            target_mode=self.target_mode,
            seed=self.seed,
        )

    def contrastive_config(self) -> ContrastiveConfig:
        return ContrastiveConfig(
            tau_token=self.tau_token,
            tau_instance=self.tau_instance,
            lambda_instance=self.lambda_instance,
            filter_hard_negatives=self.filter_hard_negatives,
        )


@dataclass
class PretrainResult:
    model: Model
    history: list[dict]
    metrics_path: Path
    checkpoint_path: Path
    out_dir: Path


def grad_norm(params: dict) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.square(p.grad, dtype=np.float64).sum())
    return float(np.sqrt(total))


def build_token_pool(cfg: PretrainConfig, registry) -> list:
    scenes = make_dataset(cfg.pool_scenes, root_seed=cfg.seed, cfg=cfg.scene_config(),
                          registry=registry)
    return [
        patchify_scene(s, registry, patch=cfg.patch, grouping=cfg.grouping)
        for s in scenes
    ]


def model_from_checkpoint(
    path: str | Path, registry=None
) -> tuple[Model, PretrainConfig]:
    """Rebuild the model a checkpoint was saved from and load its weights."""
    tensors, _step, snapshot = load_checkpoint(path)
    cfg = PretrainConfig(**snapshot)
    model = Model(cfg.model_config(), registry)
    params = model.parameters()
    missing = sorted(set(params) - set(tensors))
    extra = sorted(set(tensors) - set(params))
    if missing or extra:
        raise ValueError(
            f"checkpoint does not match model: missing {missing}, extra {extra}"
        )
    for name, arr in tensors.items():
        p = params[name]
        if p.data.shape != arr.shape:
            raise ValueError(
                f"shape mismatch for {name}: model {p.data.shape}, "
                f"checkpoint {arr.shape}"
            )
        p.data[...] = arr.astype(p.data.dtype)
    return model, cfg


def pretrain(
    cfg: PretrainConfig,
    out_dir: str | Path,
    registry=None,
    loss_transform=None,
    model: Model | None = None,
) -> PretrainResult:
    """Run the loop; `loss_transform(loss, step)` is a test hook applied
    before backward."""
    problems = cfg.validate()
    if problems:
        raise ValueError("invalid pretrain config: " + "; ".join(problems))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.jsonl"
    ckpt_path = out_dir / "checkpoint.oelb"

    if model is None:
        model = Model(cfg.model_config(), registry)
    registry = model.registry
    pool = build_token_pool(cfg, registry)
    params = model.parameters()
    opt = AdamW(params, OptimConfig())
    sched = ScheduleConfig(
        peak_lr=cfg.peak_lr,
        warmup_steps=cfg.warmup_steps,
        total_steps=cfg.steps,
        final_frac=cfg.final_frac,
    )

    history: list[dict] = []
    last_good: str | None = None
    config_snapshot = dataclasses.asdict(cfg)

    def checkpoint(tag_step: int, path: Path) -> None:
        save_checkpoint(
            path, {k: p.data for k, p in params.items()}, tag_step, config_snapshot
        )

    with open(metrics_path, "w") as metrics_file:
        for step in range(cfg.steps):
            t0 = time.perf_counter()
            rng = rng_for(cfg.seed, "step", step)
            picked = rng.choice(len(pool), size=cfg.micro_batch, replace=False)
            batch_sets = [pool[i] for i in picked]
            with Tape() as tape:
                batch = forward_two_views(
                    model,
                    batch_sets,
                    rng,
                    strategy=cfg.strategy,
                    ratio=cfg.ratio,
                    p_t=cfg.p_t,
                    r_max=cfg.r_max,
                )
                loss, metrics = total_loss(batch, cfg.contrastive_config())
                if loss_transform is not None:
                    loss = loss_transform(loss, step)
                value = float(loss.data[0])
                if not np.isfinite(value):
                    diag_path = out_dir / "divergence.json"
                    diag_path.write_text(
                        json.dumps(
                            {
                                "step": step,
                                "loss": value,
                                "last_metrics": history[-1] if history else None,
                                "config": config_snapshot,
                            },
                            indent=2,
                        )
                    )
                    raise TrainingDiverged(step, value, last_good, str(diag_path))
                tape.backward(loss)
            gn = grad_norm(params)
            lr = lr_at(step, sched)
            opt.step(lr)
            opt.zero_grad()
            record = {
                "step": step,
                "loss_token": metrics["loss_token"],
                "loss_inst": metrics["loss_inst"],
                "loss_total": metrics["loss_total"],
                "grad_norm": gn,
                "lr": lr,
                "wallclock_ms": 1000.0 * (time.perf_counter() - t0),
            }
            history.append(record)
            if step % cfg.log_every == 0 or step == cfg.steps - 1:
                metrics_file.write(json.dumps(record) + "\n")
                metrics_file.flush()
            if cfg.safety_every and step and step % cfg.safety_every == 0:
                checkpoint(step, ckpt_path)
                last_good = str(ckpt_path)

    checkpoint(cfg.steps, ckpt_path)
    return PretrainResult(
        model=model,
        history=history,
        metrics_path=metrics_path,
        checkpoint_path=ckpt_path,
        out_dir=out_dir,
    )
