"""Command-line entry point.

Verbs:

  pretrain   run masked-latent pretraining from a JSON run config
  eval       probe a checkpoint with kNN and linear classifiers
  finetune   supervised finetuning of a checkpoint with a head plan
  ablate     five-row ablation table from short pretrains
  sweep-pt   sweep the temporal-masking probability
  bench      micro-benchmarks (kernel backends, patch embedding)
  gradcheck  finite-difference verification of every op
  gradnorms  gradient-norm telemetry, linear vs nonlinear targets

Run configs are JSON files matching PretrainConfig fields; keys starting
with "_" are comments. A malformed config exits with status 2 and a list
of every problem found. OE_LAB_THREADS caps BLAS threads and
OE_LAB_BACKEND picks the kernel backend; both are read at import.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oelab",
        description="Masked-latent pretraining lab for multimodal raster scenes.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_config_args(p, default_out):
        p.add_argument("--config", type=Path, default=None, help="JSON run config")
        p.add_argument("--out", type=Path, default=Path(default_out))
        p.add_argument("--steps", type=int, default=None, help="override steps")
        p.add_argument(
            "--seed-override", type=int, default=None, help="override the config seed"
        )
        p.add_argument("--preset", default=None, help="override model preset")

    p = sub.add_parser("pretrain", help="run masked-latent pretraining")
    add_config_args(p, "runs/pretrain")

    p = sub.add_parser("eval", help="probe a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument(
        "--task", default="scene_class", choices=["scene_class", "temporal_class"]
    )
    p.add_argument("--scenes", type=int, default=64)
    p.add_argument("--seed", type=int, default=9001)
    p.add_argument("--knn-k", type=int, default=20)
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("finetune", help="finetune a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument(
        "--plan", default="frozenstart", choices=["uniform", "frozenstart", "llrd"]
    )
    p.add_argument(
        "--task", default="scene_class", choices=["scene_class", "temporal_class"]
    )
    p.add_argument("--scenes", type=int, default=48)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--peak-lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("ablate", help="five-row ablation table")
    add_config_args(p, "runs/ablation")

    p = sub.add_parser("sweep-pt", help="temporal-masking probability sweep")
    add_config_args(p, "runs/sweep_pt")

    p = sub.add_parser("bench", help="micro-benchmarks")
    p.add_argument(
        "--target", default="all", choices=["all", "kernels", "patch-embed"]
    )
    p.add_argument("--repeats", type=int, default=20)

    p = sub.add_parser("gradcheck", help="finite-difference check of all ops")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)

    p = sub.add_parser("gradnorms", help="gradient-norm telemetry")
    add_config_args(p, "runs/gradnorms")

    return parser


def _load_base_config(args):
    from oelab.io.config import load_run_config
    from oelab.training.pretrain import PretrainConfig

    cfg = PretrainConfig() if args.config is None else load_run_config(args.config)
    overrides = {}
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.seed_override is not None:
        overrides["seed"] = args.seed_override
    if args.preset is not None:
        overrides["preset"] = args.preset
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _emit(payload: dict | list, out: Path | None = None, name: str = "result.json"):
    text = json.dumps(payload, indent=2)
    print(text)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text + "\n")


def _eval_datasets(model, cfg, task, num_scenes, seed):
    from oelab.data.scenes import make_dataset
    from oelab.data.tasks import scene_class_labels, temporal_class_labels
    from oelab.tokens.grid import patchify_scene

    scenes = make_dataset(
        num_scenes, root_seed=seed, cfg=cfg.scene_config(), registry=model.registry
    )
    token_sets = [
        patchify_scene(s, model.registry, patch=cfg.patch, grouping=cfg.grouping)
        for s in scenes
    ]
    labels = (
        scene_class_labels(scenes)
        if task == "scene_class"
        else temporal_class_labels(scenes)
    )
    return token_sets, labels, cfg.scene_config().num_classes


def cmd_pretrain(args) -> int:
    from oelab.training.pretrain import pretrain

    cfg = _load_base_config(args)
    result = pretrain(cfg, args.out)
    last = result.history[-1]
    _emit(
        {
            "out_dir": str(result.out_dir),
            "checkpoint": str(result.checkpoint_path),
            "steps": len(result.history),
            "loss_total_first": result.history[0]["loss_total"],
            "loss_total_final": last["loss_total"],
            "loss_token_final": last["loss_token"],
            "loss_inst_final": last["loss_inst"],
        }
    )
    return 0


def cmd_eval(args) -> int:
    from oelab.data.tasks import split_indices
    from oelab.evalkit.probes import extract_features, knn_probe, probe_sweep
    from oelab.training.pretrain import model_from_checkpoint

    model, cfg = model_from_checkpoint(args.checkpoint)
    token_sets, labels, num_classes = _eval_datasets(
        model, cfg, args.task, args.scenes, args.seed
    )
    tr, va, te = split_indices(args.scenes, seed=args.seed)
    ref = np.concatenate([tr, va])
    feats = extract_features(model, token_sets)
    knn_acc = knn_probe(feats[ref], labels[ref], feats[te], labels[te], k=args.knn_k)
    sweep = probe_sweep(
        model, token_sets, labels, num_classes, split_seed=args.seed
    )
    _emit(
        {
            "checkpoint": str(args.checkpoint),
            "task": args.task,
            "scenes": args.scenes,
            "knn_accuracy": knn_acc,
            "linear_accuracy": sweep["test_accuracy"],
            "linear_best_cell": sweep["best"],
        },
        args.out,
        "eval.json",
    )
    return 0


def cmd_finetune(args) -> int:
    from oelab.data.tasks import split_indices
    from oelab.training.finetune import (
        FinetuneConfig,
        evaluate_accuracy,
        finetune,
    )
    from oelab.training.pretrain import model_from_checkpoint

    model, cfg = model_from_checkpoint(args.checkpoint)
    token_sets, labels, num_classes = _eval_datasets(
        model, cfg, args.task, args.scenes, args.seed + 77
    )
    tr, _va, te = split_indices(args.scenes, seed=args.seed)
    ft_cfg = FinetuneConfig(
        plan=args.plan,
        steps=args.steps,
        batch=args.batch,
        peak_lr=args.peak_lr,
        warmup_steps=max(1, args.steps // 10),
        seed=args.seed,
    )
    result = finetune(
        model,
        [token_sets[i] for i in tr],
        labels[tr],
        num_classes,
        ft_cfg,
        out_dir=args.out,
    )
    test_acc = evaluate_accuracy(
        model, [token_sets[i] for i in te], labels[te], result.head
    )
    _emit(
        {
            "checkpoint": str(args.checkpoint),
            "plan": args.plan,
            "task": args.task,
            "loss_first": result.history[0]["loss"],
            "loss_final": result.history[-1]["loss"],
            "train_accuracy": result.train_accuracy,
            "test_accuracy": test_acc,
        },
        args.out,
        "finetune.json",
    )
    return 0


def cmd_ablate(args) -> int:
    from oelab.evalkit.ablation import run_ablation_suite

    rows = run_ablation_suite(_load_base_config(args), args.out)
    _emit(rows)
    return 0


def cmd_sweep_pt(args) -> int:
    from oelab.evalkit.ablation import sweep_pt

    rows = sweep_pt(_load_base_config(args), args.out)
    _emit(rows)
    return 0


def cmd_bench(args) -> int:
    from oelab.evalkit.bench import bench_kernels, bench_patch_embed

    if args.repeats < 10:
        print(
            f"bench: --repeats must be >= 10 for a stable median, got {args.repeats}",
            file=sys.stderr,
        )
        return 2
    payload = {}
    if args.target in ("all", "kernels"):
        payload["kernels"] = bench_kernels(repeats=args.repeats)
    if args.target in ("all", "patch-embed"):
        payload["patch_embed"] = bench_patch_embed(repeats=args.repeats)
    _emit(payload)
    return 0


def cmd_gradcheck(args) -> int:
    from oelab.autodiff.gradcheck import run_all_gradchecks

    results = run_all_gradchecks(seed=args.seed, eps=args.eps)
    worst = max(results.values())
    _emit(
        {
            "per_op": results,
            "worst": worst,
            "tolerance": args.tol,
            "ok": bool(worst <= args.tol),
        }
    )
    return 0 if worst <= args.tol else 1


def cmd_gradnorms(args) -> int:
    from oelab.evalkit.gradnorms import gradnorm_report

    rows = gradnorm_report(_load_base_config(args), args.out)
    _emit(rows)
    return 0


_COMMANDS = {
    "pretrain": cmd_pretrain,
    "eval": cmd_eval,
    "finetune": cmd_finetune,
    "ablate": cmd_ablate,
    "sweep-pt": cmd_sweep_pt,
    "bench": cmd_bench,
    "gradcheck": cmd_gradcheck,
    "gradnorms": cmd_gradnorms,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.verb](args)
    except ValueError as err:
        # ConfigError and refused checkpoints land here; both are user
        # input problems, not crashes
        print(str(err), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
