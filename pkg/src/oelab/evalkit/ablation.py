"""Ablation suite and temporal-masking-probability sweep.

Each harness runs short pretrains from a shared base config, evaluates a
kNN probe on freshly generated scenes, and writes one CSV plus one JSON
file. All randomness flows from the configs' seeds, so repeated runs with
the same arguments produce identical tables.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from pathlib import Path

import numpy as np

from oelab.data.modalities import default_registry
from oelab.data.scenes import make_dataset
from oelab.data.tasks import (
    scene_class_labels,
    split_indices,
    temporal_class_labels,
)
from oelab.evalkit.probes import extract_features, knn_probe
from oelab.model import Model
from oelab.tokens.grid import patchify_scene
from oelab.training.pretrain import PretrainConfig, pretrain

ABLATION_ROWS = (
    "base",
    "masking_v1",
    "no_band_dropout",
    "linear_projection",
    "loss_v1",
)

PT_VALUES = (0.0, 0.25, 0.5, 0.75)
PT_TASKS = ("scene_class", "temporal_class")


def ablation_configs(base: PretrainConfig) -> dict[str, PretrainConfig]:
    """One config per ablation row; "base" is the config unchanged."""
    return {
        "base": base,
        "masking_v1": dataclasses.replace(base, strategy="v1"),
        "no_band_dropout": dataclasses.replace(base, r_max=0.0),
        "linear_projection": dataclasses.replace(base, target_mode="linear"),
        "loss_v1": dataclasses.replace(
            base, filter_hard_negatives=False, lambda_instance=0.1
        ),
    }


def eval_knn(
    model: Model,
    cfg: PretrainConfig,
    task: str = "scene_class",
    num_scenes: int = 48,
    seed: int = 9001,
    k: int = 20,
) -> float:
    """kNN accuracy on a held-out synthetic dataset seeded independently
    of the training pool."""
    registry = default_registry()
    scenes = make_dataset(
        num_scenes, root_seed=seed, cfg=cfg.scene_config(), registry=registry
    )
    token_sets = [
        patchify_scene(s, registry, patch=cfg.patch, grouping=cfg.grouping)
        for s in scenes
    ]
    if task == "scene_class":
        labels = scene_class_labels(scenes)
    elif task == "temporal_class":
        labels = temporal_class_labels(scenes)
    else:
        raise ValueError(f"unknown task {task!r}")
    feats = extract_features(model, token_sets, pooling="mean")
    tr, va, te = split_indices(num_scenes, seed=seed)
    ref = np.concatenate([tr, va])  # kNN has no hyperparameters to tune on val
    return knn_probe(feats[ref], labels[ref], feats[te], labels[te], k=k)


def _write_table(rows: list[dict], out_dir: Path, stem: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"{stem}.json", "w") as f:
        json.dump(rows, f, indent=2)
    with open(out_dir / f"{stem}.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def run_ablation_suite(
    base: PretrainConfig,
    out_dir: str | Path,
    eval_scenes: int = 48,
    eval_seed: int = 9001,
) -> list[dict]:
    out_dir = Path(out_dir)
    rows = []
    for name, cfg in ablation_configs(base).items():
        result = pretrain(cfg, out_dir / name)
        final = result.history[-1]
        rows.append(
            {
                "name": name,
                "loss_total": final["loss_total"],
                "loss_token": final["loss_token"],
                "loss_inst": final["loss_inst"],
                "knn_scene_class": eval_knn(
                    result.model, cfg, "scene_class", eval_scenes, eval_seed
                ),
            }
        )
    _write_table(rows, out_dir, "ablation")
    return rows


def sweep_pt(
    base: PretrainConfig,
    out_dir: str | Path,
    values: tuple[float, ...] = PT_VALUES,
    tasks: tuple[str, ...] = PT_TASKS,
    eval_scenes: int = 48,
    eval_seed: int = 9002,
) -> list[dict]:
    """Vary the probability of choosing the temporal mask and track how
    each downstream task responds."""
    out_dir = Path(out_dir)
    rows = []
    for value in values:
        cfg = dataclasses.replace(base, strategy="v11", p_t=value)
        result = pretrain(cfg, out_dir / f"pt_{value}")
        row: dict = {"p_t": value, "loss_total": result.history[-1]["loss_total"]}
        for task in tasks:
            row[f"knn_{task}"] = eval_knn(
                result.model, cfg, task, eval_scenes, eval_seed
            )
        rows.append(row)
    _write_table(rows, out_dir, "sweep_pt")
    return rows
