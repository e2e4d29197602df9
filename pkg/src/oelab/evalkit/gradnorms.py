"""Gradient-norm telemetry for the target-projector comparison.

Runs one short pretrain per projector mode from a shared base config and
summarizes the global gradient norm seen at every optimizer step. The
nonlinear projector shapes the target geometry; this report makes the
resulting difference in gradient scale directly visible.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from pathlib import Path

import numpy as np

from oelab.training.pretrain import PretrainConfig, pretrain

TARGET_MODES = ("linear", "nonlinear")


def gradnorm_report(
    base: PretrainConfig,
    out_dir: str | Path,
    modes: tuple[str, ...] = TARGET_MODES,
) -> list[dict]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for mode in modes:
        cfg = dataclasses.replace(base, target_mode=mode)
        result = pretrain(cfg, out_dir / mode)
        norms = np.array([h["grad_norm"] for h in result.history], dtype=np.float64)
        rows.append(
            {
                "target_mode": mode,
                "steps": len(norms),
                "grad_norm_median": float(np.median(norms)),
                "grad_norm_max": float(norms.max()),
                "loss_total_final": result.history[-1]["loss_total"],
            }
        )
    with open(out_dir / "gradnorms.json", "w") as f:
        json.dump(rows, f, indent=2)
    with open(out_dir / "gradnorms.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    return rows
