"""Synthetic desk-scale dataset: bright spheres in noisy CT-like volumes.

Each patient gets one volume of Gaussian HU-like noise. Patients with the
positive binary label carry a bright sphere of random radius and position;
the survival endpoint's hazard grows with the sphere radius (bigger sphere,
earlier event), while sphere-free patients are censored late. The generator
is byte-deterministic for a given seed and also writes a ready-to-run
project config next to the data, so the train/test commands work on the
output directory as-is.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import yaml

from .npyio import write_volume

BACKGROUND_SIGMA_HU = 30.0
SPHERE_INTENSITY_HU = 300.0
BASELINE_MONTHS = 24.0
RADIUS_HAZARD = 1.2  # log-time drop from the smallest to the largest sphere


def _sphere_mask(shape, center, radius) -> np.ndarray:
    grids = np.ogrid[tuple(slice(0, s) for s in shape)]
    dist2 = sum((g - c) ** 2 for g, c in zip(grids, center))
    return dist2 <= radius ** 2


def generate(out_dir, n: int = 60, shape=(16, 16, 16), seed: int = 0,
             missing_fraction: float = 0.0, test_fraction: float = 1 / 3) -> Path:
    """Write ``<out>/data/<pid>/CT.npy`` volumes, ``<out>/manifest.csv`` and a
    matching ``<out>/config.yaml``. Returns the manifest path."""
    out_dir = Path(out_dir)
    data_dir = out_dir / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    shape = tuple(int(s) for s in shape)
    r_lo, r_hi = 0.15 * min(shape), 0.30 * min(shape)

    rows = []
    n_test = max(1, round(n * test_fraction))
    for i in range(n):
        pid = f"P{i + 1:03d}"
        split = "test" if i >= n - n_test else "train_val"
        has_sphere = i % 2 == 0  # alternating: both splits stay balanced

        volume = rng.normal(0.0, BACKGROUND_SIGMA_HU, size=shape)
        radius = 0.0
        if has_sphere:
            radius = float(rng.uniform(r_lo, r_hi))
            margin = radius + 1.0
            center = [float(rng.uniform(margin, s - 1 - margin))
                      if s - 1 - margin > margin else (s - 1) / 2.0  # too small to jitter
                      for s in shape]
            volume[_sphere_mask(shape, center, radius)] += SPHERE_INTENSITY_HU
        pdir = data_dir / pid
        pdir.mkdir(exist_ok=True)
        write_volume(pdir / "CT.npy", np.round(volume).astype(np.int16))

        if has_sphere:
            months = BASELINE_MONTHS * np.exp(
                -RADIUS_HAZARD * (radius / r_hi) + rng.normal(0.0, 0.05))
            event = 1
        else:
            months = float(rng.uniform(0.9, 1.4)) * BASELINE_MONTHS
            event = 0  # administratively censored: no event within follow-up
        lesion: float | int = int(has_sphere)
        surv_event: float | int = event
        surv_months: float | str = round(float(months), 3)
        if missing_fraction > 0 and rng.random() < missing_fraction:
            if rng.random() < 0.5:
                lesion = -1
            else:
                surv_event, surv_months = -1, -1
        rows.append({
            "PatientID": pid,
            "Split": split,
            "lesion": lesion,
            "survival_event": surv_event,
            "survival_months": surv_months,
            "noise_feat": round(float(rng.normal(0.0, 1.0)), 6),
        })

    manifest_path = out_dir / "manifest.csv"
    with open(manifest_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)

    with open(out_dir / "config.yaml", "w") as fh:
        yaml.safe_dump(project_config(out_dir), fh, sort_keys=False)
    return manifest_path


def project_config(out_dir) -> dict:
    """Config override tuned for the synthetic task (desk-scale budgets)."""
    out_dir = Path(out_dir)
    return {
        "experiment": {
            "name": "synthetic",
            "output_root": str(out_dir / "runs"),
        },
        "data": {
            "csv_path": str(out_dir / "manifest.csv"),
            "data_root": str(out_dir / "data"),
            "image_types": ["CT"],
            "tabular_features": ["noise_feat"],
            "labels": [
                {"name": "lesion", "kind": "binary"},
                {"name": "survival", "kind": "event", "unit": "months"},
            ],
            "stratify_on": ["lesion"],
        },
        "dataset": {"strategy": "cache", "batch_size": 8},
        "augmentation": {"flip_x": True},
        "training": {
            "folds": 3,
            "epochs": 14,
            "patience": 6,
            "seed": 0,
            "optimizer": {"name": "adam", "lr": 1.0e-3},
        },
    }
