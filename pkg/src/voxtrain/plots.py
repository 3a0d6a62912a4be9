"""Evaluation plots plus numeric sidecar files.

Every image gets a ``*_points.csv`` sidecar carrying exactly the plotted
numbers, so tests (and downstream analyses) never have to parse pixels.
Plots whose underlying metric is undefined are simply not emitted.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import metrics as M
from .config import Config


def roc_points(preds, labels) -> tuple[np.ndarray, np.ndarray]:
    """ROC polyline from (0,0) to (1,1); trapezoidal area equals the AUC."""
    preds = np.asarray(preds, dtype=float)
    labels = np.asarray(labels, dtype=float)
    n_pos = int((labels == 1.0).sum())
    n_neg = int((labels == 0.0).sum())
    order = np.argsort(-preds, kind="mergesort")
    sorted_preds = preds[order]
    tps = np.cumsum(labels[order] == 1.0)
    fps = np.cumsum(labels[order] == 0.0)
    keep = np.r_[np.nonzero(np.diff(sorted_preds))[0], len(sorted_preds) - 1]
    tpr = np.r_[0.0, tps[keep] / n_pos]
    fpr = np.r_[0.0, fps[keep] / n_neg]
    return fpr, tpr


def _write_sidecar(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _equal_frequency_bins(preds, labels, n_bins):
    order = np.argsort(preds, kind="mergesort")
    rows = []
    for group in np.array_split(order, n_bins):
        rows.append((float(preds[group].mean()), float(labels[group].mean()), len(group)))
    return rows


def _fixed_width_bins(preds, labels, n_bins):
    idx = np.minimum((preds * n_bins).astype(int), n_bins - 1)
    rows = []
    for b in range(n_bins):
        member = idx == b
        if not member.any():
            continue
        rows.append((b / n_bins, (b + 1) / n_bins,
                     float(preds[member].mean()), float(labels[member].mean()),
                     int(member.sum())))
    return rows


def _diagonal(ax):
    ax.plot([0, 1], [0, 1], linestyle="--", color="gray", linewidth=0.8)


def render_plots(table, cfg: Config, out_dir, thresholds: dict | None = None) -> list[Path]:
    """Write the configured visualisations for every endpoint; returns paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    wanted = set(cfg["evaluation.visualisations"])
    n_bins = int(cfg["evaluation.n_bins"])
    mode = cfg["evaluation.threshold"]
    fixed_t = float(cfg["evaluation.fixed_threshold"])
    written: list[Path] = []

    for e, spec in enumerate(table.label_specs):
        preds, labels, events = table.endpoint(e)
        name = spec.name
        if spec.kind == "binary":
            has_both = (labels == 1.0).any() and (labels == 0.0).any()

            if "roc" in wanted and has_both:
                fpr, tpr = roc_points(preds, labels)
                fig, ax = plt.subplots(figsize=(4, 4))
                ax.plot(fpr, tpr)
                _diagonal(ax)
                ax.set_xlabel("false positive rate")
                ax.set_ylabel("true positive rate")
                ax.set_title(f"ROC: {name}")
                fig.savefig(out_dir / f"roc_{name}.png", dpi=100, bbox_inches="tight")
                plt.close(fig)
                _write_sidecar(out_dir / f"roc_{name}_points.csv", ["fpr", "tpr"],
                               zip(fpr.tolist(), tpr.tolist()))
                written += [out_dir / f"roc_{name}.png", out_dir / f"roc_{name}_points.csv"]

            if "calibration" in wanted and len(preds) >= n_bins:
                rows = _equal_frequency_bins(preds, labels, n_bins)
                fig, ax = plt.subplots(figsize=(4, 4))
                ax.plot([r[0] for r in rows], [r[1] for r in rows], marker="o")
                _diagonal(ax)
                ax.set_xlabel("mean predicted probability")
                ax.set_ylabel("observed frequency")
                ax.set_title(f"Calibration (equal-frequency): {name}")
                fig.savefig(out_dir / f"calibration_{name}.png", dpi=100, bbox_inches="tight")
                plt.close(fig)
                _write_sidecar(out_dir / f"calibration_{name}_points.csv",
                               ["mean_pred", "mean_label", "count"], rows)
                written += [out_dir / f"calibration_{name}.png",
                            out_dir / f"calibration_{name}_points.csv"]

            if "reliability" in wanted and len(preds):
                rows = _fixed_width_bins(preds, labels, n_bins)
                fig, ax = plt.subplots(figsize=(4, 4))
                ax.bar([r[0] for r in rows], [r[3] for r in rows],
                       width=1.0 / n_bins, align="edge", edgecolor="black")
                _diagonal(ax)
                ax.set_xlabel("predicted probability bin")
                ax.set_ylabel("observed frequency")
                ax.set_title(f"Reliability (fixed-width): {name}")
                fig.savefig(out_dir / f"reliability_{name}.png", dpi=100, bbox_inches="tight")
                plt.close(fig)
                _write_sidecar(out_dir / f"reliability_{name}_points.csv",
                               ["bin_lo", "bin_hi", "mean_pred", "mean_label", "count"], rows)
                written += [out_dir / f"reliability_{name}.png",
                            out_dir / f"reliability_{name}_points.csv"]

            if "confusion" in wanted and len(preds):
                if thresholds and thresholds.get(name) is not None:
                    tm = M.threshold_metrics(preds, labels, "fixed", thresholds[name])
                else:
                    tm = M.threshold_metrics(preds, labels, mode, fixed_t)
                if tm["threshold"] is not None:
                    counts = np.array([[tm["tn"], tm["fp"]], [tm["fn"], tm["tp"]]])
                    fig, ax = plt.subplots(figsize=(3.5, 3.5))
                    ax.imshow(counts, cmap="Blues")
                    for (r, c), v in np.ndenumerate(counts):
                        ax.text(c, r, str(v), ha="center", va="center")
                    ax.set_xticks([0, 1], ["pred 0", "pred 1"])
                    ax.set_yticks([0, 1], ["label 0", "label 1"])
                    ax.set_title(f"Confusion (t={tm['threshold']:.3g}): {name}")
                    fig.savefig(out_dir / f"confusion_{name}.png", dpi=100, bbox_inches="tight")
                    plt.close(fig)
                    _write_sidecar(out_dir / f"confusion_{name}_points.csv",
                                   ["threshold", "tp", "fp", "fn", "tn"],
                                   [(tm["threshold"], tm["tp"], tm["fp"], tm["fn"], tm["tn"])])
                    written += [out_dir / f"confusion_{name}.png",
                                out_dir / f"confusion_{name}_points.csv"]
        else:
            if "kaplan_meier" in wanted and len(preds):
                curves = M.km_risk_groups(preds, labels, events,
                                          int(cfg["evaluation.km_groups"]))
                fig, ax = plt.subplots(figsize=(4.5, 4))
                rows = []
                for group, curve in curves.items():
                    steps_t = np.r_[0.0, curve.times]
                    steps_s = np.r_[1.0, curve.survival]
                    ax.step(steps_t, steps_s, where="post", label=group)
                    for t, s, r, d in zip(curve.times, curve.survival,
                                          curve.at_risk, curve.n_events):
                        rows.append((group, float(t), float(s), int(r), int(d)))
                ax.set_ylim(-0.02, 1.02)
                ax.set_xlabel(f"time ({spec.unit})")
                ax.set_ylabel("survival probability")
                ax.legend()
                ax.set_title(f"Kaplan-Meier by predicted risk: {name}")
                fig.savefig(out_dir / f"km_{name}.png", dpi=100, bbox_inches="tight")
                plt.close(fig)
                _write_sidecar(out_dir / f"km_{name}_points.csv",
                               ["group", "time", "survival", "at_risk", "n_events"], rows)
                written += [out_dir / f"km_{name}.png", out_dir / f"km_{name}_points.csv"]
    return written
