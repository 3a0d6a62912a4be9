"""Prediction tables, per-endpoint metric reports and post-hoc test evaluation.

Binary predictions in a table are probabilities; event predictions are
unbounded risk scores. Metrics only ever see observed entries. Undefined
metrics stay None end-to-end and serialize as empty CSV cells.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import metrics as M
from .config import Config, load_config
from .dataset import CacheStrategy, VolumeDataset, iterate_batches
from .errors import EmptyGroup, NoCompletedFolds, TooFewSamples, WeightsMissing
from .manifest import Manifest, label_specs_from_config
from .models import EncoderSpec, OutputModuleSpec, build_model
from .transforms import plan_from_config

log = logging.getLogger(__name__)

BINARY_METRICS = ("auc", "accuracy", "f1", "precision", "recall",
                  "brier", "ece", "mce", "ace")
EVENT_METRICS = ("c_index",)


@dataclass
class PredictionTable:
    """One row per patient; per-endpoint prediction, label and observed flag."""

    label_specs: tuple
    patient_ids: tuple
    preds: np.ndarray  # (N, E)
    labels: np.ndarray  # (N, E) binary label or event time
    events: np.ndarray  # (N, E)
    observed: np.ndarray  # (N, E) bool

    def endpoint(self, e: int, observed_only: bool = True):
        keep = self.observed[:, e] if observed_only else np.ones(len(self.patient_ids), bool)
        return self.preds[keep, e], self.labels[keep, e], self.events[keep, e]


def predict(model, ds: VolumeDataset, batch_size: int = 8) -> PredictionTable:
    """Eval-stage pass over the dataset; sigmoid applied to binary columns."""
    specs = ds.manifest.label_specs
    binary_cols = np.array([s.kind == "binary" for s in specs])
    ids, preds, labels, events, observed = [], [], [], [], []
    model.eval()
    with torch.no_grad():
        for batch in iterate_batches(ds, batch_size, shuffle=False):
            images = None if batch.images is None else torch.from_numpy(batch.images)
            out = model(images, torch.from_numpy(batch.tabular)).numpy().astype(float)
            if binary_cols.any():
                out[:, binary_cols] = 1.0 / (1.0 + np.exp(-out[:, binary_cols]))
            ids.extend(batch.patient_ids)
            preds.append(out)
            labels.append(batch.labels)
            events.append(batch.events)
            observed.append(batch.masks)
    return PredictionTable(
        label_specs=specs,
        patient_ids=tuple(ids),
        preds=np.concatenate(preds),
        labels=np.concatenate(labels).astype(float),
        events=np.concatenate(events).astype(float),
        observed=np.concatenate(observed).astype(bool),
    )


def compute_report(table: PredictionTable, cfg: Config,
                   thresholds: dict | None = None) -> dict:
    """Per-endpoint {metric: value-or-None} for the configured metric list.

    ``thresholds`` optionally pins the decision threshold per binary endpoint
    (e.g. derived on validation predictions); otherwise the configured
    threshold mode applies on this table's own predictions.
    """
    wanted = list(cfg["evaluation.metrics"])
    n_bins = int(cfg["evaluation.n_bins"])
    mode = cfg["evaluation.threshold"]
    fixed_t = float(cfg["evaluation.fixed_threshold"])
    report: dict = {}
    for e, spec in enumerate(table.label_specs):
        preds, labels, events = table.endpoint(e)
        row: dict = {}
        if spec.kind == "binary":
            if thresholds and spec.name in thresholds and thresholds[spec.name] is not None:
                tm = M.threshold_metrics(preds, labels, "fixed", thresholds[spec.name])
            else:
                tm = M.threshold_metrics(preds, labels, mode, fixed_t)
            row["threshold"] = tm["threshold"]
            for name in wanted:
                if name == "auc":
                    row[name] = M.auc(preds, labels) if len(preds) else None
                elif name in ("accuracy", "f1", "precision", "recall"):
                    row[name] = tm[name] if len(preds) else None
                elif name == "brier":
                    row[name] = M.brier(preds, labels)
                elif name in ("ece", "mce"):
                    if len(preds):
                        ece, mce = M.expected_calibration_error(preds, labels, n_bins)
                        row[name] = ece if name == "ece" else mce
                    else:
                        row[name] = None
                elif name == "ace":
                    try:
                        row[name] = (M.adaptive_calibration_error(preds, labels, n_bins)
                                     if len(preds) else None)
                    except TooFewSamples:
                        row[name] = None
                elif name == "c_index":
                    continue  # event-only
        else:
            for name in wanted:
                if name == "c_index":
                    row[name] = M.c_index(preds, labels, events) if len(preds) else None
        report[spec.name] = row
    return report


# --- CSV serialization -------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".10g")


def write_predictions_csv(table: PredictionTable, path) -> None:
    header = ["PatientID"]
    for spec in table.label_specs:
        if spec.kind == "binary":
            header += [f"{spec.name}_prediction", f"{spec.name}_label", f"{spec.name}_observed"]
        else:
            header += [f"{spec.name}_prediction", f"{spec.name}_{spec.unit}",
                       f"{spec.name}_event", f"{spec.name}_observed"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, pid in enumerate(table.patient_ids):
            row = [pid]
            for e, spec in enumerate(table.label_specs):
                row.append(_fmt(table.preds[i, e]))
                row.append(_fmt(table.labels[i, e]))
                if spec.kind == "event":
                    row.append(_fmt(table.events[i, e]))
                row.append(_fmt(table.observed[i, e]))
            writer.writerow(row)


def read_predictions_csv(path, label_specs) -> PredictionTable:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    n, e_n = len(rows), len(label_specs)
    preds = np.zeros((n, e_n))
    labels = np.zeros((n, e_n))
    events = np.zeros((n, e_n))
    observed = np.zeros((n, e_n), dtype=bool)
    ids = []
    for i, row in enumerate(rows):
        ids.append(row["PatientID"])
        for e, spec in enumerate(label_specs):
            preds[i, e] = float(row[f"{spec.name}_prediction"])
            key = spec.name + ("_label" if spec.kind == "binary" else f"_{spec.unit}")
            labels[i, e] = float(row[key])
            if spec.kind == "event":
                events[i, e] = float(row[f"{spec.name}_event"])
            observed[i, e] = row[f"{spec.name}_observed"] == "1"
    return PredictionTable(tuple(label_specs), tuple(ids), preds, labels, events, observed)


def write_metrics_csv(report: dict, path, extra_cols=("threshold",)) -> None:
    """One row per endpoint, one column per metric; empty cell = undefined."""
    names: list[str] = []
    for row in report.values():
        names.extend(k for k in row if k not in names)
    ordered = [c for c in extra_cols if c in names] + [n for n in names if n not in extra_cols]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["endpoint"] + ordered)
        for endpoint, row in report.items():
            writer.writerow([endpoint] + [_fmt(row.get(c)) if c in row else "" for c in ordered])


# --- ensembling ----------------------------------------------------------------


def ensemble_tables(tables) -> PredictionTable:
    """Mean prediction per patient across fold tables (probabilities and risks)."""
    tables = list(tables)
    first = tables[0]
    for t in tables[1:]:
        if t.patient_ids != first.patient_ids:
            raise ValueError("fold prediction tables cover different patients")
    # baseline-shifted mean: identical tables ensemble to themselves bit-exactly
    deltas = np.sum([t.preds - first.preds for t in tables], axis=0)
    preds = first.preds + deltas / len(tables)
    return PredictionTable(first.label_specs, first.patient_ids, preds,
                           first.labels.copy(), first.events.copy(), first.observed.copy())


# --- post-hoc test-set evaluation -----------------------------------------------


def _fold_dirs(run_root: Path) -> list[Path]:
    return sorted((d for d in run_root.glob("fold_*") if d.is_dir()),
                  key=lambda d: int(d.name.split("_")[1]))


def _build_fold_model(fold_cfg: Config, m: Manifest):
    specs = label_specs_from_config(fold_cfg)
    model = build_model(
        EncoderSpec.from_config(fold_cfg),
        OutputModuleSpec.from_config(fold_cfg),
        specs,
        n_modalities=len(fold_cfg["data.image_types"] or []),
        n_tabular=len(fold_cfg["data.tabular_features"] or []),
    )
    return model


def _validation_thresholds(fold_dirs, cfg: Config) -> dict:
    """Youden thresholds from the pooled out-of-fold validation predictions.

    Pooling the per-fold validation tables gives one out-of-fold prediction
    per training patient, so the test threshold is derived without touching
    test labels.
    """
    specs = label_specs_from_config(cfg)
    pools: dict[str, list] = {s.name: [] for s in specs if s.kind == "binary"}
    for fold_dir in fold_dirs:
        val_csv = fold_dir / "predictions_val.csv"
        if not val_csv.is_file():
            continue
        table = read_predictions_csv(val_csv, specs)
        for e, spec in enumerate(specs):
            if spec.kind != "binary":
                continue
            preds, labels, _ = table.endpoint(e)
            pools[spec.name].append((preds, labels))
    thresholds = {}
    for name, chunks in pools.items():
        if not chunks:
            thresholds[name] = None
            continue
        preds = np.concatenate([c[0] for c in chunks])
        labels = np.concatenate([c[1] for c in chunks])
        thresholds[name] = M.youden_threshold(preds, labels)
    return thresholds


def evaluate_test(run_root, manifest_test: Manifest, cfg: Config,
                  batch_size: int | None = None) -> dict:
    """Load each completed fold's best weights, score the test cohort, and
    report per fold plus for the mean-prediction ensemble.

    Folds without a weights file are reported as skipped; the remaining folds
    are still evaluated. Artifacts land in ``<run_root>/test_eval/``.
    """
    from .plots import render_plots  # local import: matplotlib is heavy

    run_root = Path(run_root)
    fold_dirs = [d for d in _fold_dirs(run_root) if (d / "DONE").is_file()]
    if not fold_dirs:
        raise NoCompletedFolds(run_root)
    batch_size = batch_size or int(cfg["dataset.batch_size"])

    if cfg["evaluation.threshold"] == "youden":
        thresholds = _validation_thresholds(fold_dirs, cfg)
    else:
        thresholds = None

    out_root = run_root / "test_eval"
    out_root.mkdir(exist_ok=True)
    fold_reports: dict[int, dict] = {}
    tables = []
    skipped: list[WeightsMissing] = []
    for fold_dir in fold_dirs:
        fold = int(fold_dir.name.split("_")[1])
        weights = fold_dir / "weights.pt"
        if not weights.is_file():
            skipped.append(WeightsMissing(fold, weights))
            log.warning("fold %d has no saved weights; skipping", fold)
            continue
        fold_cfg = load_config(fold_dir / "config.yaml")
        impute_path = fold_dir / "imputation.json"
        impute = json.loads(impute_path.read_text()) if impute_path.is_file() else None
        model = _build_fold_model(fold_cfg, manifest_test)
        model.load_state_dict(torch.load(weights, weights_only=True))
        ds = VolumeDataset(manifest_test, plan_from_config(fold_cfg),
                           CacheStrategy(kind="standard"), stage="eval", impute=impute)
        table = predict(model, ds, batch_size)
        report = compute_report(table, cfg, thresholds)
        fold_out = out_root / fold_dir.name
        fold_out.mkdir(exist_ok=True)
        write_predictions_csv(table, fold_out / "predictions_test.csv")
        write_metrics_csv(report, fold_out / "metrics_test.csv")
        try:
            render_plots(table, cfg, fold_out / "plots", thresholds=thresholds)
        except EmptyGroup as exc:
            log.warning("fold %d: skipping risk-group plot: %s", fold, exc)
        tables.append(table)
        fold_reports[fold] = report

    if not tables:
        raise NoCompletedFolds(run_root)

    ensemble = ensemble_tables(tables)
    ensemble_report = compute_report(ensemble, cfg, thresholds)
    ens_out = out_root / "ensemble"
    ens_out.mkdir(exist_ok=True)
    write_predictions_csv(ensemble, ens_out / "predictions_test.csv")
    write_metrics_csv(ensemble_report, ens_out / "metrics_test.csv")
    try:
        render_plots(ensemble, cfg, ens_out / "plots", thresholds=thresholds)
    except EmptyGroup as exc:
        log.warning("ensemble: skipping risk-group plot: %s", exc)

    return {"folds": fold_reports, "ensemble": ensemble_report,
            "skipped": skipped, "thresholds": thresholds}
