"""Standard-mode training: K-fold cross-validation with early stopping and
per-fold artifact persistence.

Each fold trains on its own subset, monitors a validation quantity, keeps
the best-epoch weights, and writes a self-contained run directory:
``config.yaml`` (the fully merged config, replayable without the defaults),
``imputation.json`` (tabular fill values from this fold's training split),
optional ``weights.pt``, prediction and metric CSVs for the train and
validation cohorts, plots, and a ``DONE`` sentinel. A missing sentinel marks
an incomplete run.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import Config, effective_folds, save_config, validate
from .dataset import CacheStrategy, VolumeDataset, iterate_batches, mixup_batch
from .errors import AllMasked
from .evaluation import (
    compute_report,
    predict,
    write_metrics_csv,
    write_predictions_csv,
)
from .losses import LossSpec, inverse_frequency_weights, masked_loss
from .manifest import (
    Manifest,
    impute_values,
    label_specs_from_config,
    load_manifest,
    split_train_test,
    stratified_kfold,
)
from .models import EncoderSpec, OutputModuleSpec, build_model
from .optim import make_optimizer, make_scheduler
from .plots import render_plots
from .tracking import NullTracker, Tracker, make_tracker
from .transforms import plan_from_config

log = logging.getLogger(__name__)

LOWER_IS_BETTER = {"val_loss", "loss", "ece", "mce", "ace", "brier"}


def monitor_mode(name: str, configured: str = "auto") -> str:
    if configured in ("min", "max"):
        return configured
    return "min" if name in LOWER_IS_BETTER or "loss" in name else "max"


class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without improvement."""

    def __init__(self, mode: str, patience: int):
        self.mode = mode
        self.patience = patience
        self.best: float | None = None
        self.best_epoch = -1
        self.bad_epochs = 0

    def update(self, value: float, epoch: int) -> bool:
        better = (self.best is None
                  or (self.mode == "min" and value < self.best)
                  or (self.mode == "max" and value > self.best))
        if better:
            self.best, self.best_epoch, self.bad_epochs = value, epoch, 0
        else:
            self.bad_epochs += 1
        return better

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


@dataclass
class TrainState:
    """Serializable per-epoch snapshot for post-mortems and crash recovery."""

    epoch: int
    monitored: list
    best_value: float | None
    best_epoch: int
    bad_epochs: int
    lr: float

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.__dict__))

    @classmethod
    def load(cls, path) -> "TrainState":
        return cls(**json.loads(Path(path).read_text()))


@dataclass
class FoldResult:
    fold: int
    best_epoch: int
    best_value: float
    monitor: str
    objective_value: float | None
    run_dir: Path
    config_path: Path
    weights_path: Path | None
    prediction_paths: dict = field(default_factory=dict)
    metric_paths: dict = field(default_factory=dict)
    val_report: dict = field(default_factory=dict)


def _to_tensors(batch):
    images = None if batch.images is None else torch.from_numpy(np.ascontiguousarray(batch.images))
    return (images,
            torch.from_numpy(batch.tabular),
            torch.from_numpy(batch.labels),
            torch.from_numpy(batch.events),
            torch.from_numpy(batch.masks))


def _evaluate(model, ds: VolumeDataset, batch_size, label_specs, loss_spec):
    """Eval pass: cohort-level loss (full risk set for event endpoints) and
    the prediction table."""
    model.eval()
    outputs, labels, events, masks = [], [], [], []
    with torch.no_grad():
        for batch in iterate_batches(ds, batch_size, shuffle=False):
            images, tabular, y, ev, m = _to_tensors(batch)
            outputs.append(model(images, tabular))
            labels.append(y)
            events.append(ev)
            masks.append(m)
    out = torch.cat(outputs)
    y, ev, m = torch.cat(labels), torch.cat(events), torch.cat(masks)
    try:
        loss = float(masked_loss(out, y, ev, m, label_specs, loss_spec))
    except AllMasked:
        loss = math.nan
    return loss, out


def _objective_from_report(report: dict, objective: str) -> float | None:
    """Mean of one metric across endpoints, skipping undefined entries."""
    values = [row[objective] for row in report.values()
              if objective in row and row[objective] is not None]
    return float(np.mean(values)) if values else None


def train_fold(cfg: Config, m_trainval: Manifest, fold: int, split,
               run_dir, tracker: Tracker | None = None) -> FoldResult:
    """Train one fold end to end and persist its artifacts under run_dir."""
    tracker = tracker or NullTracker()
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    done = run_dir / "DONE"
    if done.exists():
        done.unlink()

    train_ids, val_ids = split
    seed = int(cfg["training.seed"])
    torch.manual_seed(seed * 100003 + fold)

    label_specs = label_specs_from_config(cfg)
    event_endpoints = tuple(s.kind == "event" for s in label_specs)
    plan = plan_from_config(cfg)
    strategy = CacheStrategy.from_config(cfg)
    batch_size = int(cfg["dataset.batch_size"])
    loss_spec = LossSpec.from_config(cfg)
    pos_weights = None
    if cfg["training.loss.endpoint_weighting"] == "inverse_frequency":
        pos_weights = inverse_frequency_weights(m_trainval, label_specs, train_ids)

    impute = impute_values(m_trainval, train_ids)
    save_config(cfg, run_dir / "config.yaml")
    (run_dir / "imputation.json").write_text(json.dumps(impute))

    train_ds = VolumeDataset(m_trainval.subset(train_ids), plan, strategy, "train", impute)
    val_ds = VolumeDataset(m_trainval.subset(val_ids), plan, strategy, "eval", impute)

    model = build_model(
        EncoderSpec.from_config(cfg),
        OutputModuleSpec.from_config(cfg),
        label_specs,
        n_modalities=len(cfg["data.image_types"] or []),
        n_tabular=len(cfg["data.tabular_features"] or []),
    )
    optimizer = make_optimizer(cfg["training.optimizer.name"], model.parameters(),
                               cfg["training.optimizer"])
    monitor = cfg["training.monitor"]
    mode = monitor_mode(monitor, cfg["training.monitor_mode"])
    scheduler = make_scheduler(cfg["training.scheduler.name"], optimizer,
                               cfg["training.scheduler"], int(cfg["training.epochs"]), mode)
    stopper = EarlyStopping(mode, int(cfg["training.patience"]))
    mixup_alpha = float(cfg["augmentation.mixup_alpha"])

    best_state = None
    monitored_history: list[float] = []
    for epoch in range(1, int(cfg["training.epochs"]) + 1):
        model.train()
        epoch_rng = np.random.default_rng([seed, fold, epoch])
        train_losses = []
        for batch in iterate_batches(train_ds, batch_size, shuffle=True, rng=epoch_rng):
            if mixup_alpha > 0:
                batch = mixup_batch(batch, mixup_alpha, epoch_rng, event_endpoints)
            images, tabular, y, ev, m = _to_tensors(batch)
            try:
                loss = masked_loss(model(images, tabular), y, ev, m,
                                   label_specs, loss_spec, pos_weights)
            except AllMasked:
                log.warning("fold %d epoch %d: batch with no observed labels skipped",
                            fold, epoch)
                continue
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            train_losses.append(float(loss.detach()))
        train_ds.end_epoch()
        train_loss = float(np.mean(train_losses)) if train_losses else math.nan

        val_loss, _ = _evaluate(model, val_ds, batch_size, label_specs, loss_spec)
        val_table = predict(model, val_ds, batch_size)
        val_report = compute_report(val_table, cfg)

        tracker.log(fold, epoch, "train_loss", train_loss)
        tracker.log(fold, epoch, "val_loss", val_loss)
        tracker.log(fold, epoch, "lr", scheduler.lr)
        for endpoint, row in val_report.items():
            for metric, value in row.items():
                if value is not None:
                    tracker.log(fold, epoch, f"val_{metric}_{endpoint}", value)

        if monitor == "val_loss":
            monitored = val_loss
        else:
            monitored = _objective_from_report(val_report, monitor)
            if monitored is None:
                log.warning("fold %d epoch %d: monitored metric %r undefined; "
                            "falling back to val_loss", fold, epoch, monitor)
                monitored = val_loss
        monitored_history.append(monitored)
        if stopper.update(monitored, epoch):
            best_state = copy.deepcopy(model.state_dict())
        TrainState(epoch=epoch, monitored=monitored_history,
                   best_value=stopper.best, best_epoch=stopper.best_epoch,
                   bad_epochs=stopper.bad_epochs, lr=scheduler.lr).save(
            run_dir / "train_state.json")
        scheduler.step(monitored)
        if stopper.should_stop:
            log.info("fold %d: early stop at epoch %d (best %s=%.5g at epoch %d)",
                     fold, epoch, monitor, stopper.best, stopper.best_epoch)
            break

    if best_state is not None:
        model.load_state_dict(best_state)
    weights_path = None
    if cfg["training.save_weights"]:
        weights_path = run_dir / "weights.pt"
        torch.save(model.state_dict(), weights_path)

    # final artifacts use the deterministic eval stage for both cohorts
    eval_train_ds = VolumeDataset(m_trainval.subset(train_ids), plan,
                                  CacheStrategy(kind="standard"), "eval", impute)
    prediction_paths, metric_paths = {}, {}
    final_val_report: dict = {}
    for cohort, ds in (("train", eval_train_ds), ("val", val_ds)):
        table = predict(model, ds, batch_size)
        report = compute_report(table, cfg)
        pred_path = run_dir / f"predictions_{cohort}.csv"
        metc_path = run_dir / f"metrics_{cohort}.csv"
        write_predictions_csv(table, pred_path)
        write_metrics_csv(report, metc_path)
        prediction_paths[cohort] = pred_path
        metric_paths[cohort] = metc_path
        try:
            for p in render_plots(table, cfg, run_dir / "plots" / cohort):
                if p.suffix == ".png":
                    tracker.log_figure(fold, f"{cohort}/{p.stem}", p)
        except Exception as exc:  # plots are best-effort artifacts
            log.warning("fold %d: %s plots failed: %s", fold, cohort, exc)
        if cohort == "val":
            final_val_report = report

    done.touch()
    objective = cfg["experiment.objective"]
    if objective == "val_loss":
        objective_value, _ = _evaluate(model, val_ds, batch_size, label_specs, loss_spec)
    else:
        objective_value = _objective_from_report(final_val_report, objective)
    return FoldResult(
        fold=fold,
        best_epoch=stopper.best_epoch,
        best_value=float(stopper.best),
        monitor=monitor,
        objective_value=objective_value,
        run_dir=run_dir,
        config_path=run_dir / "config.yaml",
        weights_path=weights_path,
        prediction_paths=prediction_paths,
        metric_paths=metric_paths,
        val_report=final_val_report,
    )


def run_standard(cfg: Config, trial: int = 0, experiment_dir=None,
                 tracker: Tracker | None = None) -> list[FoldResult]:
    """Full standard mode: manifest, folds, then train_fold per configured fold.

    Fails fast on the first fold error; completed fold directories are kept.
    """
    validate(cfg)
    if experiment_dir is None:
        experiment_dir = Path(cfg["experiment.output_root"]) / cfg["experiment.name"]
    experiment_dir = Path(experiment_dir)
    experiment_dir.mkdir(parents=True, exist_ok=True)
    if tracker is None:
        tracker = make_tracker(cfg["experiment.tracking"], experiment_dir)

    m = load_manifest(cfg["data.csv_path"], cfg["data.data_root"], cfg)
    m_trainval, _ = split_train_test(m)
    folds = stratified_kfold(m_trainval, int(cfg["training.folds"]),
                             cfg["data.stratify_on"], int(cfg["training.seed"]))
    results = []
    for fold in effective_folds(cfg):
        run_dir = experiment_dir / f"trial_{trial}" / f"fold_{fold}"
        log.info("training fold %d -> %s", fold, run_dir)
        results.append(train_fold(cfg, m_trainval, fold, folds[fold], run_dir, tracker))
    return results
