"""voxtrain: config-driven training and evaluation of deep-learning models on
3D volumetric images fused with tabular clinical features.

Typical usage is two lines::

    cfg = voxtrain.load_config("project.yaml")
    results = voxtrain.run_standard(cfg)
"""

from .config import Config, base_config, effective_folds, load_config, merge, save_config, validate
from .dataset import CacheStrategy, VolumeDataset, iterate_batches
from .evaluation import PredictionTable, compute_report, ensemble_tables, evaluate_test, predict
from .hpo import Study, Trial, best_config, run_experiment
from .manifest import (
    LabelSpec,
    Manifest,
    PatientRecord,
    load_manifest,
    split_train_test,
    stratified_kfold,
)
from .models import ComposedModel, EncoderSpec, OutputModuleSpec, build_model
from .npyio import Volume, read_volume, write_volume
from .samples import Batch, Sample
from .training import FoldResult, run_standard, train_fold
from .transforms import TransformPlan, plan_from_config

__version__ = "0.1.0"

__all__ = [
    "Config", "base_config", "merge", "load_config", "save_config", "validate",
    "effective_folds",
    "LabelSpec", "Manifest", "PatientRecord", "load_manifest", "split_train_test",
    "stratified_kfold",
    "Volume", "read_volume", "write_volume",
    "TransformPlan", "plan_from_config",
    "Sample", "Batch", "CacheStrategy", "VolumeDataset", "iterate_batches",
    "ComposedModel", "EncoderSpec", "OutputModuleSpec", "build_model",
    "FoldResult", "run_standard", "train_fold",
    "PredictionTable", "predict", "compute_report", "ensemble_tables", "evaluate_test",
    "Study", "Trial", "run_experiment", "best_config",
    "__version__",
]
