"""Experiment configuration: defaults, merging, validation and YAML persistence.

A config is a nested mapping. Every run starts from ``base_config()`` which
defines a value for every key the pipeline understands; a project config only
override keys it wants to change. Unknown override keys are hard errors so
typos cannot silently fall back to defaults. A handful of paths hold
user-keyed mappings (per-channel preprocessing, value maps, search spaces);
those are replaced wholesale on merge, like lists.
"""

from __future__ import annotations

import copy
from typing import Any, Iterator, Mapping

import yaml

from .errors import ParseError, TypeMismatch, UnknownKey, ValidationError

# Paths whose values are mappings with user-chosen keys. They merge like
# leaves (override replaces the whole mapping) so per-key checks don't apply.
OPEN_MAP_PATHS = frozenset({
    "preprocessing.channels",
    "preprocessing.value_maps",
    "experiment.search_space",
})

ARCHITECTURES = ("cnn", "resnet", "densenet", "efficientnetv2", "convnext",
                 "vit", "transrp", "none")
CACHE_STRATEGIES = ("standard", "cache", "smartcache", "persistent")


class Config:
    """Immutable nested key-value configuration.

    Keys are addressed by dotted paths, e.g. ``cfg["training.optimizer.lr"]``.
    """

    def __init__(self, data: Mapping[str, Any]):
        self._data = copy.deepcopy(dict(data))

    def __getitem__(self, path: str) -> Any:
        node: Any = self._data
        for part in path.split("."):
            if not isinstance(node, dict) or part not in node:
                raise UnknownKey(path)
            node = node[part]
        return copy.deepcopy(node) if isinstance(node, (dict, list)) else node

    def get(self, path: str, default: Any = None) -> Any:
        try:
            return self[path]
        except UnknownKey:
            return default

    def __contains__(self, path: str) -> bool:
        try:
            self[path]
            return True
        except UnknownKey:
            return False

    def __iter__(self) -> Iterator[str]:
        return iter(self._data)

    def to_dict(self) -> dict:
        return copy.deepcopy(self._data)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Config) and self._data == other._data

    def __repr__(self) -> str:
        return f"Config({self._data!r})"

    def with_values(self, assignment: Mapping[str, Any]) -> "Config":
        """New Config with dotted-path values replaced (paths must exist)."""
        data = self.to_dict()
        for path, value in assignment.items():
            node = data
            parts = path.split(".")
            for part in parts[:-1]:
                if not isinstance(node, dict) or part not in node:
                    raise UnknownKey(path)
                node = node[part]
            if not isinstance(node, dict) or parts[-1] not in node:
                raise UnknownKey(path)
            node[parts[-1]] = value
        return Config(data)


def base_config() -> Config:
    """The complete default configuration; every section populated."""
    return Config({
        "experiment": {
            "name": "default",
            "output_root": "runs",
            "tracking": "file",
            "n_trials": 10,
            "direction": "maximize",
            "objective": "auc",
            "objective_aggregate": "mean",
            "search_space": {},
        },
        "data": {
            "csv_path": "",
            "data_root": "",
            "image_types": ["CT"],
            "tabular_features": [],
            "labels": [{"name": "label", "kind": "binary"}],
            "missing_indicator": -1,
            "stratify_on": [],
        },
        "preprocessing": {
            "channels": {
                "CT": {"a_min": -200.0, "a_max": 400.0, "b_min": 0.0, "b_max": 1.0},
            },
            "value_maps": {},
            "crop": None,
        },
        "augmentation": {
            "random_crop": None,
            "flip_x": False,
            "flip_prob": 0.5,
            "affine": {"enabled": False, "translate": 0.1, "scale": 0.1, "shear": 0.05},
            "rotate": {"enabled": False, "max_angle_deg": 10.0},
            "gaussian_noise_sigma": 0.0,
            "mixup_alpha": 0.0,
        },
        "dataset": {
            "strategy": "standard",
            "cache_fraction": 1.0,
            "cache_dir": "",
            "smartcache_refresh": 0,
            "batch_size": 8,
            "num_workers": 0,
        },
        "model": {
            "architecture": "resnet",
            "size": 10,
            "cnn": {"widths": [16, 32, 64], "kernel_size": 3},
            "vit": {"patch_size": 8, "depth": 4, "width": 128, "heads": 4, "mlp_ratio": 2.0},
            "transrp": {"cnn_architecture": "resnet", "cnn_size": 10,
                        "depth": 2, "width": 128, "heads": 4},
            "output": {
                "n_shared_layers": 2,
                "shared_sizes": [128, 64],
                "n_endpoint_layers": 1,
                "endpoint_sizes": [32],
                "n_clinical_layers": 1,
                "clinical_sizes": [16],
                "clinical_concat_position": 0,
                "dropout": 0.2,
            },
        },
        "training": {
            "folds": 5,
            "folds_to_run": [],
            "epochs": 50,
            "patience": 10,
            "monitor": "val_loss",
            "monitor_mode": "auto",
            "loss": {
                "binary": "bce",
                "focal_gamma": 2.0,
                "asl_gamma_pos": 0.0,
                "asl_gamma_neg": 4.0,
                "asl_margin": 0.05,
                "hill_lambda": 1.5,
                "endpoint_weighting": "none",
            },
            "optimizer": {
                "name": "adam",
                "lr": 1.0e-3,
                "weight_decay": 0.0,
                "momentum": 0.9,
                "betas": [0.9, 0.999],
                "final_lr": 0.1,
                "adabound_gamma": 1.0e-3,
            },
            "scheduler": {
                "name": "none",
                "step_size": 10,
                "factor": 0.1,
                "plateau_patience": 5,
            },
            "seed": 0,
            "save_weights": True,
        },
        "evaluation": {
            "metrics": ["auc", "accuracy", "f1", "precision", "recall",
                        "brier", "ece", "mce", "ace", "c_index"],
            "visualisations": ["calibration", "reliability", "confusion",
                               "roc", "kaplan_meier"],
            "n_bins": 10,
            "threshold": "youden",
            "fixed_threshold": 0.5,
            "km_groups": 2,
        },
    })


def _is_open_map(path: str) -> bool:
    return path in OPEN_MAP_PATHS


def _merge_dicts(base: dict, override: dict, prefix: str) -> dict:
    out = {}
    for key, base_val in base.items():
        path = f"{prefix}{key}"
        if key not in override:
            out[key] = copy.deepcopy(base_val)
            continue
        over_val = override[key]
        base_is_map = isinstance(base_val, dict) and not _is_open_map(path)
        over_is_map = isinstance(over_val, dict)
        if base_is_map:
            if not over_is_map:
                raise TypeMismatch(path, "a section", type(over_val).__name__)
            out[key] = _merge_dicts(base_val, over_val, path + ".")
        else:
            if over_is_map and not isinstance(base_val, dict) and base_val is not None:
                raise TypeMismatch(path, type(base_val).__name__, "a section")
            out[key] = copy.deepcopy(over_val)
    for key in override:
        if key not in base:
            raise UnknownKey(f"{prefix}{key}")
    return out


def merge(base: Config, override: Config | Mapping[str, Any]) -> Config:
    """Recursive per-key merge; override values win, base stays unmodified.

    Raises UnknownKey for override paths absent from base and TypeMismatch
    when a section is replaced by a scalar or vice versa. Lists and open
    mappings replace wholesale.
    """
    over = override.to_dict() if isinstance(override, Config) else dict(override)
    return Config(_merge_dicts(base.to_dict(), over, ""))


def validate(cfg: Config) -> None:
    """Check every config invariant; raise ValidationError listing all violations."""
    bad: list[str] = []

    folds = cfg.get("training.folds")
    if not isinstance(folds, int) or folds < 2:
        bad.append(f"training.folds must be an integer >= 2, got {folds!r}")
    else:
        for f in cfg.get("training.folds_to_run") or []:
            if not isinstance(f, int) or not (0 <= f < folds):
                bad.append(f"training.folds_to_run contains {f!r}, outside 0..{folds - 1}")

    labels = cfg.get("data.labels") or []
    if not labels:
        bad.append("data.labels must contain at least one label spec")
    for i, spec in enumerate(labels):
        if not isinstance(spec, dict) or not spec.get("name"):
            bad.append(f"data.labels[{i}]: every label spec needs a non-empty 'name'")
            continue
        kind = spec.get("kind")
        if kind not in ("binary", "event"):
            bad.append(f"data.labels[{i}] ({spec['name']}): kind must be 'binary' or 'event'")
        if kind == "event" and not spec.get("unit"):
            bad.append(f"data.labels[{i}] ({spec['name']}): event labels need a time unit")

    for channel, ranges in (cfg.get("preprocessing.channels") or {}).items():
        a_min, a_max = ranges.get("a_min"), ranges.get("a_max")
        b_min, b_max = ranges.get("b_min"), ranges.get("b_max")
        if a_min is not None and a_max is not None and not a_min < a_max:
            bad.append(f"preprocessing.channels.{channel}: a_min={a_min} must be < a_max={a_max}")
        if b_min is not None and b_max is not None and not b_min < b_max:
            bad.append(f"preprocessing.channels.{channel}: b_min={b_min} must be < b_max={b_max}")

    for crop_key in ("preprocessing.crop", "augmentation.random_crop"):
        crop = cfg.get(crop_key)
        if crop is not None and (len(crop) != 3 or any(int(c) < 1 for c in crop)):
            bad.append(f"{crop_key} must be three positive sizes, got {crop!r}")

    if cfg.get("augmentation.mixup_alpha", 0.0) < 0:
        bad.append("augmentation.mixup_alpha must be >= 0")

    strategy = cfg.get("dataset.strategy")
    if strategy not in CACHE_STRATEGIES:
        bad.append(f"dataset.strategy must be one of {CACHE_STRATEGIES}, got {strategy!r}")
    frac = cfg.get("dataset.cache_fraction", 1.0)
    if not 0.0 < frac <= 1.0:
        bad.append(f"dataset.cache_fraction must be in (0, 1], got {frac!r}")
    if cfg.get("dataset.batch_size", 1) < 1:
        bad.append("dataset.batch_size must be >= 1")

    arch = cfg.get("model.architecture")
    if arch not in ARCHITECTURES:
        bad.append(f"model.architecture must be one of {ARCHITECTURES}, got {arch!r}")
    dropout = cfg.get("model.output.dropout", 0.0)
    if not 0.0 <= dropout < 1.0:
        bad.append(f"model.output.dropout must be in [0, 1), got {dropout!r}")
    concat_pos = cfg.get("model.output.clinical_concat_position", 0)
    n_shared = cfg.get("model.output.n_shared_layers", 0)
    if not 0 <= concat_pos <= n_shared:
        bad.append(
            f"model.output.clinical_concat_position={concat_pos} must be in 0..{n_shared}"
        )

    if cfg.get("evaluation.n_bins", 10) < 1:
        bad.append("evaluation.n_bins must be >= 1")
    if cfg.get("training.epochs", 1) < 1:
        bad.append("training.epochs must be >= 1")

    if bad:
        raise ValidationError(bad)


def effective_folds(cfg: Config) -> list[int]:
    """Fold indices to run: training.folds_to_run, or all folds when empty."""
    chosen = cfg.get("training.folds_to_run") or []
    return list(chosen) if chosen else list(range(cfg["training.folds"]))


def load_config(path, base: Config | None = None) -> Config:
    """Load a YAML config file, merge it over the base defaults and validate.

    A file produced by ``save_config`` merges over the base as an identity,
    so a saved run config replays standalone.
    """
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        raise ParseError(path, mark.line + 1 if mark else None,
                         mark.column + 1 if mark else None, str(exc.problem)) from exc
    except yaml.YAMLError as exc:
        raise ParseError(path, detail=str(exc)) from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ParseError(path, detail=f"top level must be a mapping, got {type(raw).__name__}")
    cfg = merge(base if base is not None else base_config(), raw)
    validate(cfg)
    return cfg


def save_config(cfg: Config, path) -> None:
    """Persist the fully merged config so a run replays without the defaults."""
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False, default_flow_style=False)
