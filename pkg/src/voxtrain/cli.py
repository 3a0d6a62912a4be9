"""Command-line entry points.

Exit codes: 0 success, 2 configuration/usage errors, 3 data errors,
1 anything else. Contract violations come back as typed one-line messages,
not tracebacks.
"""

from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
from pathlib import Path

from .config import load_config, validate
from .errors import ConfigError, DataError, NoCompletedFolds, VoxtrainError
from .manifest import load_manifest, split_train_test, validate_dataset

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DATA = 3


def _load(config_path: str):
    path = Path(config_path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return load_config(path)


def _apply_output_root(cfg, out: str | None):
    root = out or os.environ.get("VOXTRAIN_OUTPUT_ROOT")
    if root:
        cfg = cfg.with_values({"experiment.output_root": str(root)})
    return cfg


def cmd_train(args) -> int:
    from .training import run_standard

    cfg = _apply_output_root(_load(args.config), args.out)
    if args.folds:
        folds = [int(f) for f in args.folds.split(",") if f.strip() != ""]
        cfg = cfg.with_values({"training.folds_to_run": folds})
    validate(cfg)
    trial_dir = Path(cfg["experiment.output_root"]) / cfg["experiment.name"] / "trial_0"
    if trial_dir.exists() and any(trial_dir.glob("fold_*")):
        if not args.overwrite:
            raise ConfigError(f"{trial_dir} already holds fold runs; pass --overwrite to replace")
        shutil.rmtree(trial_dir)
    results = run_standard(cfg)
    for r in results:
        print(f"fold {r.fold}: best {r.monitor}={r.best_value:.5g} at epoch {r.best_epoch}"
              + (f", objective={r.objective_value:.5g}" if r.objective_value is not None else ""))
    print(f"run directory: {trial_dir}")
    return EXIT_OK


def cmd_tune(args) -> int:
    from .hpo import run_experiment

    if args.trials is not None and args.trials < 1:
        print("error: --trials must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    cfg = _apply_output_root(_load(args.config), args.out)
    direction = {"max": "maximize", "min": "minimize", None: None}[args.direction]
    experiment_dir = Path(cfg["experiment.output_root"]) / cfg["experiment.name"]
    if args.overwrite and experiment_dir.exists():
        shutil.rmtree(experiment_dir)
    study = run_experiment(cfg, n_trials=args.trials, direction=direction)
    best = study.best_trial
    print(f"best trial: {best.index} objective={best.objective:.5g}")
    for path, value in sorted(best.assignment.items()):
        print(f"  {path} = {value}")
    print(f"study log: {experiment_dir / 'study.log'}")
    return EXIT_OK


def cmd_test(args) -> int:
    from .evaluation import evaluate_test

    cfg = _load(args.config)
    if args.data_root:
        cfg = cfg.with_values({"data.data_root": str(args.data_root)})
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise NoCompletedFolds(run_dir)
    if not any(run_dir.glob("fold_*")) and (run_dir / "trial_0").is_dir():
        run_dir = run_dir / "trial_0"
    m = load_manifest(cfg["data.csv_path"], cfg["data.data_root"], cfg)
    _, m_test = split_train_test(m)
    if len(m_test) == 0:
        raise DataError("manifest has no test rows")
    outcome = evaluate_test(run_dir, m_test, cfg)
    for fold, report in sorted(outcome["folds"].items()):
        print(f"fold {fold}: " + _summarize(report))
    print("ensemble: " + _summarize(outcome["ensemble"]))
    for skipped in outcome["skipped"]:
        print(f"warning: {skipped}", file=sys.stderr)
    print(f"test artifacts: {run_dir / 'test_eval'}")
    return EXIT_OK


def _summarize(report: dict) -> str:
    parts = []
    for endpoint, row in report.items():
        shown = [f"{k}={v:.4g}" for k, v in row.items()
                 if v is not None and k in ("auc", "accuracy", "c_index", "ece", "brier")]
        parts.append(f"{endpoint}[{' '.join(shown) or 'undefined'}]")
    return " ".join(parts)


def cmd_validate_data(args) -> int:
    cfg = _load(args.config)
    problems = validate_dataset(cfg["data.csv_path"], cfg["data.data_root"], cfg)
    if problems:
        for p in problems:
            print(p)
        print(f"{len(problems)} problem(s) found", file=sys.stderr)
        return EXIT_DATA
    print("dataset conforms to the data contract")
    return EXIT_OK


def cmd_make_synthetic(args) -> int:
    from .synthetic import generate

    shape = tuple(int(s) for s in args.shape.split(","))
    if len(shape) != 3:
        print("error: --shape must be H,W,D", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        if not args.overwrite:
            raise ConfigError(f"{out} is not empty; pass --overwrite to replace")
        shutil.rmtree(out)
    manifest_path = generate(out, n=args.n, shape=shape, seed=args.seed,
                             missing_fraction=args.missing_fraction)
    print(f"wrote {args.n} patients under {out}")
    print(f"manifest: {manifest_path}")
    print(f"project config: {out / 'config.yaml'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxtrain",
        description="Config-driven training and evaluation of 3D image + tabular models.")
    parser.add_argument("-v", "--verbose", action="store_true", help="enable info logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run standard-mode K-fold cross-validation")
    p.add_argument("--config", required=True)
    p.add_argument("--folds", help="comma-separated fold subset, e.g. 0,2")
    p.add_argument("--out", help="output root (overrides config and env)")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tune", help="run or resume a hyperparameter study")
    p.add_argument("--config", required=True)
    p.add_argument("--trials", type=int)
    p.add_argument("--direction", choices=["max", "min"])
    p.add_argument("--out")
    p.add_argument("--overwrite", action="store_true", help="discard a previous study")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("test", help="post-hoc evaluation of trained folds on the test set")
    p.add_argument("--run-dir", required=True, help="experiment or trial directory")
    p.add_argument("--config", required=True)
    p.add_argument("--data-root", help="override the config's data root (external cohorts)")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("validate-data", help="check the dataset against the data contract")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate_data)

    p = sub.add_parser("make-synthetic", help="generate the synthetic tutorial dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=60)
    p.add_argument("--shape", default="16,16,16")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--missing-fraction", type=float, default=0.0)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_make_synthetic)
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except VoxtrainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
