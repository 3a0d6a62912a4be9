"""Experiment mode: sampled hyperparameter trials, each a full K-fold run.

A search space maps config paths to domains (real ranges, optionally
log-scaled; integer ranges; categorical sets). The sampler proposes an
assignment per trial, the assignment is merged into the config, a complete
cross-validation runs, and the per-fold objective values aggregate into the
trial objective. The study log is line-delimited JSON, appended after every
trial, so an interrupted study resumes where it stopped; trial sampling is
seeded per index, so a resumed study samples exactly what an uninterrupted
one would have.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config, validate
from .errors import AllTrialsFailed, ConfigError, NoCompleteTrial
from .training import run_standard

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Domain:
    kind: str  # "float" | "int" | "categorical"
    low: float | None = None
    high: float | None = None
    log: bool = False
    choices: tuple = ()

    def sample(self, rng: np.random.Generator):
        if self.kind == "float":
            if self.log:
                return float(np.exp(rng.uniform(math.log(self.low), math.log(self.high))))
            return float(rng.uniform(self.low, self.high))
        if self.kind == "int":
            return int(rng.integers(self.low, self.high + 1))
        return self.choices[int(rng.integers(len(self.choices)))]

    def contains(self, value) -> bool:
        if self.kind == "categorical":
            return value in self.choices
        return self.low <= value <= self.high


def parse_search_space(raw: dict, base: Config) -> dict[str, Domain]:
    """Validate a config-style search space: paths must exist in the base
    config and every domain must be non-degenerate."""
    space: dict[str, Domain] = {}
    for path, desc in (raw or {}).items():
        if path not in base:
            raise ConfigError(f"search space path {path!r} is not a config key")
        kind = desc.get("type", "float")
        if kind == "categorical":
            choices = tuple(desc.get("choices", ()))
            if len(choices) < 1:
                raise ConfigError(f"search space {path!r}: empty categorical set")
            space[path] = Domain(kind="categorical", choices=choices)
        elif kind in ("float", "int"):
            low, high = desc.get("low"), desc.get("high")
            if low is None or high is None or not low < high:
                raise ConfigError(f"search space {path!r}: need low < high")
            if desc.get("log") and low <= 0:
                raise ConfigError(f"search space {path!r}: log scale needs low > 0")
            space[path] = Domain(kind=kind, low=low, high=high, log=bool(desc.get("log", False)))
        else:
            raise ConfigError(f"search space {path!r}: unknown domain type {kind!r}")
    return space


class RandomSampler:
    """Uniform sampling over each domain, independent across trials."""

    def __call__(self, space: dict[str, Domain], rng: np.random.Generator,
                 history=None) -> dict:
        return {path: domain.sample(rng) for path, domain in space.items()}


SAMPLERS = {"random": RandomSampler()}


def register_sampler(name: str, sampler) -> None:
    SAMPLERS[name] = sampler


def sample(space: dict[str, Domain], rng: np.random.Generator,
           sampler: str = "random", history=None) -> dict:
    return SAMPLERS[sampler](space, rng, history)


@dataclass
class Trial:
    index: int
    assignment: dict
    fold_objectives: list = field(default_factory=list)
    objective: float | None = None
    state: str = "running"  # running | complete | failed
    error: str | None = None

    def to_record(self) -> dict:
        return {"index": self.index, "assignment": self.assignment,
                "fold_objectives": self.fold_objectives, "objective": self.objective,
                "state": self.state, "error": self.error}

    @classmethod
    def from_record(cls, rec: dict) -> "Trial":
        return cls(index=rec["index"], assignment=rec["assignment"],
                   fold_objectives=rec.get("fold_objectives") or [],
                   objective=rec.get("objective"), state=rec["state"],
                   error=rec.get("error"))


@dataclass
class Study:
    direction: str  # maximize | minimize
    trials: list = field(default_factory=list)
    path: Path | None = None

    @property
    def complete_trials(self) -> list:
        return [t for t in self.trials if t.state == "complete" and t.objective is not None]

    @property
    def best_trial(self) -> Trial:
        done = self.complete_trials
        if not done:
            raise NoCompleteTrial()
        key = (max if self.direction == "maximize" else min)(
            t.objective for t in done)
        # ties break toward the earliest trial
        return next(t for t in done if t.objective == key)

    def append(self, trial: Trial) -> None:
        self.trials.append(trial)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(trial.to_record()) + "\n")

    @classmethod
    def load(cls, path, direction: str) -> "Study":
        study = cls(direction=direction, path=Path(path))
        if study.path.is_file():
            for line in study.path.read_text().splitlines():
                if not line.strip():
                    continue
                trial = Trial.from_record(json.loads(line))
                if trial.state in ("complete", "failed"):
                    study.trials.append(trial)
        return study


def _aggregate(values, how: str) -> float | None:
    values = [v for v in values if v is not None]
    if not values:
        return None
    return float(np.median(values)) if how == "median" else float(np.mean(values))


def _default_runner(trial_cfg: Config, trial_index: int, experiment_dir) -> list:
    results = run_standard(trial_cfg, trial=trial_index, experiment_dir=experiment_dir)
    return [r.objective_value for r in results]


def run_experiment(cfg: Config, space: dict[str, Domain] | None = None,
                   n_trials: int | None = None, direction: str | None = None,
                   experiment_dir=None, runner=None, sampler: str = "random") -> Study:
    """Run (or resume) a study of ``n_trials`` sampled configurations.

    ``runner(trial_cfg, trial_index, experiment_dir) -> fold objective values``
    defaults to the real K-fold training; tests inject deterministic stubs.
    Failed trials are recorded and the study continues.
    """
    validate(cfg)
    if space is None:
        space = parse_search_space(cfg.get("experiment.search_space") or {}, cfg)
    n_trials = int(n_trials if n_trials is not None else cfg["experiment.n_trials"])
    if n_trials < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials}")
    direction = direction or cfg["experiment.direction"]
    if experiment_dir is None:
        experiment_dir = Path(cfg["experiment.output_root"]) / cfg["experiment.name"]
    experiment_dir = Path(experiment_dir)
    experiment_dir.mkdir(parents=True, exist_ok=True)
    runner = runner or _default_runner
    aggregate_how = cfg["experiment.objective_aggregate"]
    seed = int(cfg["training.seed"])

    study = Study.load(experiment_dir / "study.log", direction)
    start = len(study.trials)
    if start:
        log.info("resuming study with %d recorded trials", start)

    for index in range(start, n_trials):
        rng = np.random.default_rng([seed, 7919, index])  # per-index stream: resume-stable
        assignment = sample(space, rng, sampler, history=study.trials)
        trial = Trial(index=index, assignment=assignment)
        trial_cfg = cfg.with_values(assignment) if assignment else cfg
        try:
            fold_values = list(runner(trial_cfg, index, experiment_dir))
            trial.fold_objectives = [None if v is None else float(v) for v in fold_values]
            trial.objective = _aggregate(trial.fold_objectives, aggregate_how)
            trial.state = "complete" if trial.objective is not None else "failed"
            if trial.state == "failed":
                trial.error = "no fold produced a defined objective"
        except Exception as exc:
            trial.state = "failed"
            trial.error = f"{type(exc).__name__}: {exc}"
            log.warning("trial %d failed: %s", index, trial.error)
        study.append(trial)

    if not study.complete_trials:
        raise AllTrialsFailed(n_trials)
    return study


def best_config(study: Study, base_cfg: Config) -> Config:
    """Base config merged with the best complete trial's assignment."""
    best = study.best_trial
    if not best.assignment:
        return base_cfg
    return base_cfg.with_values(best.assignment)
