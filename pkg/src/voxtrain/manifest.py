"""Clinical CSV parsing, patient records and stratified K-fold splitting.

The CSV contract: a header row with ``PatientID`` and ``Split`` columns,
one column per binary label, two columns per event label
(``<name>_event`` and ``<name>_<unit>``), plus any configured tabular
feature columns. Label cells equal to the missing indicator (default -1)
are kept but flagged unobserved. The volume tree holds one directory per
patient containing ``<Modality>.npy`` files, all with the same shape.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config
from .errors import (
    BadSplitValue,
    DataError,
    DuplicatePatientID,
    EmptyTrainSet,
    MissingColumn,
    MissingVolume,
    NonNumericFeature,
    NotThreeDimensional,
    ShapeMismatch,
    TooFewPatients,
    UnknownStratVar,
)
from . import npyio

TRAIN_VAL = "train_val"
TEST = "test"


@dataclass(frozen=True)
class LabelSpec:
    name: str
    kind: str  # "binary" | "event"
    unit: str | None = None

    def __post_init__(self):
        if self.kind not in ("binary", "event"):
            raise DataError(f"label {self.name!r}: kind must be binary or event")
        if self.kind == "event" and not self.unit:
            raise DataError(f"label {self.name!r}: event labels need a time unit")

    @property
    def columns(self) -> tuple[str, ...]:
        if self.kind == "binary":
            return (self.name,)
        return (f"{self.name}_event", f"{self.name}_{self.unit}")

    @classmethod
    def from_config(cls, spec: dict) -> "LabelSpec":
        return cls(name=spec["name"], kind=spec["kind"], unit=spec.get("unit"))


def label_specs_from_config(cfg: Config) -> tuple[LabelSpec, ...]:
    return tuple(LabelSpec.from_config(s) for s in cfg["data.labels"])


@dataclass(frozen=True)
class LabelValue:
    value: float  # binary label, or event time
    observed: bool
    event: float = 0.0  # event indicator, event endpoints only


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    split: str
    labels: dict = field(default_factory=dict)  # name -> LabelValue
    tabular: tuple = ()  # floats, None where the cell was empty
    volume_paths: dict = field(default_factory=dict)  # modality -> Path

    def __eq__(self, other):
        return (
            isinstance(other, PatientRecord)
            and self.patient_id == other.patient_id
            and self.split == other.split
            and self.labels == other.labels
            and self.tabular == other.tabular
            and self.volume_paths == other.volume_paths
        )


@dataclass(frozen=True)
class Manifest:
    records: tuple
    label_specs: tuple
    tabular_feature_names: tuple
    volume_shape: tuple | None  # None in tabular-only mode

    def __len__(self) -> int:
        return len(self.records)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(r.patient_id for r in self.records)

    def record(self, patient_id: str) -> PatientRecord:
        for r in self.records:
            if r.patient_id == patient_id:
                return r
        raise KeyError(patient_id)

    def subset(self, ids) -> "Manifest":
        """Records for the given ids, kept in manifest order."""
        wanted = set(ids)
        return Manifest(
            records=tuple(r for r in self.records if r.patient_id in wanted),
            label_specs=self.label_specs,
            tabular_feature_names=self.tabular_feature_names,
            volume_shape=self.volume_shape,
        )


def _is_missing(cell: str, indicator) -> bool:
    try:
        return float(cell) == float(indicator)
    except (TypeError, ValueError):
        return False


def _parse_label(row_idx, spec: LabelSpec, row: dict, indicator) -> LabelValue:
    if spec.kind == "binary":
        cell = row[spec.name].strip()
        if _is_missing(cell, indicator):
            return LabelValue(value=0.0, observed=False)
        try:
            value = float(cell)
        except ValueError:
            raise NonNumericFeature(row_idx, spec.name, cell) from None
        if value not in (0.0, 1.0):
            raise DataError(
                f"row {row_idx}, label {spec.name!r}: binary labels must be 0, 1 "
                f"or the missing indicator, got {cell!r}"
            )
        return LabelValue(value=value, observed=True)

    event_col, time_col = spec.columns
    event_cell = row[event_col].strip()
    time_cell = row[time_col].strip()
    if _is_missing(event_cell, indicator) or _is_missing(time_cell, indicator):
        return LabelValue(value=0.0, observed=False)
    try:
        event = float(event_cell)
        time = float(time_cell)
    except ValueError:
        raise NonNumericFeature(row_idx, spec.name, f"{event_cell}/{time_cell}") from None
    if event not in (0.0, 1.0):
        raise DataError(f"row {row_idx}, label {spec.name!r}: event indicator must be 0 or 1")
    if time <= 0:
        raise DataError(f"row {row_idx}, label {spec.name!r}: event time must be > 0")
    return LabelValue(value=time, observed=True, event=event)


def load_manifest(csv_path, data_root, cfg: Config) -> Manifest:
    """Parse and fully validate the clinical CSV plus the volume tree."""
    specs = label_specs_from_config(cfg)
    modalities = list(cfg["data.image_types"] or [])
    features = list(cfg["data.tabular_features"] or [])
    indicator = cfg["data.missing_indicator"]
    data_root = Path(data_root)

    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        required = ["PatientID", "Split"]
        for spec in specs:
            required.extend(spec.columns)
        required.extend(features)
        for col in required:
            if col not in header:
                raise MissingColumn(col)
        rows = list(reader)

    records = []
    seen: set[str] = set()
    volume_shape: tuple | None = None
    for i, row in enumerate(rows, start=2):  # header is line 1
        pid = row["PatientID"].strip()
        if pid in seen:
            raise DuplicatePatientID(pid)
        seen.add(pid)
        split = row["Split"].strip()
        if split not in (TRAIN_VAL, TEST):
            raise BadSplitValue(i, split)

        labels = {spec.name: _parse_label(i, spec, row, indicator) for spec in specs}

        tabular = []
        for col in features:
            cell = row[col].strip()
            if cell == "" or cell.lower() == "nan":
                tabular.append(None)
                continue
            try:
                tabular.append(float(cell))
            except ValueError:
                raise NonNumericFeature(i, col, cell) from None

        volume_paths = {}
        for modality in modalities:
            path = data_root / pid / f"{modality}.npy"
            if not path.is_file():
                raise MissingVolume(pid, modality)
            shape = npyio.peek_shape(path)
            if len(shape) != 3:
                raise NotThreeDimensional(path, shape)
            if volume_shape is None:
                volume_shape = shape
            elif shape != volume_shape:
                raise ShapeMismatch(f"patient {pid!r}, modality {modality!r}", shape, volume_shape)
            volume_paths[modality] = path

        records.append(PatientRecord(
            patient_id=pid,
            split=split,
            labels=labels,
            tabular=tuple(tabular),
            volume_paths=volume_paths,
        ))

    return Manifest(
        records=tuple(records),
        label_specs=specs,
        tabular_feature_names=tuple(features),
        volume_shape=volume_shape,
    )


def validate_dataset(csv_path, data_root, cfg: Config) -> list[str]:
    """Linter-style check of CSV and volume tree; returns every violation
    instead of stopping at the first one (unlike load_manifest)."""
    problems: list[str] = []
    csv_path = Path(csv_path)
    data_root = Path(data_root)
    if not csv_path.is_file():
        return [f"clinical CSV not found: {csv_path}"]
    try:
        specs = label_specs_from_config(cfg)
    except DataError as exc:
        return [str(exc)]
    modalities = list(cfg["data.image_types"] or [])
    features = list(cfg["data.tabular_features"] or [])
    indicator = cfg["data.missing_indicator"]

    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        required = ["PatientID", "Split"]
        for spec in specs:
            required.extend(spec.columns)
        required.extend(features)
        missing_cols = [c for c in required if c not in header]
        problems.extend(str(MissingColumn(c)) for c in missing_cols)
        rows = list(reader)

    seen: set[str] = set()
    volume_shape: tuple | None = None
    for i, row in enumerate(rows, start=2):
        pid = (row.get("PatientID") or "").strip()
        if "PatientID" in header:
            if pid in seen:
                problems.append(str(DuplicatePatientID(pid)))
            seen.add(pid)
        if "Split" in header and row["Split"].strip() not in (TRAIN_VAL, TEST):
            problems.append(str(BadSplitValue(i, row["Split"].strip())))
        for spec in specs:
            if any(c in missing_cols for c in spec.columns):
                continue
            try:
                _parse_label(i, spec, row, indicator)
            except DataError as exc:
                problems.append(str(exc))
        for col in features:
            if col in missing_cols:
                continue
            cell = row[col].strip()
            if cell and cell.lower() != "nan":
                try:
                    float(cell)
                except ValueError:
                    problems.append(str(NonNumericFeature(i, col, cell)))
        for modality in modalities:
            path = data_root / pid / f"{modality}.npy"
            if not path.is_file():
                problems.append(str(MissingVolume(pid, modality)))
                continue
            try:
                shape = npyio.peek_shape(path)
            except DataError as exc:
                problems.append(str(exc))
                continue
            if len(shape) != 3:
                problems.append(str(NotThreeDimensional(path, shape)))
            elif volume_shape is None:
                volume_shape = shape
            elif shape != volume_shape:
                problems.append(str(ShapeMismatch(
                    f"patient {pid!r}, modality {modality!r}", shape, volume_shape)))
    return problems


def split_train_test(m: Manifest) -> tuple[Manifest, Manifest]:
    """Partition by the Split column; raises EmptyTrainSet when no train_val rows."""
    train = tuple(r for r in m.records if r.split == TRAIN_VAL)
    test = tuple(r for r in m.records if r.split == TEST)
    if not train:
        raise EmptyTrainSet()
    make = lambda recs: Manifest(recs, m.label_specs, m.tabular_feature_names, m.volume_shape)
    return make(train), make(test)


def _stratum_value(record: PatientRecord, var: str, m: Manifest):
    """Value of one stratification variable; unobserved labels get their own stratum."""
    for spec in m.label_specs:
        if spec.name == var:
            lv = record.labels[var]
            if not lv.observed:
                return "missing"
            # event endpoints stratify on the event indicator, not the time
            return lv.event if spec.kind == "event" else lv.value
    if var in m.tabular_feature_names:
        v = record.tabular[m.tabular_feature_names.index(var)]
        return "missing" if v is None else v
    raise UnknownStratVar(var)


def stratified_kfold(m: Manifest, k: int, strat_vars, seed: int):
    """K-fold split of the train_val patients, balanced within joint strata.

    Every patient lands in exactly one validation fold; fold sizes differ by
    at most one, and so do per-fold counts within each joint stratum of the
    stratification variables. Deterministic given the seed.

    Returns a list of K ``(train_ids, val_ids)`` pairs.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    pool = [r for r in m.records if r.split == TRAIN_VAL]
    if not pool:  # fall back to all records: caller may pass a pre-split manifest
        pool = list(m.records)
    if len(pool) < k:
        raise TooFewPatients(len(pool), k)

    strata: dict = {}
    for r in pool:
        key = tuple(_stratum_value(r, v, m) for v in (strat_vars or []))
        strata.setdefault(key, []).append(r.patient_id)

    rng = np.random.default_rng(seed)
    fold_of: dict[str, int] = {}
    sizes = np.zeros(k, dtype=int)
    # big strata first; greedy remainder placement keeps global sizes within 1
    for key in sorted(strata, key=lambda s: (-len(strata[s]), repr(s))):
        members = list(strata[key])
        rng.shuffle(members)
        base, extra = divmod(len(members), k)
        pos = 0
        for _ in range(base):
            for fold in range(k):
                fold_of[members[pos]] = fold
                sizes[fold] += 1
                pos += 1
        if extra:
            order = rng.permutation(k)
            chosen = sorted(order, key=lambda f: (sizes[f], list(order).index(f)))[:extra]
            for fold in chosen:
                fold_of[members[pos]] = fold
                sizes[fold] += 1
                pos += 1

    all_ids = [r.patient_id for r in pool]
    folds = []
    for fold in range(k):
        val = [pid for pid in all_ids if fold_of[pid] == fold]
        train = [pid for pid in all_ids if fold_of[pid] != fold]
        folds.append((train, val))
    return folds


def impute_values(m: Manifest, ids=None) -> dict[str, float]:
    """Per-feature means over the given patients (defaults to all), for filling
    missing tabular cells. Features with no observed value fall back to 0."""
    wanted = set(ids) if ids is not None else None
    out = {}
    for j, name in enumerate(m.tabular_feature_names):
        values = [
            r.tabular[j]
            for r in m.records
            if r.tabular[j] is not None and (wanted is None or r.patient_id in wanted)
        ]
        out[name] = float(np.mean(values)) if values else 0.0
        if math.isnan(out[name]):
            out[name] = 0.0
    return out
