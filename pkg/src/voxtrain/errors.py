"""Exception hierarchy for the voxtrain pipeline.

Errors are grouped by pipeline stage so the CLI can map them to exit codes:
config errors -> 2, data errors -> 3, everything else -> 1.
"""


class VoxtrainError(Exception):
    """Base class for all errors raised by this package."""


# --- config ---------------------------------------------------------------


class ConfigError(VoxtrainError):
    pass


class UnknownKey(ConfigError):
    def __init__(self, path: str):
        self.path = path
        super().__init__(f"unknown config key: {path!r} (not present in the base config)")


class TypeMismatch(ConfigError):
    def __init__(self, path: str, expected: str, found: str):
        self.path = path
        super().__init__(f"config key {path!r}: cannot replace {expected} with {found}")


class ParseError(ConfigError):
    def __init__(self, path, line=None, column=None, detail=""):
        self.line = line
        self.column = column
        loc = f" at line {line}, column {column}" if line is not None else ""
        super().__init__(f"cannot parse config file {path}{loc}: {detail}")


class ValidationError(ConfigError):
    """Carries every violated invariant, not just the first."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__(
            "invalid config:\n" + "\n".join(f"  - {v}" for v in self.violations)
        )


# --- data / manifest ------------------------------------------------------


class DataError(VoxtrainError):
    pass


class MissingColumn(DataError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"manifest CSV is missing required column {name!r}")


class BadSplitValue(DataError):
    def __init__(self, row: int, value: str):
        self.row = row
        super().__init__(f"row {row}: Split must be 'train_val' or 'test', got {value!r}")


class DuplicatePatientID(DataError):
    def __init__(self, patient_id: str):
        self.patient_id = patient_id
        super().__init__(f"duplicate PatientID {patient_id!r}")


class MissingVolume(DataError):
    def __init__(self, patient_id: str, modality: str):
        self.patient_id = patient_id
        self.modality = modality
        super().__init__(f"patient {patient_id!r}: no volume file for modality {modality!r}")


class ShapeMismatch(DataError):
    def __init__(self, context, found, expected):
        self.context = context
        super().__init__(
            f"{context}: shape {tuple(found)} does not match expected {tuple(expected)}"
        )


class NonNumericFeature(DataError):
    def __init__(self, row: int, column: str, value: str):
        self.row = row
        self.column = column
        super().__init__(f"row {row}, column {column!r}: cannot parse {value!r} as a number")


class EmptyTrainSet(DataError):
    def __init__(self):
        super().__init__("manifest contains no train_val rows")


class TooFewPatients(DataError):
    def __init__(self, n: int, k: int):
        super().__init__(f"cannot split {n} patients into {k} folds")


class UnknownStratVar(DataError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"stratification variable {name!r} is not a known column")


# --- volume files ---------------------------------------------------------


class VolumeIOError(DataError):
    pass


class BadMagic(VolumeIOError):
    def __init__(self, path):
        super().__init__(f"{path}: not an npy file (bad magic bytes)")


class UnsupportedDtype(VolumeIOError):
    def __init__(self, path, descr):
        super().__init__(f"{path}: unsupported element type {descr!r}")


class NotThreeDimensional(VolumeIOError):
    def __init__(self, path, shape):
        super().__init__(f"{path}: expected a 3D array, got shape {tuple(shape)}")


# --- transforms / dataset -------------------------------------------------


class TargetTooLarge(VoxtrainError):
    def __init__(self, target, shape):
        super().__init__(f"crop target {tuple(target)} exceeds volume shape {tuple(shape)}")


class UnknownPatient(VoxtrainError):
    def __init__(self, patient_id: str):
        self.patient_id = patient_id
        super().__init__(f"no patient with id {patient_id!r} in this dataset")


class CacheDirUnwritable(DataError):
    def __init__(self, path, reason=""):
        super().__init__(f"cache directory {path} is not writable: {reason}")


# --- models ---------------------------------------------------------------


class ModelError(VoxtrainError):
    pass


class InvalidSpec(ModelError):
    def __init__(self, detail: str):
        super().__init__(f"invalid model spec: {detail}")


class InputTooSmall(ModelError):
    def __init__(self, found, minimum):
        super().__init__(
            f"spatial input shape {tuple(found)} is below the architecture minimum {tuple(minimum)}"
        )


# --- training -------------------------------------------------------------


class TrainingError(VoxtrainError):
    pass


class AllMasked(TrainingError):
    def __init__(self):
        super().__init__("no observed label for any endpoint in this batch")


class UnknownName(VoxtrainError):
    def __init__(self, kind: str, name: str, known):
        super().__init__(f"unknown {kind} {name!r}; known: {sorted(known)}")


# --- evaluation -----------------------------------------------------------


class EvaluationError(VoxtrainError):
    pass


class TooFewSamples(EvaluationError):
    def __init__(self, n: int, n_bins: int):
        super().__init__(f"equal-frequency binning needs >= {n_bins} samples, got {n}")


class EmptyGroup(EvaluationError):
    def __init__(self, detail: str = ""):
        super().__init__(f"risk grouping produced an empty group{': ' + detail if detail else ''}")


class NoCompletedFolds(EvaluationError):
    def __init__(self, run_root):
        super().__init__(f"no completed fold directories found under {run_root}")


class WeightsMissing(EvaluationError):
    def __init__(self, fold: int, path):
        self.fold = fold
        super().__init__(f"fold {fold}: weights file {path} is missing")


# --- hpo ------------------------------------------------------------------


class HPOError(VoxtrainError):
    pass


class AllTrialsFailed(HPOError):
    def __init__(self, n: int):
        super().__init__(f"all {n} trials failed")


class NoCompleteTrial(HPOError):
    def __init__(self):
        super().__init__("study contains no complete trial")
