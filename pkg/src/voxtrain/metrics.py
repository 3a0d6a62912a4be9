"""Evaluation metrics for binary and time-to-event predictions.

All functions operate on plain arrays of observed entries (masking happens
at the report layer) and return ``None`` where a metric is undefined --
degenerate labels, no comparable pairs -- so downstream CSVs show an empty
cell instead of a misleading zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyGroup, TooFewSamples


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their midrank."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=float)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j + 2) / 2.0  # mean of ranks i+1 .. j+1
        i = j + 1
    return ranks


def auc(preds, labels) -> float | None:
    """Area under the ROC curve via the rank-sum identity.

    Equals the probability that a random positive outscores a random
    negative, with half credit for ties. None when a class is absent.
    """
    preds = np.asarray(preds, dtype=float)
    labels = np.asarray(labels, dtype=float)
    pos = labels == 1.0
    n_pos = int(pos.sum())
    n_neg = int(len(labels) - n_pos)
    if n_pos == 0 or n_neg == 0:
        return None
    r_pos = _average_ranks(preds)[pos].sum()
    return float((r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def youden_threshold(preds, labels) -> float | None:
    """Threshold maximizing sensitivity + specificity - 1 under pred >= t.

    Candidates are the observed prediction values plus +inf (reject-all);
    ties resolve to the smallest threshold. None for degenerate labels.
    """
    preds = np.asarray(preds, dtype=float)
    labels = np.asarray(labels, dtype=float)
    n_pos = float((labels == 1.0).sum())
    n_neg = float((labels == 0.0).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    best_t, best_j = None, -np.inf
    for t in np.concatenate([np.unique(preds), [np.inf]]):
        decided = preds >= t
        sens = float((decided & (labels == 1.0)).sum()) / n_pos
        spec = float((~decided & (labels == 0.0)).sum()) / n_neg
        j = sens + spec - 1.0
        if j > best_j:
            best_j, best_t = j, float(t)
    return best_t


def threshold_metrics(preds, labels, threshold_mode: str = "youden",
                      fixed_threshold: float = 0.5) -> dict:
    """Confusion-derived metrics under pred >= t; t fixed or Youden-derived.

    Metrics whose denominator is zero come back as None.
    """
    preds = np.asarray(preds, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if threshold_mode == "youden":
        t = youden_threshold(preds, labels)
        if t is None:
            return {"threshold": None, "accuracy": None, "f1": None,
                    "precision": None, "recall": None,
                    "tp": None, "fp": None, "tn": None, "fn": None}
    else:
        t = float(fixed_threshold)
    decided = preds >= t
    tp = int((decided & (labels == 1.0)).sum())
    fp = int((decided & (labels == 0.0)).sum())
    fn = int((~decided & (labels == 1.0)).sum())
    tn = int((~decided & (labels == 0.0)).sum())
    n = tp + fp + fn + tn
    precision = tp / (tp + fp) if (tp + fp) > 0 else None
    recall = tp / (tp + fn) if (tp + fn) > 0 else None
    f1 = None
    if precision is not None and recall is not None and (precision + recall) > 0:
        f1 = 2 * precision * recall / (precision + recall)
    return {"threshold": t, "accuracy": (tp + tn) / n if n else None,
            "f1": f1, "precision": precision, "recall": recall,
            "tp": tp, "fp": fp, "tn": tn, "fn": fn}


def _fixed_width_bins(preds: np.ndarray, n_bins: int) -> np.ndarray:
    # bins [i/n, (i+1)/n), last bin closed at 1
    return np.minimum((preds * n_bins).astype(int), n_bins - 1)


def expected_calibration_error(preds, labels, n_bins: int = 10) -> tuple[float, float]:
    """(ECE, MCE) over fixed-width bins on [0, 1]; empty bins are skipped.

    ECE weights each bin's |mean label - mean prediction| gap by occupancy;
    MCE takes the largest gap.
    """
    preds = np.asarray(preds, dtype=float)
    labels = np.asarray(labels, dtype=float)
    idx = _fixed_width_bins(preds, n_bins)
    counts = np.bincount(idx, minlength=n_bins)
    sum_pred = np.bincount(idx, weights=preds, minlength=n_bins)
    sum_label = np.bincount(idx, weights=labels, minlength=n_bins)
    occupied = counts > 0
    gaps = np.abs(sum_label[occupied] / counts[occupied] - sum_pred[occupied] / counts[occupied])
    weights = counts[occupied] / len(preds)
    return float((weights * gaps).sum()), float(gaps.max())


def adaptive_calibration_error(preds, labels, n_bins: int = 10) -> float:
    """Unweighted mean gap over equal-frequency bins (sizes differ by <= 1)."""
    preds = np.asarray(preds, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if len(preds) < n_bins:
        raise TooFewSamples(len(preds), n_bins)
    order = np.argsort(preds, kind="mergesort")
    gaps = [abs(labels[g].mean() - preds[g].mean()) for g in np.array_split(order, n_bins)]
    return float(np.mean(gaps))


def calibration_errors(preds, labels, n_bins: int = 10) -> dict:
    ece, mce = expected_calibration_error(preds, labels, n_bins)
    return {"ece": ece, "mce": mce, "ace": adaptive_calibration_error(preds, labels, n_bins)}


def brier(preds, labels) -> float | None:
    """Mean squared error of probabilistic predictions."""
    preds = np.asarray(preds, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if len(preds) == 0:
        return None
    return float(np.mean((preds - labels) ** 2))


def c_index(risks, times, events) -> float | None:
    """Concordance over pairs (i, j) with t_i < t_j and event_i = 1.

    A pair is concordant when the earlier subject carries the higher risk;
    tied risks earn half credit. None when no pair is comparable.
    """
    risks = np.asarray(risks, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=float)
    comparable = (times[:, None] < times[None, :]) & (events[:, None] == 1.0)
    n_comparable = int(comparable.sum())
    if n_comparable == 0:
        return None
    concordant = int((comparable & (risks[:, None] > risks[None, :])).sum())
    tied = int((comparable & (risks[:, None] == risks[None, :])).sum())
    return float((concordant + 0.5 * tied) / n_comparable)


@dataclass(frozen=True)
class KMCurve:
    """Kaplan-Meier step function: S(t) right after each distinct time."""

    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    n_events: np.ndarray


def kaplan_meier(times, events) -> KMCurve:
    """Product-limit survival estimate; censored subjects leave the risk set
    after their recorded time."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=float)
    if len(times) == 0:
        raise EmptyGroup("no subjects")
    distinct = np.unique(times)
    surv, out_s, out_r, out_d = 1.0, [], [], []
    for t in distinct:
        n_at_risk = int((times >= t).sum())
        d = int(((times == t) & (events == 1.0)).sum())
        if d > 0:
            surv *= 1.0 - d / n_at_risk
        out_s.append(surv)
        out_r.append(n_at_risk)
        out_d.append(d)
    return KMCurve(times=distinct, survival=np.array(out_s),
                   at_risk=np.array(out_r), n_events=np.array(out_d))


def km_risk_groups(risks, times, events, n_groups: int = 2) -> dict[str, KMCurve]:
    """KM curves per predicted-risk group (quantile split, median for 2)."""
    risks = np.asarray(risks, dtype=float)
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=float)
    edges = np.quantile(risks, np.linspace(0, 1, n_groups + 1)[1:-1])
    assignment = np.searchsorted(edges, risks, side="left")
    curves = {}
    for g in range(n_groups):
        member = assignment == g
        if not member.any():
            raise EmptyGroup(f"group {g} of {n_groups}")
        curves[f"group_{g}"] = kaplan_meier(times[member], events[member])
    return curves
