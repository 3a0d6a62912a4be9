"""Training losses with missing-label masking.

Every loss sees only observed entries: unobserved positions are dropped by
index selection before any arithmetic, so their gradients are exactly zero
rather than merely multiplied by zero. Binary endpoints support bce, focal,
hill and asl; event endpoints use the negative partial log-likelihood over
the batch risk set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import AllMasked, UnknownName

log = logging.getLogger(__name__)

BINARY_LOSSES = ("bce", "focal", "hill", "asl")
_EPS = 1e-7


@dataclass(frozen=True)
class LossSpec:
    binary: str = "bce"
    focal_gamma: float = 2.0
    asl_gamma_pos: float = 0.0
    asl_gamma_neg: float = 4.0
    asl_margin: float = 0.05
    hill_lambda: float = 1.5

    @classmethod
    def from_config(cls, cfg) -> "LossSpec":
        loss = cfg["training.loss"]
        if loss["binary"] not in BINARY_LOSSES:
            raise UnknownName("binary loss", loss["binary"], BINARY_LOSSES)
        return cls(
            binary=loss["binary"],
            focal_gamma=float(loss["focal_gamma"]),
            asl_gamma_pos=float(loss["asl_gamma_pos"]),
            asl_gamma_neg=float(loss["asl_gamma_neg"]),
            asl_margin=float(loss["asl_margin"]),
            hill_lambda=float(loss["hill_lambda"]),
        )


def binary_loss(logits: torch.Tensor, targets: torch.Tensor, spec: LossSpec,
                pos_weight: float | None = None) -> torch.Tensor:
    """Per-element binary loss from logits; targets may be soft (mixup)."""
    if spec.binary == "bce":
        pw = None if pos_weight is None else torch.as_tensor(pos_weight, dtype=logits.dtype)
        return F.binary_cross_entropy_with_logits(
            logits, targets, reduction="none", pos_weight=pw)

    p = torch.sigmoid(logits).clamp(_EPS, 1.0 - _EPS)
    w_pos = 1.0 if pos_weight is None else pos_weight
    if spec.binary == "focal":
        # -y (1-p)^g log p - (1-y) p^g log(1-p); reduces to bce at g=0
        g = spec.focal_gamma
        return (-targets * w_pos * (1 - p) ** g * torch.log(p)
                - (1 - targets) * p ** g * torch.log(1 - p))
    if spec.binary == "asl":
        # asymmetric loss: probability margin on the negative branch
        pm = (p - spec.asl_margin).clamp(min=_EPS, max=1.0 - _EPS)
        return (-targets * w_pos * (1 - p) ** spec.asl_gamma_pos * torch.log(p)
                - (1 - targets) * pm ** spec.asl_gamma_neg * torch.log(1 - pm))
    if spec.binary == "hill":
        # positive branch is plain log loss; negative branch is the hill-shaped
        # polynomial (lambda - p) * p^2, which de-emphasises confident negatives
        return (-targets * w_pos * torch.log(p)
                + (1 - targets) * (spec.hill_lambda - p) * p ** 2)
    raise UnknownName("binary loss", spec.binary, BINARY_LOSSES)


def nll_event_loss(risks: torch.Tensor, times: torch.Tensor, events: torch.Tensor,
                   masks: torch.Tensor | None = None) -> torch.Tensor:
    """Negative partial log-likelihood of the risk scores on the batch.

    Each event subject i contributes -(r_i - log sum_{t_j >= t_i} e^{r_j});
    tied times share the full risk set (Breslow). The result is the mean over
    event subjects, so it is invariant to adding a constant to all risks.
    A batch without events contributes zero (with a warning).
    """
    if masks is not None:
        risks, times, events = risks[masks], times[masks], events[masks]
    event_idx = torch.nonzero(events > 0.5).flatten()
    if event_idx.numel() == 0:
        log.warning("event-loss batch contains no events; contributing zero")
        return risks.sum() * 0.0
    terms = []
    for i in event_idx:
        at_risk = risks[times >= times[i]]
        terms.append(risks[i] - torch.logsumexp(at_risk, dim=0))
    return -torch.stack(terms).mean()


def masked_loss(outputs: torch.Tensor, labels: torch.Tensor, events: torch.Tensor,
                masks: torch.Tensor, label_specs, loss_spec: LossSpec,
                pos_weights=None) -> torch.Tensor:
    """Mean over endpoints of per-endpoint mean loss on observed entries.

    Endpoints with no observed entry in the batch are excluded from the mean;
    if that leaves nothing, AllMasked is raised so the caller can skip the
    batch. ``pos_weights`` optionally up-weights positives per binary endpoint
    (inverse-frequency imbalance handling).
    """
    if outputs.shape != labels.shape or outputs.shape != masks.shape:
        raise ValueError(
            f"outputs {tuple(outputs.shape)}, labels {tuple(labels.shape)} and "
            f"masks {tuple(masks.shape)} must agree")
    per_endpoint = []
    for e, spec in enumerate(label_specs):
        observed = masks[:, e]
        if not bool(observed.any()):
            continue
        if spec.kind == "event":
            per_endpoint.append(nll_event_loss(
                outputs[observed, e], labels[observed, e], events[observed, e]))
        else:
            pw = None if pos_weights is None else pos_weights[e]
            per_endpoint.append(
                binary_loss(outputs[observed, e], labels[observed, e], loss_spec, pw).mean())
    if not per_endpoint:
        raise AllMasked()
    return torch.stack(per_endpoint).mean()


def inverse_frequency_weights(manifest, label_specs, train_ids) -> list:
    """Positive-class weights n_neg/n_pos per binary endpoint (None for event
    endpoints or degenerate label distributions)."""
    wanted = set(train_ids)
    weights = []
    for spec in label_specs:
        if spec.kind != "binary":
            weights.append(None)
            continue
        values = [r.labels[spec.name].value for r in manifest.records
                  if r.patient_id in wanted and r.labels[spec.name].observed]
        n_pos = sum(1 for v in values if v == 1.0)
        n_neg = len(values) - n_pos
        weights.append(n_neg / n_pos if 0 < n_pos < len(values) else None)
    return weights
