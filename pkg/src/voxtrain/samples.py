"""Model input containers: one Sample per patient, Batches for iteration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Sample:
    """Per-patient model input.

    ``image`` is the channel-stacked (C, H, W, D) float32 array, or None in
    tabular-only mode. ``labels`` holds the binary label or the event time
    per endpoint; ``events`` the event indicator (zero for binary slots);
    ``mask`` is False where the endpoint is unobserved and must not reach
    losses or metrics.
    """

    patient_id: str
    image: np.ndarray | None
    tabular: np.ndarray  # (F,) float32
    labels: np.ndarray  # (E,) float32
    events: np.ndarray  # (E,) float32
    mask: np.ndarray  # (E,) bool

    def copy(self) -> "Sample":
        return Sample(
            patient_id=self.patient_id,
            image=None if self.image is None else self.image.copy(),
            tabular=self.tabular.copy(),
            labels=self.labels.copy(),
            events=self.events.copy(),
            mask=self.mask.copy(),
        )


@dataclass
class Batch:
    patient_ids: tuple
    images: np.ndarray | None  # (B, C, H, W, D) or None
    tabular: np.ndarray  # (B, F)
    labels: np.ndarray  # (B, E)
    events: np.ndarray  # (B, E)
    masks: np.ndarray  # (B, E) bool

    def __len__(self) -> int:
        return len(self.patient_ids)


def collate(samples) -> Batch:
    """Stack samples along a new leading batch dimension."""
    samples = list(samples)
    images = None
    if samples[0].image is not None:
        images = np.stack([s.image for s in samples]).astype(np.float32)
    return Batch(
        patient_ids=tuple(s.patient_id for s in samples),
        images=images,
        tabular=np.stack([s.tabular for s in samples]).astype(np.float32),
        labels=np.stack([s.labels for s in samples]).astype(np.float32),
        events=np.stack([s.events for s in samples]).astype(np.float32),
        masks=np.stack([s.mask for s in samples]).astype(bool),
    )
