"""Dataset assembly: caching strategies, patient lookup and batch iteration.

Four strategies trade memory for speed. ``standard`` recomputes the
deterministic transform chain on every access; ``cache`` holds every
preprocessed volume in RAM; ``smartcache`` holds a sliding fraction that is
refreshed between epochs; ``persistent`` memoizes preprocessed volumes on
disk, keyed by the plan digest and validated against the source files.
Stochastic augmentation always runs per access in the train stage, on top
of whatever the cache returns.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import npyio, transforms
from .config import Config
from .errors import CacheDirUnwritable, UnknownPatient
from .manifest import Manifest, impute_values
from .samples import Batch, Sample, collate

log = logging.getLogger(__name__)

_CACHE_MAGIC = b"VXCACHE1"


@dataclass(frozen=True)
class CacheStrategy:
    kind: str = "standard"  # standard | cache | smartcache | persistent
    fraction: float = 1.0  # smartcache only
    cache_dir: Path | None = None  # persistent only
    refresh_count: int = 0  # smartcache items replaced per epoch; 0 = ceil(cached/4)

    @classmethod
    def from_config(cls, cfg: Config) -> "CacheStrategy":
        cache_dir = cfg.get("dataset.cache_dir") or None
        return cls(
            kind=cfg["dataset.strategy"],
            fraction=float(cfg.get("dataset.cache_fraction", 1.0)),
            cache_dir=Path(cache_dir) if cache_dir else None,
            refresh_count=int(cfg.get("dataset.smartcache_refresh", 0)),
        )


def _source_fingerprint(volume_paths: dict) -> list:
    out = []
    for modality in sorted(volume_paths):
        st = os.stat(volume_paths[modality])
        out.append([modality, st.st_size, st.st_mtime_ns])
    return out


class VolumeDataset:
    """Samples for one cohort, one stage, one transform plan."""

    def __init__(self, manifest: Manifest, plan: transforms.TransformPlan,
                 strategy: CacheStrategy, stage: str, impute: dict | None = None):
        if stage not in ("train", "eval"):
            raise ValueError(f"stage must be 'train' or 'eval', got {stage!r}")
        self.manifest = manifest
        self.plan = plan
        self.strategy = strategy
        self.stage = stage
        self.impute = impute if impute is not None else impute_values(manifest)
        self.deterministic_compute_count = 0
        self._event_endpoints = tuple(s.kind == "event" for s in manifest.label_specs)
        self._index = {r.patient_id: r for r in manifest.records}

        self._memory: dict[str, np.ndarray] = {}
        self._window_start = 0
        self._n_cached = 0
        if plan.modalities and strategy.kind in ("cache", "smartcache"):
            n = len(manifest)
            self._n_cached = n if strategy.kind == "cache" else min(n, math.ceil(strategy.fraction * n))
            self._fill_window()
        elif plan.modalities and strategy.kind == "persistent":
            if strategy.cache_dir is None:
                raise CacheDirUnwritable("<unset>", "no cache_dir configured")
            self._persist_dir = Path(strategy.cache_dir) / plan.digest()
            try:
                self._persist_dir.mkdir(parents=True, exist_ok=True)
                probe = self._persist_dir / ".writable"
                probe.touch()
                probe.unlink()
            except OSError as exc:
                raise CacheDirUnwritable(strategy.cache_dir, str(exc)) from exc

    def __len__(self) -> int:
        return len(self.manifest)

    @property
    def ids(self) -> tuple[str, ...]:
        return self.manifest.ids

    # -- deterministic image, through the configured cache --------------------

    def _compute_image(self, record) -> np.ndarray:
        self.deterministic_compute_count += 1
        volumes = {m: npyio.read_volume(p, m).data for m, p in record.volume_paths.items()}
        return transforms.deterministic_image(volumes, self.plan)

    def _cached_window_ids(self):
        n = len(self.manifest)
        return [self.manifest.ids[(self._window_start + i) % n] for i in range(self._n_cached)]

    def _fill_window(self):
        wanted = set(self._cached_window_ids())
        for pid in list(self._memory):
            if pid not in wanted:
                del self._memory[pid]
        for pid in wanted:
            if pid not in self._memory:
                self._memory[pid] = self._compute_image(self._index[pid])

    def _persist_path(self, pid: str) -> Path:
        return self._persist_dir / f"{pid}.bin"

    def _persist_load(self, record) -> np.ndarray | None:
        path = self._persist_path(record.patient_id)
        if not path.is_file():
            return None
        try:
            blob = path.read_bytes()
            if not blob.startswith(_CACHE_MAGIC):
                return None
            digest, blob = blob[-32:], blob[:-32]
            if hashlib.sha256(blob).digest() != digest:
                return None
            off = len(_CACHE_MAGIC)
            (hlen,) = np.frombuffer(blob[off:off + 4], dtype="<u4")
            header = json.loads(blob[off + 4:off + 4 + int(hlen)].decode())
            if header["source"] != _source_fingerprint(record.volume_paths):
                return None
            payload = blob[off + 4 + int(hlen):]
            arr = np.frombuffer(payload, dtype=header["dtype"]).reshape(header["shape"])
            return np.ascontiguousarray(arr, dtype=np.float32)
        except (OSError, ValueError, KeyError, json.JSONDecodeError):
            return None  # corrupt entry: recompute below

    def _persist_store(self, record, img: np.ndarray):
        header = json.dumps({
            "shape": list(img.shape),
            "dtype": "<f4",
            "source": _source_fingerprint(record.volume_paths),
        }).encode()
        body = (_CACHE_MAGIC + struct.pack("<I", len(header))
                + header + img.astype("<f4", copy=False).tobytes())
        body += hashlib.sha256(body).digest()
        path = self._persist_path(record.patient_id)
        tmp = path.with_suffix(f".tmp{os.getpid()}")
        tmp.write_bytes(body)
        os.replace(tmp, path)

    def _deterministic(self, record) -> np.ndarray | None:
        if not self.plan.modalities:
            return None
        pid = record.patient_id
        if self.strategy.kind in ("cache", "smartcache") and pid in self._memory:
            return self._memory[pid]
        if self.strategy.kind == "persistent":
            img = self._persist_load(record)
            if img is None:
                img = self._compute_image(record)
                self._persist_store(record, img)
            return img
        return self._compute_image(record)

    # -- sample assembly -------------------------------------------------------

    def _assemble(self, record, augment_rng: np.random.Generator | None) -> Sample:
        img = self._deterministic(record)
        if img is not None and self.stage == "train" and augment_rng is not None:
            img = transforms.stochastic_image(img, self.plan, augment_rng)
        tabular = np.array(
            [self.impute[name] if v is None else v
             for name, v in zip(self.manifest.tabular_feature_names, record.tabular)],
            dtype=np.float32,
        )
        labels, events, mask = [], [], []
        for spec in self.manifest.label_specs:
            lv = record.labels[spec.name]
            labels.append(lv.value)
            events.append(lv.event)
            mask.append(lv.observed)
        return Sample(
            patient_id=record.patient_id,
            image=img,
            tabular=tabular,
            labels=np.array(labels, dtype=np.float32),
            events=np.array(events, dtype=np.float32),
            mask=np.array(mask, dtype=bool),
        )

    def sample(self, patient_id: str, rng: np.random.Generator | None = None) -> Sample:
        """Stage-appropriate sample; train stage augments when an rng is given."""
        if patient_id not in self._index:
            raise UnknownPatient(patient_id)
        return self._assemble(self._index[patient_id], rng)

    def get_patient(self, patient_id: str) -> Sample:
        """Deterministic (eval-stage) sample for one patient, any strategy."""
        if patient_id not in self._index:
            raise UnknownPatient(patient_id)
        saved_stage, self.stage = self.stage, "eval"
        try:
            return self._assemble(self._index[patient_id], None)
        finally:
            self.stage = saved_stage

    def end_epoch(self):
        """Advance the smartcache window; no-op for other strategies."""
        if self.strategy.kind != "smartcache" or self._n_cached >= len(self.manifest):
            return
        refresh = self.strategy.refresh_count or math.ceil(self._n_cached / 4)
        self._window_start = (self._window_start + refresh) % len(self.manifest)
        self._fill_window()


def iterate_batches(ds: VolumeDataset, batch_size: int, shuffle: bool = False,
                    rng: np.random.Generator | None = None):
    """One epoch of batches; every sample exactly once, final partial batch kept.

    The same generator drives the shuffle order and the train-stage
    augmentation, so an epoch is reproducible from the generator's seed.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    ids = list(ds.ids)
    if shuffle:
        if rng is None:
            raise ValueError("shuffle=True requires an rng")
        ids = [ids[i] for i in rng.permutation(len(ids))]
    for start in range(0, len(ids), batch_size):
        chunk = ids[start:start + batch_size]
        yield collate([ds.sample(pid, rng) for pid in chunk])


def mixup_batch(batch: Batch, alpha: float, rng: np.random.Generator,
                event_endpoints) -> Batch:
    """Mix each sample with a shuffled partner from the same batch.

    One Beta(alpha, alpha) weight per batch; binary labels mix only where
    both partners are observed, event endpoints keep their original labels.
    """
    b = len(batch)
    lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(b)
    images = batch.images
    if images is not None:
        images = (lam * images + (1.0 - lam) * images[perm]).astype(np.float32)
    tabular = (lam * batch.tabular + (1.0 - lam) * batch.tabular[perm]).astype(np.float32)
    labels = batch.labels.copy()
    masks = batch.masks.copy()
    for e, is_event in enumerate(event_endpoints):
        if is_event:
            continue
        partner = batch.labels[perm, e]
        both = batch.masks[:, e] & batch.masks[perm, e]
        labels[both, e] = lam * batch.labels[both, e] + (1.0 - lam) * partner[both]
        masks[:, e] = both
    return Batch(patient_ids=batch.patient_ids, images=images, tabular=tabular,
                 labels=labels, events=batch.events.copy(), masks=masks)
