"""Deterministic preprocessing and stochastic augmentation of volumes.

The deterministic chain (per-channel clip/normalize or value mapping,
channel stacking, center crop) is a pure function of the input files and
the plan, which is what makes caching safe. Stochastic transforms run only
on training samples and draw every decision from an explicit generator; the
same spatial transform is applied to all channels of one sample so
modalities stay aligned.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .config import Config
from .errors import ShapeMismatch, TargetTooLarge
from .samples import Sample

# --- elementwise / crop ops -------------------------------------------------


def clip_normalize(v: np.ndarray, a_min, a_max, b_min, b_max) -> np.ndarray:
    """Clip to [a_min, a_max], then map that range linearly onto [b_min, b_max]."""
    if not a_min < a_max or not b_min < b_max:
        raise ValueError("clip/normalize ranges must satisfy a_min < a_max and b_min < b_max")
    x = np.clip(v, a_min, a_max).astype(np.float32)
    return ((x - a_min) / (a_max - a_min) * (b_max - b_min) + b_min).astype(np.float32)


def value_map(v: np.ndarray, mapping) -> np.ndarray:
    """Replace mapped raw values by their weights; everything else becomes 0."""
    out = np.zeros_like(v, dtype=np.float32)
    for raw, weight in mapping.items():
        out[v == float(raw)] = float(weight)
    return out


def _crop_window(shape, target):
    if any(t > s for t, s in zip(target, shape)):
        raise TargetTooLarge(target, shape)
    # window centered on floor(shape/2), ties toward the lower index
    return tuple(s // 2 - t // 2 for s, t in zip(shape, target))


def center_crop(v: np.ndarray, target) -> np.ndarray:
    """Crop the trailing three axes to ``target`` around the volume center."""
    spatial = v.shape[-3:]
    starts = _crop_window(spatial, target)
    sl = tuple(slice(o, o + t) for o, t in zip(starts, target))
    return v[(...,) + sl]


def random_crop(v: np.ndarray, target, rng: np.random.Generator) -> np.ndarray:
    spatial = v.shape[-3:]
    if any(t > s for t, s in zip(target, spatial)):
        raise TargetTooLarge(target, spatial)
    starts = tuple(int(rng.integers(0, s - t + 1)) for s, t in zip(spatial, target))
    sl = tuple(slice(o, o + t) for o, t in zip(starts, target))
    return v[(...,) + sl]


# --- stochastic spatial ops --------------------------------------------------


def flip_x(v: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    """Mirror along the first spatial axis with probability p."""
    if rng.random() < p:
        return np.ascontiguousarray(np.flip(v, axis=-3))
    return v


def _resample(v: np.ndarray, matrix: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """Apply one spatial transform to every channel: trilinear, zero-padded."""
    if np.allclose(matrix, np.eye(3)) and np.allclose(shift, 0.0):
        return v
    spatial = np.asarray(v.shape[-3:], dtype=float)
    center = (spatial - 1.0) / 2.0
    offset = center - matrix @ center + shift
    channels = v if v.ndim == 4 else v[None]
    out = np.stack([
        ndimage.affine_transform(ch, matrix, offset=offset, order=1,
                                 mode="constant", cval=0.0, output=np.float32)
        for ch in channels
    ])
    return out if v.ndim == 4 else out[0]


def affine(v: np.ndarray, translate: float, scale: float, shear: float,
           rng: np.random.Generator) -> np.ndarray:
    """Random translation (fraction of extent), scaling and shear."""
    spatial = np.asarray(v.shape[-3:], dtype=float)
    scales = 1.0 + rng.uniform(-scale, scale, size=3)
    shears = rng.uniform(-shear, shear, size=3)
    shift = rng.uniform(-translate, translate, size=3) * spatial
    m = np.diag(scales)
    m[0, 1] += shears[0]
    m[0, 2] += shears[1]
    m[1, 2] += shears[2]
    return _resample(v, m, shift)


def rotate(v: np.ndarray, max_angle_deg: float, rng: np.random.Generator) -> np.ndarray:
    """Random 3D rotation: one angle per axis, each in +-max_angle_deg."""
    ax, ay, az = np.deg2rad(rng.uniform(-max_angle_deg, max_angle_deg, size=3))
    rx = np.array([[1, 0, 0],
                   [0, math.cos(ax), -math.sin(ax)],
                   [0, math.sin(ax), math.cos(ax)]])
    ry = np.array([[math.cos(ay), 0, math.sin(ay)],
                   [0, 1, 0],
                   [-math.sin(ay), 0, math.cos(ay)]])
    rz = np.array([[math.cos(az), -math.sin(az), 0],
                   [math.sin(az), math.cos(az), 0],
                   [0, 0, 1]])
    return _resample(v, rx @ ry @ rz, np.zeros(3))


def gaussian_noise(v: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma <= 0:
        return v
    return (v + rng.normal(0.0, sigma, size=v.shape)).astype(np.float32)


# --- mixup -------------------------------------------------------------------


def mixup(sample_a: Sample, sample_b: Sample, alpha: float,
          rng: np.random.Generator, event_endpoints, lam: float | None = None) -> Sample:
    """Convex combination of two samples with a Beta(alpha, alpha) weight.

    Binary endpoint labels mix linearly when both are observed and become
    unobserved otherwise. Event endpoints keep sample_a's label and mask
    untouched (times are not convex-mixable); their inputs still mix.
    """
    if sample_a.image is not None and sample_b.image is not None:
        if sample_a.image.shape != sample_b.image.shape:
            raise ShapeMismatch("mixup inputs", sample_b.image.shape, sample_a.image.shape)
    if sample_a.tabular.shape != sample_b.tabular.shape:
        raise ShapeMismatch("mixup tabular inputs", sample_b.tabular.shape, sample_a.tabular.shape)
    if lam is None:
        if alpha <= 0:
            raise ValueError("mixup alpha must be > 0")
        lam = float(rng.beta(alpha, alpha))

    mixed = sample_a.copy()
    if mixed.image is not None:
        mixed.image = (lam * sample_a.image + (1.0 - lam) * sample_b.image).astype(np.float32)
    mixed.tabular = (lam * sample_a.tabular + (1.0 - lam) * sample_b.tabular).astype(np.float32)
    for e, is_event in enumerate(event_endpoints):
        if is_event:
            continue  # label, event flag, mask stay sample_a's
        if sample_a.mask[e] and sample_b.mask[e]:
            mixed.labels[e] = lam * sample_a.labels[e] + (1.0 - lam) * sample_b.labels[e]
        else:
            mixed.mask[e] = False
    return mixed


# --- transform plan ----------------------------------------------------------


@dataclass(frozen=True)
class ChannelPrep:
    clip: tuple | None = None  # (a_min, a_max, b_min, b_max)
    mapping: tuple = ()  # sorted ((raw, weight), ...)


@dataclass(frozen=True)
class TransformPlan:
    modalities: tuple  # channel order
    channel_prep: tuple  # ((modality, ChannelPrep), ...) aligned with modalities
    crop: tuple | None  # deterministic center-crop target
    random_crop_target: tuple | None = None
    flip_x_prob: float = 0.0
    affine_params: tuple | None = None  # (translate, scale, shear)
    rotate_max_deg: float = 0.0
    noise_sigma: float = 0.0
    mixup_alpha: float = 0.0

    def digest(self) -> str:
        """Fingerprint of the deterministic half; keys disk caches."""
        det = {
            "modalities": list(self.modalities),
            "prep": [[m, list(p.clip) if p.clip else None, [list(kv) for kv in p.mapping]]
                     for m, p in self.channel_prep],
            "crop": list(self.crop) if self.crop else None,
        }
        return hashlib.sha256(json.dumps(det, sort_keys=True).encode()).hexdigest()[:16]


def plan_from_config(cfg: Config) -> TransformPlan:
    modalities = tuple(cfg["data.image_types"] or ())
    channels = cfg.get("preprocessing.channels") or {}
    value_maps = cfg.get("preprocessing.value_maps") or {}
    prep = []
    for m in modalities:
        clip = None
        if m in channels:
            c = channels[m]
            clip = (float(c["a_min"]), float(c["a_max"]), float(c["b_min"]), float(c["b_max"]))
        mapping = tuple(sorted((float(k), float(v)) for k, v in (value_maps.get(m) or {}).items()))
        prep.append((m, ChannelPrep(clip=clip, mapping=mapping)))
    crop = cfg.get("preprocessing.crop")
    rc = cfg.get("augmentation.random_crop")
    aff = cfg.get("augmentation.affine") or {}
    return TransformPlan(
        modalities=modalities,
        channel_prep=tuple(prep),
        crop=tuple(int(c) for c in crop) if crop else None,
        random_crop_target=tuple(int(c) for c in rc) if rc else None,
        flip_x_prob=float(cfg["augmentation.flip_prob"]) if cfg.get("augmentation.flip_x") else 0.0,
        affine_params=(float(aff.get("translate", 0.0)), float(aff.get("scale", 0.0)),
                       float(aff.get("shear", 0.0))) if aff.get("enabled") else None,
        rotate_max_deg=float(cfg["augmentation.rotate.max_angle_deg"])
        if cfg.get("augmentation.rotate.enabled") else 0.0,
        noise_sigma=float(cfg.get("augmentation.gaussian_noise_sigma", 0.0)),
        mixup_alpha=float(cfg.get("augmentation.mixup_alpha", 0.0)),
    )


def deterministic_image(volumes: dict, plan: TransformPlan) -> np.ndarray:
    """Raw per-modality volumes -> preprocessed, channel-stacked (C, H, W, D).

    Pure given its inputs; identical across train/val/test stages.
    """
    channels = []
    for modality, prep in plan.channel_prep:
        data = np.asarray(volumes[modality], dtype=np.float32)
        if prep.clip is not None:
            data = clip_normalize(data, *prep.clip)
        if prep.mapping:
            data = value_map(data, dict(prep.mapping))
        channels.append(data)
    img = np.stack(channels).astype(np.float32)
    if plan.crop is not None:
        img = np.ascontiguousarray(center_crop(img, plan.crop))
    return img


def stochastic_image(img: np.ndarray, plan: TransformPlan, rng: np.random.Generator) -> np.ndarray:
    """Training-only augmentation chain; draws all decisions from ``rng``."""
    if plan.random_crop_target is not None:
        img = np.ascontiguousarray(random_crop(img, plan.random_crop_target, rng))
    if plan.flip_x_prob > 0:
        img = flip_x(img, plan.flip_x_prob, rng)
    if plan.affine_params is not None:
        img = affine(img, *plan.affine_params, rng)
    if plan.rotate_max_deg > 0:
        img = rotate(img, plan.rotate_max_deg, rng)
    if plan.noise_sigma > 0:
        img = gaussian_noise(img, plan.noise_sigma, rng)
    return img


def apply_plan(volumes: dict, plan: TransformPlan, stage: str,
               rng: np.random.Generator | None = None) -> np.ndarray:
    """Full chain: deterministic always, stochastic only for stage='train'."""
    img = deterministic_image(volumes, plan)
    if stage == "train":
        if rng is None:
            raise ValueError("stage='train' requires an rng")
        img = stochastic_image(img, plan, rng)
    return img
