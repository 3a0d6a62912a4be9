"""Output module and the composed encoder + multi-head model.

The output module fuses flattened image features with processed clinical
features and ends in one independent head per endpoint. Binary heads emit a
logit, event heads an unbounded risk score; both are a single real, so the
model's forward maps a batch to an (B, E) output matrix in label order.
In tabular-only mode the encoder is absent and the shared stack runs on the
processed clinical features alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from ..errors import InvalidSpec, ShapeMismatch
from .encoders import EncoderSpec, build_encoder


@dataclass(frozen=True)
class OutputModuleSpec:
    n_shared_layers: int = 2
    shared_sizes: tuple = (128, 64)
    n_endpoint_layers: int = 1
    endpoint_sizes: tuple = (32,)
    n_clinical_layers: int = 1
    clinical_sizes: tuple = (16,)
    clinical_concat_position: int = 0
    dropout: float = 0.2

    @classmethod
    def from_config(cls, cfg) -> "OutputModuleSpec":
        o = cfg["model.output"]
        return cls(
            n_shared_layers=int(o["n_shared_layers"]),
            shared_sizes=tuple(o["shared_sizes"]),
            n_endpoint_layers=int(o["n_endpoint_layers"]),
            endpoint_sizes=tuple(o["endpoint_sizes"]),
            n_clinical_layers=int(o["n_clinical_layers"]),
            clinical_sizes=tuple(o["clinical_sizes"]),
            clinical_concat_position=int(o["clinical_concat_position"]),
            dropout=float(o["dropout"]),
        )

    def validate(self):
        bad = []
        if self.n_shared_layers > len(self.shared_sizes):
            bad.append("n_shared_layers exceeds len(shared_sizes)")
        if self.n_endpoint_layers > len(self.endpoint_sizes):
            bad.append("n_endpoint_layers exceeds len(endpoint_sizes)")
        if self.n_clinical_layers > len(self.clinical_sizes):
            bad.append("n_clinical_layers exceeds len(clinical_sizes)")
        if not 0 <= self.clinical_concat_position <= self.n_shared_layers:
            bad.append(
                f"clinical_concat_position={self.clinical_concat_position} "
                f"outside 0..{self.n_shared_layers}")
        if not 0.0 <= self.dropout < 1.0:
            bad.append(f"dropout={self.dropout} outside [0, 1)")
        sizes = (self.shared_sizes[:self.n_shared_layers]
                 + self.endpoint_sizes[:self.n_endpoint_layers]
                 + self.clinical_sizes[:self.n_clinical_layers])
        if any(s < 1 for s in sizes):
            bad.append("layer sizes must be positive")
        if bad:
            raise InvalidSpec("; ".join(bad))


def _mlp_stack(in_dim: int, sizes, dropout: float) -> tuple[nn.Sequential, int]:
    layers: list[nn.Module] = []
    for size in sizes:
        layers += [nn.Linear(in_dim, size), nn.ReLU(inplace=True)]
        if dropout > 0:
            layers.append(nn.Dropout(dropout))
        in_dim = size
    return nn.Sequential(*layers), in_dim


class OutputModule(nn.Module):
    """Shared layers with clinical fusion, then one head per endpoint."""

    def __init__(self, spec: OutputModuleSpec, image_dim: int, n_tabular: int, n_endpoints: int):
        super().__init__()
        spec.validate()
        if image_dim == 0 and n_tabular == 0:
            raise InvalidSpec("model has neither image features nor tabular features")
        self.spec = spec
        self.image_dim = image_dim
        self.n_tabular = n_tabular

        clinical_dim = 0
        self.clinical = None
        if n_tabular > 0:
            sizes = spec.clinical_sizes[:spec.n_clinical_layers]
            self.clinical, clinical_dim = _mlp_stack(n_tabular, sizes, spec.dropout)

        concat_at = spec.clinical_concat_position if image_dim > 0 else 0
        shared_sizes = spec.shared_sizes[:spec.n_shared_layers]
        if image_dim > 0:
            self.pre_shared, dim = _mlp_stack(image_dim, shared_sizes[:concat_at], spec.dropout)
            dim += clinical_dim
        else:
            self.pre_shared = nn.Sequential()
            dim = clinical_dim
        self.post_shared, dim = _mlp_stack(dim, shared_sizes[concat_at:], spec.dropout)

        head_sizes = spec.endpoint_sizes[:spec.n_endpoint_layers]
        heads = []
        for _ in range(n_endpoints):
            stack, head_dim = _mlp_stack(dim, head_sizes, spec.dropout)
            heads.append(nn.Sequential(stack, nn.Linear(head_dim, 1)))
        self.heads = nn.ModuleList(heads)

    def forward(self, image_features: torch.Tensor | None, tabular: torch.Tensor) -> torch.Tensor:
        streams = []
        if self.image_dim > 0:
            streams.append(self.pre_shared(image_features))
        if self.clinical is not None:
            streams.append(self.clinical(tabular))
        x = torch.cat(streams, dim=1) if len(streams) > 1 else streams[0]
        x = self.post_shared(x)
        return torch.cat([head(x) for head in self.heads], dim=1)


class ComposedModel(nn.Module):
    """Image encoder (optional) plus output module; forward -> (B, E)."""

    def __init__(self, encoder: nn.Module | None, output: OutputModule, endpoint_names):
        super().__init__()
        self.encoder = encoder
        self.output = output
        self.endpoint_names = tuple(endpoint_names)

    @property
    def n_endpoints(self) -> int:
        return len(self.endpoint_names)

    def forward(self, images: torch.Tensor | None, tabular: torch.Tensor) -> torch.Tensor:
        features = None
        if self.encoder is not None:
            if images is None:
                raise ShapeMismatch("model input", (), ("B", "C", "H", "W", "D"))
            if images.ndim != 5:
                raise ShapeMismatch("model input", images.shape, ("B", "C", "H", "W", "D"))
            features = self.encoder(images)
        return self.output(features, tabular)


def init_parameters(model: nn.Module) -> None:
    """Documented init: weights ~ N(0, 1/sqrt(fan_in)), biases 0, norms identity."""
    for m in model.modules():
        if isinstance(m, (nn.Conv3d, nn.Linear)):
            fan_in = m.weight.shape[1] * (math.prod(m.weight.shape[2:]) or 1)
            nn.init.normal_(m.weight, std=1.0 / math.sqrt(max(fan_in, 1)))
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.MultiheadAttention):
            nn.init.normal_(m.in_proj_weight, std=1.0 / math.sqrt(m.embed_dim))
            if m.in_proj_bias is not None:
                nn.init.zeros_(m.in_proj_bias)
        elif isinstance(m, (nn.BatchNorm3d, nn.LayerNorm)):
            if m.weight is not None:
                nn.init.ones_(m.weight)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def build_model(encoder_spec: EncoderSpec, output_spec: OutputModuleSpec,
                label_specs, n_modalities: int, n_tabular: int) -> ComposedModel:
    """Construct the full model for the given endpoints and input widths."""
    if (encoder_spec.architecture == "none") != (n_modalities == 0):
        raise InvalidSpec(
            "architecture 'none' is exactly the tabular-only mode: it requires zero "
            f"image modalities (got architecture={encoder_spec.architecture!r}, "
            f"n_modalities={n_modalities})")
    if not label_specs:
        raise InvalidSpec("at least one endpoint is required")
    encoder = build_encoder(encoder_spec, n_modalities)
    image_dim = encoder.feature_dim if encoder is not None else 0
    output = OutputModule(output_spec, image_dim, n_tabular, len(label_specs))
    model = ComposedModel(encoder, output, [s.name for s in label_specs])
    init_parameters(model)
    return model
