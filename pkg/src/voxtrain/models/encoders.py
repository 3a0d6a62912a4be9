"""3D image encoder backbones.

Every volumetric encoder follows the same convention: a ``trunk`` that maps
(B, C, H, W, D) to a feature map (B, F, h, w, d), global average pooling,
and a flat (B, F) feature vector with ``feature_dim == F``. Keeping the
trunk separate lets the hybrid CNN-transformer encoder reuse any CNN trunk
and attach a transformer over its spatial positions.

All kernels are 3D. Pooling is adaptive, so feature width is independent
of the crop size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import InputTooSmall, InvalidSpec

RESNET_LAYERS = {
    10: ("basic", (1, 1, 1, 1)),
    18: ("basic", (2, 2, 2, 2)),
    34: ("basic", (3, 4, 6, 3)),
    50: ("bottleneck", (3, 4, 6, 3)),
    101: ("bottleneck", (3, 4, 23, 3)),
    152: ("bottleneck", (3, 8, 36, 3)),
    200: ("bottleneck", (3, 24, 36, 3)),
}

DENSENET_BLOCKS = {
    121: (6, 12, 24, 16),
    169: (6, 12, 32, 32),
    201: (6, 12, 48, 32),
    264: (6, 12, 64, 48),
}

# (depth multiplier, width multiplier) over the base stage table below
EFFICIENTNETV2_SCALE = {
    "XS": (0.5, 0.5),
    "S": (1.0, 1.0),
    "M": (1.3, 1.2),
    "L": (1.6, 1.4),
    "XL": (2.0, 1.6),
}
# (kind, expansion, channels, layers, stride)
_EFFV2_BASE_STAGES = (
    ("fused", 1, 16, 1, 1),
    ("fused", 4, 32, 2, 2),
    ("fused", 4, 48, 2, 2),
    ("mbconv", 4, 96, 3, 2),
    ("mbconv", 6, 112, 3, 1),
    ("mbconv", 6, 192, 4, 2),
)

CONVNEXT_SHAPES = {
    "tiny": ((3, 3, 9, 3), (96, 192, 384, 768)),
    "small": ((3, 3, 27, 3), (96, 192, 384, 768)),
    "base": ((3, 3, 27, 3), (128, 256, 512, 1024)),
    "large": ((3, 3, 27, 3), (192, 384, 768, 1536)),
    "xlarge": ((3, 3, 27, 3), (256, 512, 1024, 2048)),
}


@dataclass(frozen=True)
class EncoderSpec:
    architecture: str
    size: object = None  # depth int (resnet/densenet) or variant string
    cnn_widths: tuple = (16, 32, 64)
    cnn_kernel: int = 3
    vit_patch: int = 8
    vit_depth: int = 4
    vit_width: int = 128
    vit_heads: int = 4
    vit_mlp_ratio: float = 2.0
    transrp_cnn: str = "resnet"
    transrp_cnn_size: object = 10
    transrp_depth: int = 2
    transrp_width: int = 128
    transrp_heads: int = 4

    @classmethod
    def from_config(cls, cfg) -> "EncoderSpec":
        vit = cfg.get("model.vit") or {}
        trp = cfg.get("model.transrp") or {}
        cnn = cfg.get("model.cnn") or {}
        return cls(
            architecture=cfg["model.architecture"],
            size=cfg.get("model.size"),
            cnn_widths=tuple(cnn.get("widths", (16, 32, 64))),
            cnn_kernel=int(cnn.get("kernel_size", 3)),
            vit_patch=int(vit.get("patch_size", 8)),
            vit_depth=int(vit.get("depth", 4)),
            vit_width=int(vit.get("width", 128)),
            vit_heads=int(vit.get("heads", 4)),
            vit_mlp_ratio=float(vit.get("mlp_ratio", 2.0)),
            transrp_cnn=trp.get("cnn_architecture", "resnet"),
            transrp_cnn_size=trp.get("cnn_size", 10),
            transrp_depth=int(trp.get("depth", 2)),
            transrp_width=int(trp.get("width", 128)),
            transrp_heads=int(trp.get("heads", 4)),
        )


class PooledEncoder(nn.Module):
    """Common wrapper: trunk -> global average pool -> flat features."""

    def __init__(self, trunk: nn.Module, feature_dim: int):
        super().__init__()
        self.trunk = trunk
        self.feature_dim = feature_dim
        self.pool = nn.AdaptiveAvgPool3d(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.flatten(self.pool(self.trunk(x)), 1)


class HalvingPool3d(nn.Module):
    """Downsample by 2 per axis, passing through axes already at size 1."""

    def __init__(self, mode: str = "max"):
        super().__init__()
        self.mode = mode

    def forward(self, x):
        k = [2 if s > 1 else 1 for s in x.shape[-3:]]
        if k == [1, 1, 1]:
            return x
        op = F.max_pool3d if self.mode == "max" else F.avg_pool3d
        return op(x, kernel_size=k, stride=k, ceil_mode=True)


# --- plain CNN ---------------------------------------------------------------


def _cnn_trunk(in_channels: int, widths, kernel: int) -> tuple[nn.Module, int]:
    layers = []
    prev = in_channels
    for w in widths:
        layers += [
            nn.Conv3d(prev, w, kernel, padding=kernel // 2, bias=False),
            nn.BatchNorm3d(w),
            nn.ReLU(inplace=True),
            HalvingPool3d("max"),
        ]
        prev = w
    return nn.Sequential(*layers), prev


# --- ResNet ------------------------------------------------------------------


class BasicBlock3d(nn.Module):
    expansion = 1

    def __init__(self, inplanes, planes, stride=1, downsample=None):
        super().__init__()
        self.conv1 = nn.Conv3d(inplanes, planes, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm3d(planes)
        self.conv2 = nn.Conv3d(planes, planes, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm3d(planes)
        self.downsample = downsample

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = F.relu(self.bn1(self.conv1(x)), inplace=True)
        out = self.bn2(self.conv2(out))
        return F.relu(out + identity, inplace=True)


class Bottleneck3d(nn.Module):
    expansion = 4

    def __init__(self, inplanes, planes, stride=1, downsample=None):
        super().__init__()
        self.conv1 = nn.Conv3d(inplanes, planes, 1, bias=False)
        self.bn1 = nn.BatchNorm3d(planes)
        self.conv2 = nn.Conv3d(planes, planes, 3, stride=stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm3d(planes)
        self.conv3 = nn.Conv3d(planes, planes * 4, 1, bias=False)
        self.bn3 = nn.BatchNorm3d(planes * 4)
        self.downsample = downsample

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = F.relu(self.bn1(self.conv1(x)), inplace=True)
        out = F.relu(self.bn2(self.conv2(out)), inplace=True)
        out = self.bn3(self.conv3(out))
        return F.relu(out + identity, inplace=True)


def _resnet_trunk(in_channels: int, depth: int) -> tuple[nn.Module, int]:
    if depth not in RESNET_LAYERS:
        raise InvalidSpec(f"resnet size must be one of {sorted(RESNET_LAYERS)}, got {depth!r}")
    kind, layer_counts = RESNET_LAYERS[depth]
    block = BasicBlock3d if kind == "basic" else Bottleneck3d

    stages = [nn.Sequential(
        nn.Conv3d(in_channels, 64, 7, stride=2, padding=3, bias=False),
        nn.BatchNorm3d(64),
        nn.ReLU(inplace=True),
        nn.MaxPool3d(3, stride=2, padding=1),
    )]
    inplanes = 64
    for i, (planes, count) in enumerate(zip((64, 128, 256, 512), layer_counts)):
        stride = 1 if i == 0 else 2
        blocks = []
        for j in range(count):
            s = stride if j == 0 else 1
            downsample = None
            if s != 1 or inplanes != planes * block.expansion:
                downsample = nn.Sequential(
                    nn.Conv3d(inplanes, planes * block.expansion, 1, stride=s, bias=False),
                    nn.BatchNorm3d(planes * block.expansion),
                )
            blocks.append(block(inplanes, planes, stride=s, downsample=downsample))
            inplanes = planes * block.expansion
        stages.append(nn.Sequential(*blocks))
    return nn.Sequential(*stages), inplanes


# --- DenseNet ----------------------------------------------------------------


class _DenseLayer(nn.Module):
    def __init__(self, in_features, growth, bn_size=4):
        super().__init__()
        self.norm1 = nn.BatchNorm3d(in_features)
        self.conv1 = nn.Conv3d(in_features, bn_size * growth, 1, bias=False)
        self.norm2 = nn.BatchNorm3d(bn_size * growth)
        self.conv2 = nn.Conv3d(bn_size * growth, growth, 3, padding=1, bias=False)

    def forward(self, x):
        out = self.conv1(F.relu(self.norm1(x), inplace=True))
        out = self.conv2(F.relu(self.norm2(out), inplace=True))
        return torch.cat([x, out], dim=1)


def _densenet_trunk(in_channels: int, depth: int, growth: int = 32) -> tuple[nn.Module, int]:
    if depth not in DENSENET_BLOCKS:
        raise InvalidSpec(f"densenet size must be one of {sorted(DENSENET_BLOCKS)}, got {depth!r}")
    blocks = DENSENET_BLOCKS[depth]
    features = 2 * growth
    layers: list[nn.Module] = [
        nn.Conv3d(in_channels, features, 7, stride=2, padding=3, bias=False),
        nn.BatchNorm3d(features),
        nn.ReLU(inplace=True),
        nn.MaxPool3d(3, stride=2, padding=1),
    ]
    for i, count in enumerate(blocks):
        for _ in range(count):
            layers.append(_DenseLayer(features, growth))
            features += growth
        if i < len(blocks) - 1:  # transition halves channels and resolution
            layers += [
                nn.BatchNorm3d(features),
                nn.ReLU(inplace=True),
                nn.Conv3d(features, features // 2, 1, bias=False),
                HalvingPool3d("avg"),
            ]
            features //= 2
    layers += [nn.BatchNorm3d(features), nn.ReLU(inplace=True)]
    return nn.Sequential(*layers), features


# --- EfficientNetV2 ----------------------------------------------------------


class _SqueezeExcite(nn.Module):
    def __init__(self, channels, reduced):
        super().__init__()
        self.fc1 = nn.Conv3d(channels, reduced, 1)
        self.fc2 = nn.Conv3d(reduced, channels, 1)

    def forward(self, x):
        s = F.adaptive_avg_pool3d(x, 1)
        s = torch.sigmoid(self.fc2(F.silu(self.fc1(s))))
        return x * s


class _MBConv(nn.Module):
    """MBConv (depthwise + squeeze-excite) or its fused variant."""

    def __init__(self, cin, cout, expansion, stride, fused):
        super().__init__()
        mid = cin * expansion
        self.use_residual = stride == 1 and cin == cout
        ops: list[nn.Module] = []
        if fused:
            ops += [nn.Conv3d(cin, mid, 3, stride=stride, padding=1, bias=False),
                    nn.BatchNorm3d(mid), nn.SiLU(inplace=True)]
        else:
            if expansion != 1:
                ops += [nn.Conv3d(cin, mid, 1, bias=False),
                        nn.BatchNorm3d(mid), nn.SiLU(inplace=True)]
            ops += [nn.Conv3d(mid, mid, 3, stride=stride, padding=1, groups=mid, bias=False),
                    nn.BatchNorm3d(mid), nn.SiLU(inplace=True),
                    _SqueezeExcite(mid, max(1, cin // 4))]
        ops += [nn.Conv3d(mid, cout, 1, bias=False), nn.BatchNorm3d(cout)]
        self.block = nn.Sequential(*ops)

    def forward(self, x):
        out = self.block(x)
        return x + out if self.use_residual else out


def _round_width(w: float) -> int:
    return max(8, int(w + 4) // 8 * 8)


def _efficientnetv2_trunk(in_channels: int, variant: str) -> tuple[nn.Module, int]:
    key = str(variant).upper()
    if key not in EFFICIENTNETV2_SCALE:
        raise InvalidSpec(
            f"efficientnetv2 size must be one of {sorted(EFFICIENTNETV2_SCALE)}, got {variant!r}")
    dm, wm = EFFICIENTNETV2_SCALE[key]
    stem_width = _round_width(_EFFV2_BASE_STAGES[0][2] * wm)
    layers: list[nn.Module] = [
        nn.Conv3d(in_channels, stem_width, 3, stride=2, padding=1, bias=False),
        nn.BatchNorm3d(stem_width),
        nn.SiLU(inplace=True),
    ]
    cin = stem_width
    for kind, expansion, channels, count, stride in _EFFV2_BASE_STAGES:
        cout = _round_width(channels * wm)
        for j in range(max(1, math.ceil(count * dm))):
            layers.append(_MBConv(cin, cout, expansion,
                                  stride if j == 0 else 1, fused=kind == "fused"))
            cin = cout
    head = _round_width(cin * 4)
    layers += [nn.Conv3d(cin, head, 1, bias=False), nn.BatchNorm3d(head), nn.SiLU(inplace=True)]
    return nn.Sequential(*layers), head


# --- ConvNeXt ----------------------------------------------------------------


class LayerNorm3d(nn.Module):
    """LayerNorm over the channel axis of (B, C, H, W, D) maps."""

    def __init__(self, channels, eps=1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x):
        x = x.permute(0, 2, 3, 4, 1)
        x = F.layer_norm(x, (x.shape[-1],), self.weight, self.bias, self.eps)
        return x.permute(0, 4, 1, 2, 3)


class _ConvNeXtBlock(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.dwconv = nn.Conv3d(dim, dim, 7, padding=3, groups=dim)
        self.norm = nn.LayerNorm(dim, eps=1e-6)
        self.pwconv1 = nn.Linear(dim, 4 * dim)
        self.pwconv2 = nn.Linear(4 * dim, dim)
        self.gamma = nn.Parameter(1e-6 * torch.ones(dim))

    def forward(self, x):
        shortcut = x
        x = self.dwconv(x).permute(0, 2, 3, 4, 1)
        x = self.pwconv2(F.gelu(self.pwconv1(self.norm(x))))
        x = (self.gamma * x).permute(0, 4, 1, 2, 3)
        return shortcut + x


class _PadToMultiple(nn.Module):
    """Zero-pad the trailing spatial axes up to a multiple of ``m`` so the
    strided patchify/downsample convolutions always see a valid extent."""

    def __init__(self, m: int):
        super().__init__()
        self.m = m

    def forward(self, x):
        pads = []
        for s in reversed(x.shape[-3:]):
            pads += [0, (-s) % self.m]
        return F.pad(x, pads) if any(pads) else x


def _convnext_trunk(in_channels: int, variant: str) -> tuple[nn.Module, int]:
    key = str(variant).lower()
    if key not in CONVNEXT_SHAPES:
        raise InvalidSpec(
            f"convnext size must be one of {sorted(CONVNEXT_SHAPES)}, got {variant!r}")
    depths, dims = CONVNEXT_SHAPES[key]
    layers: list[nn.Module] = [
        _PadToMultiple(4),
        nn.Conv3d(in_channels, dims[0], 4, stride=4),
        LayerNorm3d(dims[0]),
    ]
    for i, (depth, dim) in enumerate(zip(depths, dims)):
        if i > 0:
            layers += [LayerNorm3d(dims[i - 1]), _PadToMultiple(2),
                       nn.Conv3d(dims[i - 1], dim, 2, stride=2)]
        layers += [_ConvNeXtBlock(dim) for _ in range(depth)]
    layers.append(LayerNorm3d(dims[-1]))
    return nn.Sequential(*layers), dims[-1]


# --- transformer pieces --------------------------------------------------------


class _TransformerBlock(nn.Module):
    def __init__(self, width, heads, mlp_ratio):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(width)
        hidden = int(width * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(width, hidden), nn.GELU(), nn.Linear(hidden, width))

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


def _sincos_positions(grid, width: int, device) -> torch.Tensor:
    """Fixed 3D sin-cos position table, (1, N, width); no learned parameters."""
    per_axis = width // 6 * 2  # three axes, sin+cos pairs each
    tables = []
    for size in grid:
        pos = torch.arange(size, dtype=torch.float32, device=device)
        freq = torch.exp(
            torch.arange(0, per_axis, 2, dtype=torch.float32, device=device)
            * (-math.log(10000.0) / max(per_axis, 2))
        )
        angles = pos[:, None] * freq[None, :]
        tables.append(torch.cat([angles.sin(), angles.cos()], dim=1))
    gx, gy, gz = grid
    parts = [
        tables[0][:, None, None, :].expand(gx, gy, gz, -1),
        tables[1][None, :, None, :].expand(gx, gy, gz, -1),
        tables[2][None, None, :, :].expand(gx, gy, gz, -1),
    ]
    enc = torch.cat(parts, dim=-1).reshape(gx * gy * gz, -1)
    if enc.shape[1] < width:
        enc = torch.cat([enc, torch.zeros(enc.shape[0], width - enc.shape[1], device=device)], dim=1)
    return enc[None]


class ViTEncoder(nn.Module):
    """Patch-based vision transformer over 3D volumes; mean-token aggregation."""

    def __init__(self, in_channels, patch, depth, width, heads, mlp_ratio):
        super().__init__()
        self.patch = patch
        self.feature_dim = width
        self.embed = nn.Conv3d(in_channels, width, kernel_size=patch, stride=patch)
        self.blocks = nn.ModuleList(
            [_TransformerBlock(width, heads, mlp_ratio) for _ in range(depth)])
        self.norm = nn.LayerNorm(width)
        self.last_token_count: int | None = None  # populated on forward, for diagnostics

    def token_grid(self, spatial) -> tuple[int, int, int]:
        if any(s < self.patch for s in spatial):
            raise InputTooSmall(spatial, (self.patch,) * 3)
        return tuple(s // self.patch for s in spatial)

    def token_count(self, spatial) -> int:
        gx, gy, gz = self.token_grid(spatial)
        return gx * gy * gz

    def forward(self, x):
        grid = self.token_grid(x.shape[-3:])
        tokens = self.embed(x).flatten(2).transpose(1, 2)  # (B, N, width)
        self.last_token_count = tokens.shape[1]
        tokens = tokens + _sincos_positions(grid, tokens.shape[-1], tokens.device)
        for block in self.blocks:
            tokens = block(tokens)
        return self.norm(tokens).mean(dim=1)


class TransRPEncoder(nn.Module):
    """Hybrid encoder: a CNN trunk's spatial positions feed a small transformer."""

    def __init__(self, trunk, trunk_dim, depth, width, heads):
        super().__init__()
        self.trunk = trunk
        self.proj = nn.Linear(trunk_dim, width)
        self.blocks = nn.ModuleList([_TransformerBlock(width, heads, 2.0) for _ in range(depth)])
        self.norm = nn.LayerNorm(width)
        self.feature_dim = width
        self.last_token_count: int | None = None

    def forward(self, x):
        fm = self.trunk(x)  # (B, F, h, w, d)
        tokens = self.proj(fm.flatten(2).transpose(1, 2))
        self.last_token_count = tokens.shape[1]
        tokens = tokens + _sincos_positions(tuple(fm.shape[-3:]), tokens.shape[-1], tokens.device)
        for block in self.blocks:
            tokens = block(tokens)
        return self.norm(tokens).mean(dim=1)


# --- factory -------------------------------------------------------------------

_CNN_FAMILY = ("cnn", "resnet", "densenet", "efficientnetv2", "convnext")


def _build_trunk(architecture: str, spec: EncoderSpec, in_channels: int, size) -> tuple[nn.Module, int]:
    if architecture == "cnn":
        return _cnn_trunk(in_channels, spec.cnn_widths, spec.cnn_kernel)
    if architecture == "resnet":
        return _resnet_trunk(in_channels, int(size))
    if architecture == "densenet":
        return _densenet_trunk(in_channels, int(size))
    if architecture == "efficientnetv2":
        return _efficientnetv2_trunk(in_channels, size)
    if architecture == "convnext":
        return _convnext_trunk(in_channels, size)
    raise InvalidSpec(f"{architecture!r} is not a CNN-family architecture")


def build_encoder(spec: EncoderSpec, in_channels: int) -> nn.Module | None:
    """Encoder module for the spec, or None for tabular-only mode."""
    arch = spec.architecture
    if arch == "none":
        return None
    if in_channels < 1:
        raise InvalidSpec("an image encoder needs at least one input channel")
    if arch in _CNN_FAMILY:
        trunk, dim = _build_trunk(arch, spec, in_channels, spec.size)
        return PooledEncoder(trunk, dim)
    if arch == "vit":
        return ViTEncoder(in_channels, spec.vit_patch, spec.vit_depth,
                          spec.vit_width, spec.vit_heads, spec.vit_mlp_ratio)
    if arch == "transrp":
        if spec.transrp_cnn not in _CNN_FAMILY:
            raise InvalidSpec(
                f"transrp inner CNN must be one of {_CNN_FAMILY}, got {spec.transrp_cnn!r}")
        trunk, dim = _build_trunk(spec.transrp_cnn, spec, in_channels, spec.transrp_cnn_size)
        return TransRPEncoder(trunk, dim, spec.transrp_depth, spec.transrp_width,
                              spec.transrp_heads)
    raise InvalidSpec(f"unknown architecture {spec.architecture!r}")
