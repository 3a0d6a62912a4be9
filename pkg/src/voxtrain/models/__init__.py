from .composed import ComposedModel, OutputModule, OutputModuleSpec, build_model, init_parameters
from .encoders import (
    CONVNEXT_SHAPES,
    DENSENET_BLOCKS,
    EFFICIENTNETV2_SCALE,
    RESNET_LAYERS,
    EncoderSpec,
    PooledEncoder,
    TransRPEncoder,
    ViTEncoder,
    build_encoder,
)

__all__ = [
    "ComposedModel",
    "OutputModule",
    "OutputModuleSpec",
    "EncoderSpec",
    "PooledEncoder",
    "TransRPEncoder",
    "ViTEncoder",
    "build_model",
    "build_encoder",
    "init_parameters",
    "RESNET_LAYERS",
    "DENSENET_BLOCKS",
    "EFFICIENTNETV2_SCALE",
    "CONVNEXT_SHAPES",
]
