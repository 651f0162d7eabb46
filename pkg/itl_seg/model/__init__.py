"""
Model package.

This package contains the network assembly:
- Encoder and decoder specifications
- Encoders (tiny_cnn, ResNet trunks, ViT hybrid)
- The upsample/residual segmentation decoder
- ModelBundle with phase handoff and parameter counts
- Checkpoint container

"""

from .specs import DecoderSpec, EncoderSpec, ENCODER_KINDS
from .encoders import build_encoder, load_encoder_weights
from .decoder import ResidualBlock, SegmentationDecoder
from .bundle import ModelBundle, build_model, count_parameters, forward, freeze, handoff
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    'DecoderSpec', 'EncoderSpec', 'ENCODER_KINDS',
    'build_encoder', 'load_encoder_weights',
    'ResidualBlock', 'SegmentationDecoder',
    'ModelBundle', 'build_model', 'count_parameters', 'forward', 'freeze', 'handoff',
    'load_checkpoint', 'save_checkpoint',
]
