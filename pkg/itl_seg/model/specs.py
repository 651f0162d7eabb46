"""
Module specs.py

This module contains the encoder and decoder architecture descriptions.

"""

from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple

ENCODER_KINDS = ("res18", "res34", "res50", "vit_hybrid", "tiny_cnn")

# Spatial reduction of every encoder and expansion of the decoder
DOWNSAMPLE = 16


@dataclass(frozen=True)
class EncoderSpec:
    """Which backbone to build and where its pretrained weights live"""
    kind: str = "tiny_cnn"
    pretrained: bool = False
    weights_path: Optional[str] = None
    width: int = 16                 # tiny_cnn base channel count
    vit_depth: int = 12
    vit_dim: int = 768
    vit_heads: int = 12

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ValueError(f"Unknown encoder kind {self.kind!r}; expected one of {ENCODER_KINDS}")
        if self.kind == "tiny_cnn" and self.pretrained:
            raise ValueError("tiny_cnn is never pretrained")
        if self.pretrained and not self.weights_path:
            raise ValueError(f"Pretrained {self.kind} encoder needs a weights_path")
        if self.width < 1:
            raise ValueError("Encoder width must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DecoderSpec:
    """Four (upsample x2, residual block) stages and a one-channel output head"""
    channels: Tuple[int, int, int, int] = (128, 64, 32, 16)
    input_size: Tuple[int, int] = (384, 384)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "input_size", tuple(int(s) for s in self.input_size))
        if len(self.channels) != 4 or min(self.channels) < 1:
            raise ValueError(f"Decoder needs exactly 4 positive stage widths, got {self.channels}")
        h, w = self.input_size
        if h < DOWNSAMPLE or w < DOWNSAMPLE or h % DOWNSAMPLE or w % DOWNSAMPLE:
            raise ValueError(f"Input size {self.input_size} must be a positive multiple of {DOWNSAMPLE}")

    @property
    def bottleneck_size(self) -> Tuple[int, int]:
        return (self.input_size[0] // DOWNSAMPLE, self.input_size[1] // DOWNSAMPLE)

    def stage_sizes(self) -> Tuple[Tuple[int, int], ...]:
        """Feature map size after each upsample stage (48, 96, 192, 384 at 384x384)."""
        h, w = self.bottleneck_size
        return tuple((h * 2 ** (i + 1), w * 2 ** (i + 1)) for i in range(4))

    def to_dict(self) -> dict:
        return {"channels": list(self.channels), "input_size": list(self.input_size)}
