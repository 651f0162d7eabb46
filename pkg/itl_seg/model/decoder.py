"""
Module decoder.py

This module contains the segmentation decoder: four upsampling residual stages
from the x16 encoder features back to input resolution, then a 1x1 head.

"""

import torch.nn as nn

from itl_seg.model.encoders import init_fan_in_uniform
from itl_seg.model.specs import DecoderSpec


class ResidualBlock(nn.Module):
    """conv-bn-relu-conv-bn with an identity (or 1x1 projected) shortcut"""
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_channels, out_channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_channels),
        )
        self.shortcut = nn.Identity()
        if in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, bias=False),
                nn.BatchNorm2d(out_channels),
            )
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.relu(self.body(x) + self.shortcut(x))


class SegmentationDecoder(nn.Module):
    """Segmentation decoder head: 4 x (upsample x2, residual block) then a 1x1 logit head.

    Consumes only the encoder's final feature map (no skip connections).
    """
    def __init__(self, in_channels: int, spec: DecoderSpec):
        super().__init__()
        stages = []
        prev = in_channels
        for width in spec.channels:
            stages.append(nn.Sequential(
                nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False),
                ResidualBlock(prev, width),
            ))
            prev = width
        self.stages = nn.Sequential(*stages)
        self.head = nn.Conv2d(prev, 1, kernel_size=1)
        init_fan_in_uniform(self)

    def forward(self, features):
        """Logits of shape Nx1xHxW."""
        return self.head(self.stages(features))
