"""
Module encoders.py

This module contains the site-agnostic encoders. Every encoder reduces the
input resolution by 16 and exposes `out_channels`.

"""

import logging
import math
import os
from typing import Tuple

import torch
import torch.nn as nn
from torchvision import models

from itl_seg.error import CheckpointError
from itl_seg.model.specs import EncoderSpec

logger = logging.getLogger(__name__)


def init_fan_in_uniform(module: nn.Module) -> None:
    """Fan-in scaled uniform init for every conv-like and linear layer."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.kaiming_uniform_(m.weight, a=math.sqrt(5))
            if m.bias is not None:
                fan_in, _ = nn.init._calculate_fan_in_and_fan_out(m.weight)
                bound = 1 / math.sqrt(fan_in) if fan_in > 0 else 0
                nn.init.uniform_(m.bias, -bound, bound)


def _conv_bn_relu(in_c: int, out_c: int, stride: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_c, out_c, kernel_size=3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(out_c),
        nn.ReLU(inplace=True),
    )


class TinyCNNEncoder(nn.Module):
    """Four stride-2 conv stages; the desk-scale default"""
    def __init__(self, width: int = 16, in_channels: int = 3):
        super().__init__()
        widths = [width, width * 2, width * 4, width * 8]
        stages = []
        prev = in_channels
        for w in widths:
            stages.append(nn.Sequential(_conv_bn_relu(prev, w, stride=2), _conv_bn_relu(w, w, stride=1)))
            prev = w
        self.stages = nn.Sequential(*stages)
        self.out_channels = widths[-1]

    def forward(self, x):
        return self.stages(x)


class ResNetEncoder(nn.Module):
    """torchvision ResNet trunk up to layer3 (x16 reduction)"""
    FACTORIES = {"res18": models.resnet18, "res34": models.resnet34, "res50": models.resnet50}

    def __init__(self, kind: str):
        super().__init__()
        net = self.FACTORIES[kind](weights=None)
        # Attribute names follow torchvision so its state dicts load directly
        self.conv1, self.bn1, self.relu, self.maxpool = net.conv1, net.bn1, net.relu, net.maxpool
        self.layer1, self.layer2, self.layer3 = net.layer1, net.layer2, net.layer3
        self.out_channels = 1024 if kind == "res50" else 256

    def forward(self, x):
        x = self.maxpool(self.relu(self.bn1(self.conv1(x))))
        return self.layer3(self.layer2(self.layer1(x)))


class ViTHybridEncoder(nn.Module):
    """ResNet-50 stem through layer2, 2x2 patch embedding and a transformer encoder"""
    def __init__(self, input_size: Tuple[int, int], depth: int = 12, dim: int = 768, heads: int = 12):
        super().__init__()
        net = models.resnet50(weights=None)
        self.conv1, self.bn1, self.relu, self.maxpool = net.conv1, net.bn1, net.relu, net.maxpool
        self.layer1, self.layer2 = net.layer1, net.layer2
        self.patch_embed = nn.Conv2d(512, dim, kernel_size=2, stride=2)
        self.grid = (input_size[0] // 16, input_size[1] // 16)
        self.pos_embed = nn.Parameter(torch.zeros(1, self.grid[0] * self.grid[1], dim))
        layer = nn.TransformerEncoderLayer(dim, heads, dim_feedforward=4 * dim, batch_first=True, norm_first=True)
        self.transformer = nn.TransformerEncoder(layer, num_layers=depth)
        self.norm = nn.LayerNorm(dim)
        self.out_channels = dim

    def forward(self, x):
        x = self.maxpool(self.relu(self.bn1(self.conv1(x))))
        x = self.patch_embed(self.layer2(self.layer1(x)))
        b, c, h, w = x.shape
        tokens = x.flatten(2).transpose(1, 2) + self.pos_embed
        tokens = self.norm(self.transformer(tokens))
        return tokens.transpose(1, 2).reshape(b, c, h, w)


def load_encoder_weights(encoder: nn.Module, weights_path: str) -> None:
    """Load a torch-serialized state dict; extra keys are ignored, missing ones are an error."""
    if not weights_path or not os.path.isfile(weights_path):
        raise CheckpointError(f"Encoder weights file not found: {weights_path}")
    try:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"Corrupt encoder weights file {weights_path}: {e}") from e
    if isinstance(state, dict) and "state_dict" in state:
        state = state["state_dict"]
    if not isinstance(state, dict):
        raise CheckpointError(f"Encoder weights file {weights_path} does not hold a state dict")
    try:
        result = encoder.load_state_dict(state, strict=False)
    except RuntimeError as e:
        raise CheckpointError(f"Encoder weights in {weights_path} do not fit the architecture: {e}") from e
    if result.missing_keys:
        raise CheckpointError(f"Encoder weights in {weights_path} lack keys: {result.missing_keys[:5]}")
    logger.info("Loaded encoder weights from %s (%d unused keys)", weights_path, len(result.unexpected_keys))


def build_encoder(spec: EncoderSpec, input_size: Tuple[int, int]) -> nn.Module:
    """Build, initialize and optionally load pretrained weights into an encoder."""
    if spec.kind == "tiny_cnn":
        encoder = TinyCNNEncoder(width=spec.width)
    elif spec.kind == "vit_hybrid":
        encoder = ViTHybridEncoder(input_size, depth=spec.vit_depth, dim=spec.vit_dim, heads=spec.vit_heads)
    else:
        encoder = ResNetEncoder(spec.kind)
    init_fan_in_uniform(encoder)
    if spec.pretrained:
        load_encoder_weights(encoder, spec.weights_path)
    return encoder
