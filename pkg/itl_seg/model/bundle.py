"""
Module bundle.py

This module contains the multi-site expert model: a shared encoder, the
trainable target decoder and the optional frozen source decoder, together
with its construction, phase handoff and parameter bookkeeping.

"""

import copy
import logging
from typing import Iterator, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn

from itl_seg.data.types import AugmentedInput
from itl_seg.model.decoder import SegmentationDecoder
from itl_seg.model.encoders import build_encoder
from itl_seg.model.specs import DecoderSpec, EncoderSpec

logger = logging.getLogger(__name__)

BRANCHES = ("target", "source")


class ModelBundle(nn.Module):
    """Expert model of one incremental phase"""

    def __init__(self, encoder: nn.Module, target_decoder: nn.Module, source_decoder: Optional[nn.Module],
                 phase_index: int, encoder_spec: EncoderSpec, decoder_spec: DecoderSpec):
        super().__init__()
        if phase_index < 1:
            raise ValueError(f"phase_index must be >= 1, got {phase_index}")
        if phase_index == 1 and source_decoder is not None:
            raise ValueError("A phase-1 bundle has no source decoder")
        if phase_index > 1 and source_decoder is None:
            raise ValueError(f"A phase-{phase_index} bundle needs a source decoder")
        self.encoder = encoder
        self.target_decoder = target_decoder
        self.source_decoder = source_decoder
        self.phase_index = phase_index
        self.encoder_spec = encoder_spec
        self.decoder_spec = decoder_spec
        if source_decoder is not None:
            freeze(source_decoder)

    @property
    def has_source(self) -> bool:
        return self.source_decoder is not None

    def train(self, mode: bool = True):
        super().train(mode)
        # The frozen branch never updates its batch-norm statistics
        if self.source_decoder is not None:
            self.source_decoder.eval()
        return self

    def trainable_parameters(self) -> Iterator[nn.Parameter]:
        return (p for p in self.parameters() if p.requires_grad)

    def forward(self, x: torch.Tensor, branch: str = "target") -> torch.Tensor:
        """Foreground probabilities NxHxW for an Nx3xHxW batch."""
        if branch not in BRANCHES:
            raise ValueError(f"Unknown branch {branch!r}")
        if branch == "source" and self.source_decoder is None:
            raise ValueError(f"Source branch requested but phase {self.phase_index} has no source decoder")
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"Expected an Nx3xHxW batch, got {tuple(x.shape)}")
        if tuple(x.shape[-2:]) != self.decoder_spec.input_size:
            raise ValueError(f"Input size {tuple(x.shape[-2:])} does not match the model's {self.decoder_spec.input_size}")
        decoder = self.target_decoder if branch == "target" else self.source_decoder
        logits = decoder(self.encoder(x))
        return torch.sigmoid(logits)[:, 0]


def freeze(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    module.eval()
    return module


def build_model(enc: EncoderSpec, dec: DecoderSpec, phase: int = 1, seed: int = 0) -> ModelBundle:
    """Build a bundle; phase 1 omits the source decoder, later phases get a random frozen one."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        encoder = build_encoder(enc, dec.input_size)
        target = SegmentationDecoder(encoder.out_channels, dec)
        source = SegmentationDecoder(encoder.out_channels, dec) if phase > 1 else None
    return ModelBundle(encoder, target, source, phase, enc, dec)


def forward(bundle: ModelBundle, inp: Union[AugmentedInput, np.ndarray], branch: str = "target") -> np.ndarray:
    """Evaluation-mode HxW probability map for one axial-context input."""
    channels = inp.channels if isinstance(inp, AugmentedInput) else np.asarray(inp)
    was_training = bundle.training
    bundle.eval()
    try:
        with torch.no_grad():
            device = next(bundle.parameters()).device
            x = torch.from_numpy(np.ascontiguousarray(channels, dtype=np.float32))[None].to(device)
            return bundle(x, branch=branch)[0].cpu().numpy()
    finally:
        bundle.train(was_training)


def handoff(bundle: ModelBundle) -> ModelBundle:
    """Next-phase bundle: the finished target decoder becomes the frozen source decoder."""
    encoder = copy.deepcopy(bundle.encoder)
    target = copy.deepcopy(bundle.target_decoder)
    source = copy.deepcopy(bundle.target_decoder)
    # Encoder and target stay trainable
    for p in list(encoder.parameters()) + list(target.parameters()):
        p.requires_grad_(True)
    nxt = ModelBundle(encoder, target, source, bundle.phase_index + 1, bundle.encoder_spec, bundle.decoder_spec)
    logger.debug("Handoff phase %d -> %d", bundle.phase_index, nxt.phase_index)
    return nxt


def count_parameters(bundle: nn.Module) -> Tuple[int, int]:
    """(total, trainable) parameter counts."""
    total = sum(p.numel() for p in bundle.parameters())
    trainable = sum(p.numel() for p in bundle.parameters() if p.requires_grad)
    return total, trainable
