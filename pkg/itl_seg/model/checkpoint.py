"""
Module checkpoint.py

This module contains the checkpoint container of a ModelBundle.

A checkpoint is a torch-serialized dictionary:
    format          "itl-seg-checkpoint"
    version         1
    phase_index     integer >= 1
    encoder_spec    EncoderSpec fields
    decoder_spec    {"channels": [...], "input_size": [H, W]}
    encoder         state dict
    target_decoder  state dict
    source_decoder  state dict, or None in phase 1

"""

import logging
import os
from pathlib import Path
from typing import Union

import torch

from itl_seg.error import CheckpointError
from itl_seg.model.bundle import ModelBundle, build_model
from itl_seg.model.specs import DecoderSpec, EncoderSpec

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "itl-seg-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(bundle: ModelBundle, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "phase_index": bundle.phase_index,
        # Written as a loadable spec; pretrained weights are already in the encoder state
        "encoder_spec": {**bundle.encoder_spec.to_dict(), "pretrained": False, "weights_path": None},
        "decoder_spec": bundle.decoder_spec.to_dict(),
        "encoder": bundle.encoder.state_dict(),
        "target_decoder": bundle.target_decoder.state_dict(),
        "source_decoder": bundle.source_decoder.state_dict() if bundle.source_decoder is not None else None,
    }
    torch.save(payload, path)
    logger.debug("Saved phase-%d checkpoint to %s", bundle.phase_index, path)
    return path


def load_checkpoint(path: Union[str, Path], device: str = "cpu") -> ModelBundle:
    """Rebuild a bundle from a checkpoint file."""
    if not os.path.isfile(path):
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location=device, weights_only=True)
    except Exception as e:
        raise CheckpointError(f"Corrupt checkpoint {path}: {e}") from e

    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not an itl-seg checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {payload.get('version')} in {path}")

    try:
        enc = EncoderSpec(**payload["encoder_spec"])
        dec = DecoderSpec(**payload["decoder_spec"])
        bundle = build_model(enc, dec, phase=int(payload["phase_index"]))
        bundle.encoder.load_state_dict(payload["encoder"])
        bundle.target_decoder.load_state_dict(payload["target_decoder"])
        if bundle.source_decoder is not None:
            bundle.source_decoder.load_state_dict(payload["source_decoder"])
    except (KeyError, TypeError, ValueError, RuntimeError) as e:
        raise CheckpointError(f"Checkpoint {path} does not match its recorded architecture: {e}") from e
    return bundle.to(device)
