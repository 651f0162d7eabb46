"""
Module augment.py

This module contains the joint image/mask training augmentation: horizontal
flip, rotation and shift, applied with one geometric transform to all three
context channels and the mask.

"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class AugmentConfig:
    """Probabilities and ranges of the random transforms"""
    flip_prob: float = 0.5
    rotate_prob: float = 1.0
    rotation_deg: float = 15.0
    shift_prob: float = 1.0
    shift_frac: float = 0.1

    def __post_init__(self):
        for name in ("flip_prob", "rotate_prob", "shift_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be within [0, 1], got {value}")
        if self.rotation_deg < 0 or self.shift_frac < 0:
            raise ValueError("Rotation and shift ranges must be non-negative")


@dataclass(frozen=True)
class AugmentParams:
    """One concrete draw of the transform parameters"""
    flip: bool = False
    angle_deg: float = 0.0
    shift_px: Tuple[int, int] = (0, 0)

    @property
    def is_identity(self) -> bool:
        return not self.flip and self.angle_deg == 0.0 and self.shift_px == (0, 0)


def draw_params(config: AugmentConfig, shape: Tuple[int, int], rng: np.random.Generator) -> AugmentParams:
    """Draw transform parameters; every probability is consumed so the stream stays aligned."""
    h, w = shape
    u_flip, u_rot, u_shift = rng.random(3)
    angle = rng.uniform(-config.rotation_deg, config.rotation_deg)
    dy = rng.uniform(-config.shift_frac, config.shift_frac) * h
    dx = rng.uniform(-config.shift_frac, config.shift_frac) * w
    return AugmentParams(
        flip=bool(u_flip < config.flip_prob),
        angle_deg=float(angle) if u_rot < config.rotate_prob else 0.0,
        # Whole-pixel shifts keep the mask exact
        shift_px=(int(round(dy)), int(round(dx))) if u_shift < config.shift_prob else (0, 0),
    )


def hflip(array: np.ndarray) -> np.ndarray:
    """Mirror the last (width) axis."""
    return np.ascontiguousarray(array[..., ::-1])


def _affine_2d(plane: np.ndarray, angle_deg: float, shift_px: Tuple[int, int], order: int, mode: str) -> np.ndarray:
    # out(o) = in(M (o - c - t) + c); a positive angle turns the picture counter-clockwise
    theta = math.radians(angle_deg)
    # Rounding makes quarter turns map pixel centres exactly
    cos, sin = round(math.cos(theta), 12), round(math.sin(theta), 12)
    matrix = np.array([[cos, sin], [-sin, cos]])
    center = (np.array(plane.shape, dtype=np.float64) - 1.0) / 2.0
    offset = center - matrix @ (center + np.asarray(shift_px, dtype=np.float64))
    return ndimage.affine_transform(plane, matrix, offset=offset, order=order, mode=mode, cval=0.0)


def apply_params(channels: np.ndarray, mask: np.ndarray, params: AugmentParams) -> Tuple[np.ndarray, np.ndarray]:
    """Apply one transform to a 3xHxW input and its HxW mask."""
    if params.is_identity:
        return channels, mask

    image = channels.astype(np.float32, copy=True)
    target = mask.astype(np.float32, copy=True)
    if params.flip:
        image = hflip(image)
        target = hflip(target)
    if params.angle_deg != 0.0 or params.shift_px != (0, 0):
        image = np.stack([
            _affine_2d(c, params.angle_deg, params.shift_px, order=1, mode="nearest") for c in image
        ])
        target = _affine_2d(target, params.angle_deg, params.shift_px, order=1, mode="constant")
    return image.astype(np.float32), (target > 0.5).astype(mask.dtype)


def augment(channels: np.ndarray, mask: np.ndarray, config: AugmentConfig,
            rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Randomly flip, rotate and shift an axial-context input and its mask together."""
    params = draw_params(config, mask.shape, rng)
    return apply_params(channels, mask, params)
