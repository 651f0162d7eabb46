"""
Module preprocess.py

This module contains intensity normalization, in-plane resampling, by-case
splitting and axial-context input construction.

"""

import logging
import math
from dataclasses import replace
from typing import List, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from itl_seg.data.types import AugmentedInput, SiteDataset, SliceSample
from itl_seg.error import DatasetError

logger = logging.getLogger(__name__)


def normalize_intensity(raw_volume: np.ndarray) -> np.ndarray:
    """Per-case z-score over every voxel of the volume."""
    volume = np.asarray(raw_volume, dtype=np.float64)
    if volume.size == 0:
        raise ValueError("Cannot normalize an empty volume")
    std = volume.std()
    if std == 0:
        logger.warning("Constant volume (value %s) normalized to zeros", volume.flat[0])
        return np.zeros(volume.shape, dtype=np.float32)
    return ((volume - volume.mean()) / std).astype(np.float32)


def _interpolate(array: np.ndarray, target: Tuple[int, int], mode: str) -> np.ndarray:
    t = torch.from_numpy(np.ascontiguousarray(array, dtype=np.float32))[None, None]
    if mode == "bilinear":
        out = F.interpolate(t, size=target, mode="bilinear", align_corners=False)
    else:
        out = F.interpolate(t, size=target, mode="nearest-exact")
    return out[0, 0].numpy()


def resample_slice(sample: SliceSample, target: Tuple[int, int]) -> SliceSample:
    """Bilinear image / nearest-neighbour mask resampling to `target` (H, W)."""
    h, w = int(target[0]), int(target[1])
    if h < 1 or w < 1:
        raise ValueError(f"Target dimensions must be >= 1, got {target}")
    if sample.shape == (h, w):
        return sample

    image = _interpolate(sample.image, (h, w), "bilinear")
    mask = (_interpolate(sample.mask, (h, w), "nearest") > 0.5).astype(np.uint8)

    # In-plane spacing is a scalar; anisotropic rescales use the geometric mean factor
    old_h, old_w = sample.shape
    factor = math.sqrt((old_h / h) * (old_w / w))
    in_plane, through_plane = sample.spacing_mm
    return replace(sample, image=image, mask=mask, spacing_mm=(in_plane * factor, through_plane))


def split_train_test(cases: Sequence[str], seed: int) -> Tuple[List[str], List[str]]:
    """Deterministic 4:1 split by case id."""
    unique = sorted(set(cases))
    if len(unique) < 2:
        raise DatasetError(f"Need at least 2 cases to split, got {len(unique)}")
    n_test = max(1, round(len(unique) / 5))
    order = np.random.default_rng(seed).permutation(len(unique))
    test = sorted(unique[i] for i in order[:n_test])
    train = sorted(unique[i] for i in order[n_test:])
    return train, test


def holdout_validation(case_ids: Sequence[str], fraction: float, seed: int) -> Tuple[List[str], List[str]]:
    """Hold out a deterministic fraction of training cases for validation losses."""
    unique = sorted(set(case_ids))
    if fraction <= 0 or len(unique) < 2:
        return unique, []
    n_val = min(max(1, round(fraction * len(unique))), len(unique) - 1)
    order = np.random.default_rng(seed).permutation(len(unique))
    val = sorted(unique[i] for i in order[:n_val])
    fit = sorted(unique[i] for i in order[n_val:])
    return fit, val


def make_augmented_input(case_volume: np.ndarray, slice_index: int) -> AugmentedInput:
    """Stack slices (k-1, k, k+1); volume edges replicate the edge slice."""
    volume = np.asarray(case_volume)
    if volume.ndim != 3:
        raise ValueError(f"Case volume must be DxHxW, got shape {volume.shape}")
    depth = volume.shape[0]
    if not 0 <= slice_index < depth:
        raise IndexError(f"Slice index {slice_index} out of range for a {depth}-slice case")
    picks = [min(max(slice_index + d, 0), depth - 1) for d in (-1, 0, 1)]
    return AugmentedInput(channels=np.ascontiguousarray(volume[picks], dtype=np.float32))


def preprocess_site(site: SiteDataset, shape: Tuple[int, int]) -> SiteDataset:
    """Normalize each case, then resample every slice to `shape`."""
    def process(split: str) -> List[SliceSample]:
        out = []
        for case_id, slices in site.cases(split).items():
            try:
                volume = np.stack([s.image for s in slices], axis=0)
            except ValueError as e:
                raise DatasetError(f"Slices of one case differ in shape: {e}", case_id=case_id)
            normalized = normalize_intensity(volume)
            for s, image in zip(slices, normalized):
                out.append(resample_slice(replace(s, image=image), shape))
        return out

    return SiteDataset(meta=site.meta, train=process("train"), test=process("test"))


def check_shapes(site: SiteDataset, shape: Tuple[int, int]) -> None:
    """Raise if any slice of the site does not have the configured shape."""
    for sample in site.all_samples():
        if sample.shape != tuple(shape):
            raise DatasetError(
                f"Slice shape {sample.shape} does not match configured {tuple(shape)}",
                case_id=sample.case_id, slice_index=sample.slice_index,
            )
