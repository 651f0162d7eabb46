"""
Module types.py

This module contains the site dataset data types: slice samples, axial-context
inputs, per-site metadata and the synthetic site description.

"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from itl_seg.error import DatasetError

Range = Tuple[float, float]


@dataclass(frozen=True)
class SiteMeta:
    """Descriptive metadata of one acquisition site"""
    site_id: str
    modality: str = "MRI"
    num_cases: int = 1
    field_strength_tesla: Union[float, Range, None] = None
    in_plane_resolution_mm: Range = (1.0, 1.0)
    through_plane_mm: Range = (1.0, 1.0)
    source_name: str = ""

    def __post_init__(self):
        if self.num_cases < 1:
            raise DatasetError(f"Site {self.site_id} must have at least one case, got {self.num_cases}")
        for name in ("in_plane_resolution_mm", "through_plane_mm"):
            lo, hi = getattr(self, name)
            if lo <= 0 or hi <= 0 or lo > hi:
                raise DatasetError(f"Site {self.site_id} has invalid {name}: {(lo, hi)}")

    def to_dict(self) -> dict:
        return {
            "site_id": self.site_id,
            "modality": self.modality,
            "num_cases": self.num_cases,
            "field_strength_tesla": self.field_strength_tesla,
            "in_plane_resolution_mm": list(self.in_plane_resolution_mm),
            "through_plane_mm": list(self.through_plane_mm),
            "source_name": self.source_name,
        }


@dataclass(frozen=True, eq=False)
class SliceSample:
    """One 2D slice with its binary mask, the atomic training unit"""
    site_id: str
    case_id: str
    slice_index: int
    image: np.ndarray
    mask: np.ndarray
    spacing_mm: Tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        if self.slice_index < 0:
            raise DatasetError("Negative slice index", case_id=self.case_id, slice_index=self.slice_index)
        if self.image.ndim != 2 or self.image.shape != self.mask.shape:
            raise DatasetError(
                f"Image/mask shape mismatch: {self.image.shape} vs {self.mask.shape}",
                case_id=self.case_id, slice_index=self.slice_index,
            )
        if not np.isin(self.mask, (0, 1)).all():
            raise DatasetError("non-binary mask", case_id=self.case_id, slice_index=self.slice_index)

    @property
    def shape(self) -> Tuple[int, int]:
        return tuple(self.image.shape)

    @property
    def key(self) -> Tuple[str, str, int]:
        return (self.site_id, self.case_id, self.slice_index)


@dataclass(frozen=True, eq=False)
class AugmentedInput:
    """Axial neighbours (k-1, k, k+1) of one slice stacked channel-wise"""
    channels: np.ndarray

    def __post_init__(self):
        if self.channels.ndim != 3 or self.channels.shape[0] != 3:
            raise ValueError(f"Axial-context input must be 3xHxW, got {self.channels.shape}")

    @property
    def shape(self) -> Tuple[int, int]:
        return tuple(self.channels.shape[1:])


@dataclass(eq=False)
class SiteDataset:
    """Metadata plus by-case train/test splits of one site"""
    meta: SiteMeta
    train: List[SliceSample] = field(default_factory=list)
    test: List[SliceSample] = field(default_factory=list)

    def __post_init__(self):
        overlap = self.case_ids("train") & self.case_ids("test")
        if overlap:
            raise DatasetError(f"Cases appear in both splits of site {self.meta.site_id}: {sorted(overlap)}")

    @property
    def site_id(self) -> str:
        return self.meta.site_id

    def split(self, name: str) -> List[SliceSample]:
        if name not in ("train", "test"):
            raise ValueError(f"Unknown split: {name}")
        return getattr(self, name)

    def case_ids(self, split: str) -> set:
        return {s.case_id for s in self.split(split)}

    def cases(self, split: str) -> Dict[str, List[SliceSample]]:
        """Slices grouped by case, each group ordered by slice index."""
        grouped: Dict[str, List[SliceSample]] = {}
        for sample in self.split(split):
            grouped.setdefault(sample.case_id, []).append(sample)
        return {cid: sorted(items, key=lambda s: s.slice_index) for cid, items in sorted(grouped.items())}

    def case_volume(self, case_id: str, split: str = "train") -> np.ndarray:
        """Slices of one case stacked as a DxHxW volume."""
        slices = self.cases(split).get(case_id)
        if not slices:
            raise DatasetError(f"Unknown case in split {split}", case_id=case_id)
        return np.stack([s.image for s in slices], axis=0)

    def all_samples(self) -> List[SliceSample]:
        return list(self.train) + list(self.test)

    @property
    def image_shape(self) -> Optional[Tuple[int, int]]:
        samples = self.all_samples()
        return samples[0].shape if samples else None


@dataclass(frozen=True)
class SynthSiteSpec:
    """Parameters of one synthetic site of the desk-scale generator"""
    site_id: str
    num_cases: int = 10
    slices_per_case: int = 8
    shape_family: str = "ellipse"
    intensity_mean: float = 0.0
    intensity_std: float = 0.0
    contrast: float = 1.0
    noise_std: float = 0.5
    size_range: Range = (0.15, 0.3)
    rng_seed: int = 0
    in_plane_mm: float = 1.0
    through_plane_mm: float = 3.0

    def __post_init__(self):
        if self.num_cases < 2:
            raise DatasetError(f"Synthetic site {self.site_id} needs at least 2 cases for a train/test split")
        if self.slices_per_case < 1:
            raise DatasetError(f"Synthetic site {self.site_id} needs at least one slice per case")
        if self.shape_family not in ("ellipse", "blob"):
            raise DatasetError(f"Unknown shape family: {self.shape_family}")
        if self.noise_std < 0 or self.intensity_std < 0:
            raise DatasetError(f"Synthetic site {self.site_id} has a negative standard deviation")
        lo, hi = self.size_range
        if not 0 < lo <= hi < 0.5:
            raise DatasetError(f"Synthetic site {self.site_id} has an empty or oversized size range {self.size_range}")
