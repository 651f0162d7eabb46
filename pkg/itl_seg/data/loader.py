"""
Module loader.py

This module contains the torch Dataset over axial-context slices and the
seeded DataLoader factory.

"""

from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from itl_seg.data.augment import AugmentConfig, augment
from itl_seg.data.preprocess import make_augmented_input
from itl_seg.data.types import SiteDataset, SliceSample

ContextItem = Tuple[SliceSample, np.ndarray]


def context_items(site: SiteDataset, split: str, case_ids: Optional[Iterable[str]] = None) -> List[ContextItem]:
    """(sample, 3xHxW context) pairs of a split, optionally restricted to some cases."""
    wanted = None if case_ids is None else set(case_ids)
    items = []
    for case_id, slices in site.cases(split).items():
        if wanted is not None and case_id not in wanted:
            continue
        volume = np.stack([s.image for s in slices], axis=0)
        for pos, sample in enumerate(slices):
            items.append((sample, make_augmented_input(volume, pos).channels))
    return items


def to_tensors(contexts: Sequence[np.ndarray], masks: Sequence[np.ndarray]) -> Tuple[torch.Tensor, torch.Tensor]:
    """Stack contexts (Nx3xHxW) and masks (NxHxW) as float32 tensors."""
    x = torch.from_numpy(np.stack(contexts).astype(np.float32))
    y = torch.from_numpy(np.stack(masks).astype(np.float32))
    return x, y


class SliceDataset(Dataset):
    """Axial-context slices with deterministic per-(seed, epoch, index) augmentation"""

    def __init__(self, items: Sequence[ContextItem], augment_config: Optional[AugmentConfig] = None, seed: int = 0):
        self.items = list(items)
        self.augment_config = augment_config
        self.seed = seed
        self.epoch = 0

    def set_epoch(self, epoch: int):
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, idx: int):
        sample, context = self.items[idx]
        mask = sample.mask
        if self.augment_config is not None:
            rng = np.random.default_rng([self.seed, self.epoch, idx])
            context, mask = augment(context, mask, self.augment_config, rng)
        x = torch.from_numpy(np.ascontiguousarray(context, dtype=np.float32))
        y = torch.from_numpy(np.ascontiguousarray(mask, dtype=np.float32))
        return x, y, idx

    def site_ids(self) -> List[str]:
        return [sample.site_id for sample, _ in self.items]


def make_loader(dataset: SliceDataset, batch_size: int, shuffle: bool, seed: int, num_workers: int = 0) -> DataLoader:
    """DataLoader whose shuffling order is fixed by `seed`."""
    generator = torch.Generator()
    generator.manual_seed(seed)
    return DataLoader(dataset, batch_size=batch_size, shuffle=shuffle, generator=generator,
                      num_workers=num_workers, drop_last=False)
