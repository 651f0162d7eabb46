"""
Module memory.py

This module contains the exemplar memory: an append-only store holding a
gamma-percent subset of every finished site's training slices, and the
round-robin rehearsal sampler used while training later sites.

The per-phase memory manifest is JSON:
    {"gamma_percent": 5.0, "selection_seed": 0,
     "sites": {"<site_id>": [["<case_id>", <slice_index>], ...], ...}}

"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Union

import numpy as np

from itl_seg.data.loader import context_items
from itl_seg.data.types import SiteDataset, SliceSample
from itl_seg.error import MemoryStoreError
from itl_seg.util import read_json, stable_hash, write_json

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Exemplar:
    """A stored training slice together with its 3-channel axial context"""
    sample: SliceSample
    context: np.ndarray

    @property
    def site_id(self) -> str:
        return self.sample.site_id

    @property
    def key(self):
        return (self.sample.case_id, self.sample.slice_index)


@dataclass
class MemoryStore:
    gamma_percent: float = 5.0
    selection_seed: int = 0
    per_site: Dict[str, List[Exemplar]] = field(default_factory=dict)

    def __post_init__(self):
        if self.gamma_percent < 0:
            raise ValueError(f"gamma_percent must be >= 0, got {self.gamma_percent}")

    def __contains__(self, site_id: str) -> bool:
        return site_id in self.per_site

    def __iter__(self) -> Iterator[str]:
        return iter(self.per_site)

    @property
    def sites(self) -> List[str]:
        return list(self.per_site)

    @property
    def total_size(self) -> int:
        return sum(len(v) for v in self.per_site.values())

    def is_empty(self) -> bool:
        return self.total_size == 0

    def exemplars(self, site_id: str) -> List[Exemplar]:
        return list(self.per_site[site_id])

    def to_manifest(self) -> dict:
        return {
            "gamma_percent": self.gamma_percent,
            "selection_seed": self.selection_seed,
            "sites": {s: [[e.sample.case_id, e.sample.slice_index] for e in ex] for s, ex in self.per_site.items()},
        }

    @classmethod
    def from_manifest(cls, manifest: Mapping, sites: Sequence[SiteDataset]) -> "MemoryStore":
        """Restore a store from its manifest and the training splits it was drawn from."""
        by_id = {s.site_id: s for s in sites}
        store = cls(gamma_percent=float(manifest["gamma_percent"]), selection_seed=int(manifest["selection_seed"]))
        for site_id, keys in manifest["sites"].items():
            if site_id not in by_id:
                raise MemoryStoreError(f"Memory manifest refers to unknown site {site_id}")
            lookup = {(s.case_id, s.slice_index): (s, ctx) for s, ctx in context_items(by_id[site_id], "train")}
            try:
                store.per_site[site_id] = [Exemplar(*lookup[(c, int(i))]) for c, i in keys]
            except KeyError as e:
                raise MemoryStoreError(f"Memory manifest entry {e} is not a training slice of {site_id}") from e
        return store


def quota(gamma_percent: float, site_train_size: int) -> int:
    """Exemplars kept for a site: 0 when gamma is 0, else at least 1."""
    if gamma_percent < 0 or site_train_size < 1:
        raise ValueError(f"Invalid quota arguments: gamma={gamma_percent}, size={site_train_size}")
    if gamma_percent == 0:
        return 0
    return max(1, round(gamma_percent / 100.0 * site_train_size))


def update_memory(store: MemoryStore, finished_site: SiteDataset,
                  rng: Optional[np.random.Generator] = None,
                  fit_case_ids: Optional[Sequence[str]] = None) -> MemoryStore:
    """Append a uniform random quota of the site's training slices; earlier sites are untouched.

    With `fit_case_ids`, exemplars are drawn from those cases first; slices of
    the other training cases only fill a quota larger than the fit cases hold.
    """
    site_id = finished_site.site_id
    if site_id in store:
        raise MemoryStoreError(f"Site {site_id} is already in memory")
    if rng is None:
        rng = np.random.default_rng([store.selection_seed, stable_hash(site_id)])

    items = context_items(finished_site, "train")
    k = quota(store.gamma_percent, len(items))
    if fit_case_ids is None:
        preferred, rest = list(range(len(items))), []
    else:
        fit = set(fit_case_ids)
        preferred = [i for i, (s, _) in enumerate(items) if s.case_id in fit]
        rest = [i for i, (s, _) in enumerate(items) if s.case_id not in fit]
    n_first = min(k, len(preferred))
    picks = list(rng.choice(preferred, size=n_first, replace=False)) if n_first else []
    if k > n_first:
        picks += list(rng.choice(rest, size=k - n_first, replace=False))
    per_site = dict(store.per_site)
    per_site[site_id] = [Exemplar(*items[i]) for i in sorted(picks)]
    logger.info("Memory: stored %d of %d slices of %s (%d total)", k, len(items), site_id,
                sum(len(v) for v in per_site.values()))
    return MemoryStore(gamma_percent=store.gamma_percent, selection_seed=store.selection_seed, per_site=per_site)


def sample_rehearsal_batch(store: MemoryStore, batch_size: int,
                           rng: np.random.Generator) -> Dict[str, List[Exemplar]]:
    """Exemplars grouped by site; batch slots go round-robin over sites from a random start."""
    sites = [s for s in store.sites if store.per_site[s]]
    if not sites or batch_size < 1:
        return {}
    start = int(rng.integers(len(sites)))
    counts = {s: 0 for s in sites}
    for slot in range(batch_size):
        counts[sites[(start + slot) % len(sites)]] += 1

    batch = {}
    for site_id in sites:
        k = counts[site_id]
        if k == 0:
            continue
        pool = store.per_site[site_id]
        order = np.concatenate([rng.permutation(len(pool)) for _ in range(-(-k // len(pool)))])
        batch[site_id] = [pool[i] for i in order[:k]]
    return batch


def save_memory_manifest(store: MemoryStore, path: Union[str, Path]) -> None:
    write_json(path, store.to_manifest())


def load_memory_manifest(path: Union[str, Path], sites: Sequence[SiteDataset]) -> MemoryStore:
    return MemoryStore.from_manifest(read_json(path), sites)
