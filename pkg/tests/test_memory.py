from collections import Counter

import numpy as np
import pytest

from itl_seg.data import SynthSiteSpec
from itl_seg.data.preprocess import preprocess_site
from itl_seg.data.synth import synthesize_site
from itl_seg.error import MemoryStoreError
from itl_seg.memory import (MemoryStore, load_memory_manifest, quota, sample_rehearsal_batch,
                            save_memory_manifest, update_memory)


def _site(site_id, num_cases=10, slices=5, seed=0):
    spec = SynthSiteSpec(site_id, num_cases=num_cases, slices_per_case=slices, rng_seed=seed)
    return preprocess_site(synthesize_site(spec, (16, 16)), (16, 16))


@pytest.fixture(scope="module")
def forty():
    site = _site("A")
    assert len(site.train) == 40
    return site


@pytest.mark.parametrize("gamma, size, expected", [(5, 100, 5), (1, 30, 1), (0, 30, 0), (3, 50, 2), (5, 40, 2)])
def test_quota(gamma, size, expected):
    assert quota(gamma, size) == expected


def test_quota_rejects_negative():
    with pytest.raises(ValueError):
        quota(-1, 10)


def test_update_adds_quota(forty):
    store = update_memory(MemoryStore(gamma_percent=5.0), forty, np.random.default_rng(0))
    assert store.sites == ["A"]
    assert len(store.exemplars("A")) == 2
    keys = {s.key for s in forty.train}
    assert all(e.sample.key in keys for e in store.exemplars("A"))
    assert all(e.context.shape == (3, 16, 16) for e in store.exemplars("A"))


def test_update_is_append_only(forty):
    first = update_memory(MemoryStore(gamma_percent=10.0), forty, np.random.default_rng(1))
    before = [(e.key, e.sample.image.tobytes()) for e in first.exemplars("A")]
    second = update_memory(first, _site("B", seed=2), np.random.default_rng(2))
    assert [(e.key, e.sample.image.tobytes()) for e in second.exemplars("A")] == before
    assert second.sites == ["A", "B"]
    assert first.sites == ["A"]


def test_update_is_deterministic(forty):
    a = update_memory(MemoryStore(gamma_percent=10.0, selection_seed=3), forty)
    b = update_memory(MemoryStore(gamma_percent=10.0, selection_seed=3), forty)
    assert [e.key for e in a.exemplars("A")] == [e.key for e in b.exemplars("A")]


def test_update_rejects_known_site(forty):
    store = update_memory(MemoryStore(), forty)
    with pytest.raises(MemoryStoreError):
        update_memory(store, forty)


def test_gamma_zero_keeps_empty_list(forty):
    store = update_memory(MemoryStore(gamma_percent=0.0), forty)
    assert "A" in store
    assert store.is_empty()
    assert sample_rehearsal_batch(store, 5, np.random.default_rng(0)) == {}


def test_update_prefers_fit_cases(forty):
    fit_cases = sorted(forty.case_ids("train"))[:7]
    store = update_memory(MemoryStore(gamma_percent=50.0), forty, np.random.default_rng(0), fit_case_ids=fit_cases)
    exemplars = store.exemplars("A")
    assert len(exemplars) == 20
    assert {e.sample.case_id for e in exemplars} <= set(fit_cases)


def test_update_tops_up_from_held_out_cases(forty):
    fit_cases = sorted(forty.case_ids("train"))[:7]
    store = update_memory(MemoryStore(gamma_percent=100.0), forty, np.random.default_rng(0), fit_case_ids=fit_cases)
    assert sorted(e.sample.key for e in store.exemplars("A")) == sorted(s.key for s in forty.train)


def test_rehearsal_exhaustive_single_site():
    store = update_memory(MemoryStore(gamma_percent=100.0), _site("A", num_cases=2, slices=5))
    assert len(store.exemplars("A")) == 5
    batch = sample_rehearsal_batch(store, 5, np.random.default_rng(0))
    assert list(batch) == ["A"]
    assert sorted(e.key for e in batch["A"]) == sorted(e.key for e in store.exemplars("A"))


def test_rehearsal_empty_store():
    assert sample_rehearsal_batch(MemoryStore(), 5, np.random.default_rng(0)) == {}


def test_rehearsal_is_balanced_across_sites(forty):
    store = update_memory(MemoryStore(gamma_percent=10.0), forty)
    store = update_memory(store, _site("B", num_cases=20, slices=5, seed=5))
    assert len(store.exemplars("A")) != len(store.exemplars("B"))
    rng = np.random.default_rng(0)
    counts = Counter()
    for _ in range(1000):
        for site_id, exemplars in sample_rehearsal_batch(store, 5, rng).items():
            counts[site_id] += len(exemplars)
    total = sum(counts.values())
    assert total == 5000
    assert abs(counts["A"] / total - 0.5) < 0.05


def test_manifest_round_trip(tmp_path, forty):
    b = _site("B", seed=7)
    store = update_memory(update_memory(MemoryStore(gamma_percent=10.0), forty), b)
    save_memory_manifest(store, tmp_path / "memory.json")
    restored = load_memory_manifest(tmp_path / "memory.json", [forty, b])
    assert restored.to_manifest() == store.to_manifest()
    for site_id in store:
        for x, y in zip(store.exemplars(site_id), restored.exemplars(site_id)):
            assert np.array_equal(x.context, y.context)


def test_manifest_unknown_site(forty):
    manifest = {"gamma_percent": 5.0, "selection_seed": 0, "sites": {"Z": [["case00", 0]]}}
    with pytest.raises(MemoryStoreError):
        MemoryStore.from_manifest(manifest, [forty])
