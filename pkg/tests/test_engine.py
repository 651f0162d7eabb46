import numpy as np
import pytest
import torch

from itl_seg.data import SynthSiteSpec
from itl_seg.data.preprocess import preprocess_site
from itl_seg.data.synth import synthesize_sites
from itl_seg.engine import (Engine, RunRecord, TrainConfig, lr_at, mixing_entropy, read_training_log,
                            report_costs)
from itl_seg.error import ConfigError, ITLError
from itl_seg.memory import MemoryStore, quota
from itl_seg.model import EncoderSpec, DecoderSpec, build_model, count_parameters, handoff


# 4 training cases per tiny site, one held out for validation, 3 slices each
FIT_SLICES = 9


def test_lr_schedule():
    config = TrainConfig()
    assert lr_at(0, config) == pytest.approx(0.001)
    assert lr_at(59, config) == pytest.approx(0.001)
    assert lr_at(60, config) == pytest.approx(0.00095)
    assert lr_at(85, config) == pytest.approx(0.0009025)
    with pytest.raises(ValueError):
        lr_at(100, config)


@pytest.mark.parametrize("changes", [
    {"epochs": 0}, {"scheme": "joint"}, {"ablation": "distill"}, {"gamma_percent": -1.0}, {"lr_decay": 1.5},
])
def test_train_config_validation(changes):
    with pytest.raises(ConfigError):
        TrainConfig(**changes)


def test_mixing_entropy():
    assert mixing_entropy(["A"] * 10) == 1.0
    assert mixing_entropy(["A", "B"] * 10) == pytest.approx(1.0)
    assert mixing_entropy(["A"] * 10 + ["B"] * 10) == pytest.approx(0.0)


def test_phase_one_has_no_model_loss(tiny_sites, fast_config, enc_spec, dec_spec):
    engine = Engine(fast_config, enc_spec, dec_spec)
    bundle = build_model(enc_spec, dec_spec)
    nxt, result, store = engine.run_phase(bundle, tiny_sites[0], MemoryStore(gamma_percent=50.0))
    steps = engine.log.steps(1)
    assert len(steps) == result.steps == 3
    for step in steps:
        assert step["l_target"] == 0.0 and step["l_source"] == 0.0 and step["l_model"] == 0.0
        assert step["l_all"] == pytest.approx(step["l_site"])
    assert nxt.phase_index == 2
    assert store.sites == ["A"]
    assert len(store.exemplars("A")) == quota(50.0, len(tiny_sites[0].train))
    assert result.train_samples == FIT_SLICES
    assert result.loss_trace[0]["val"] is not None


def test_phase_rejects_known_site(tiny_sites, fast_config, enc_spec, dec_spec):
    engine = Engine(fast_config, enc_spec, dec_spec)
    _, _, store = engine.run_phase(build_model(enc_spec, dec_spec), tiny_sites[0], MemoryStore())
    with pytest.raises(ConfigError):
        engine.run_phase(build_model(enc_spec, dec_spec, phase=2), tiny_sites[0], store)


def test_phase_memory_comes_from_fit_cases(tiny_sites, fast_config, enc_spec, dec_spec):
    engine = Engine(fast_config, enc_spec, dec_spec)
    _, held_out = engine._split_items(tiny_sites[0], fast_config)
    held_out_cases = {s.case_id for s, _ in held_out}
    assert held_out_cases
    _, _, store = engine.run_phase(build_model(enc_spec, dec_spec), tiny_sites[0], MemoryStore(gamma_percent=50.0))
    assert not {e.sample.case_id for e in store.exemplars("A")} & held_out_cases


def test_phase_fails_when_source_decoder_changes(monkeypatch, tiny_sites, fast_config, enc_spec, dec_spec):
    engine = Engine(fast_config, enc_spec, dec_spec)
    fit = engine._fit

    def fit_and_touch_source(bundle, *args, **kwargs):
        out = fit(bundle, *args, **kwargs)
        with torch.no_grad():
            next(bundle.source_decoder.parameters()).add_(1.0)
        return out

    monkeypatch.setattr(engine, "_fit", fit_and_touch_source)
    bundle = handoff(build_model(enc_spec, dec_spec))
    with pytest.raises(ITLError, match="Source decoder changed"):
        engine.run_phase(bundle, tiny_sites[1], MemoryStore(gamma_percent=50.0))


def test_itl_run(tiny_sites, fast_config, enc_spec, dec_spec):
    engine = Engine(fast_config, enc_spec, dec_spec)
    record = engine.run_itl(tiny_sites)
    assert [r.phase_index for r in record] == [1, 2, 3]
    assert [sorted(r.metrics) for r in record] == [["A"], ["A", "B"], ["A", "B", "C"]]
    assert all(r.source_unchanged for r in record)
    assert record[0].source_digest_start is None

    sizes = [len(s.train) for s in tiny_sites]
    expected_memory = np.cumsum([quota(50.0, n) for n in sizes])
    assert [r.memory_size for r in record] == list(expected_memory)
    assert record.per_phase_samples == [FIT_SLICES, FIT_SLICES + expected_memory[0], FIT_SLICES + expected_memory[1]]

    later = engine.log.steps(2) + engine.log.steps(3)
    assert any(s["l_model"] > 0 for s in later)
    assert all(s["l_all"] == pytest.approx(s["l_site"] + s["l_target"] + s["l_source"]) for s in later)


def test_itl_parameter_count_constant(tiny_sites, fast_config, enc_spec, dec_spec):
    record = Engine(fast_config, enc_spec, dec_spec).run_itl(tiny_sites)
    phase2 = build_model(enc_spec, dec_spec, phase=2)
    assert record.stored_parameters == count_parameters(phase2)[0]


def test_itl_is_deterministic(tmp_path, tiny_sites, fast_config, enc_spec, dec_spec):
    a = Engine(fast_config, enc_spec, dec_spec, out_dir=tmp_path / "a").run_itl(tiny_sites)
    b = Engine(fast_config, enc_spec, dec_spec, out_dir=tmp_path / "b").run_itl(tiny_sites)
    assert [r.loss_trace for r in a] == [r.loss_trace for r in b]
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_itl_run_directory(tmp_path, tiny_sites, fast_config, enc_spec, dec_spec):
    engine = Engine(fast_config, enc_spec, dec_spec, out_dir=tmp_path)
    record = engine.run_itl(tiny_sites)
    engine.close()
    assert (tmp_path / "checkpoints" / "phase03_C.pt").is_file()
    assert (tmp_path / "memory" / "phase02.json").is_file()
    assert record[2].checkpoint == "checkpoints/phase03_C.pt"
    loaded = RunRecord.load(tmp_path / "run.json")
    assert loaded.site_order == ["A", "B", "C"]
    assert loaded[1].metrics["A"].dsc_percent == pytest.approx(record[1].metrics["A"].dsc_percent)
    kinds = {r["kind"] for r in read_training_log(tmp_path / "train_log.jsonl")}
    assert kinds == {"step", "epoch"}


def test_orderings_both_complete(tiny_sites, fast_config, enc_spec, dec_spec):
    a, b, c = tiny_sites
    engine = Engine(fast_config, enc_spec, dec_spec)
    assert len(engine.run_itl([a, b, c])) == 3
    record = engine.run_itl([c, a, b])
    assert len(record) == 3
    assert record.site_order == ["C", "A", "B"]


def test_single_site_itl_equals_isolated(tiny_sites, fast_config, enc_spec, dec_spec):
    engine = Engine(fast_config, enc_spec, dec_spec)
    itl = engine.run_itl(tiny_sites[:1])
    isolated = engine.run_isolated(tiny_sites[:1])
    assert itl[0].loss_trace == isolated[0].loss_trace
    assert itl[0].metrics["A"].dsc_percent == isolated[0].metrics["A"].dsc_percent


def test_isolated(tiny_sites, fast_config, enc_spec, dec_spec):
    engine = Engine(fast_config, enc_spec, dec_spec)
    record = engine.run_isolated(tiny_sites)
    reversed_record = engine.run_isolated(tiny_sites[::-1])
    assert record.models_stored == 3
    assert record.stored_parameters == 3 * count_parameters(build_model(enc_spec, dec_spec))[0]
    assert [list(r.metrics) for r in record] == [["A"], ["B"], ["C"]]
    by_site = {r.trained_site: r for r in reversed_record}
    for r in record:
        assert r.loss_trace == by_site[r.trained_site].loss_trace


def test_mixed(tiny_sites, fast_config, enc_spec, dec_spec):
    record = Engine(fast_config, enc_spec, dec_spec).run_mixed(tiny_sites)
    assert len(record) == 1
    assert record.models_stored == 1
    assert record[0].train_samples == 3 * 9
    assert sorted(record[0].metrics) == ["A", "B", "C"]
    assert 0.0 <= record[0].mixing_entropy <= 1.0


def test_mixed_interleaves_sites(enc_spec, dec_spec):
    specs = [SynthSiteSpec(s, num_cases=10, slices_per_case=8, rng_seed=i) for i, s in enumerate("ABC")]
    sites = [preprocess_site(s, (32, 32)) for s in synthesize_sites(specs, (32, 32))]
    config = TrainConfig(epochs=1, batch_size=8)
    record = Engine(config, enc_spec, dec_spec).run_mixed(sites)
    assert record[0].mixing_entropy > 0.9


def test_multi_lower_bound_equals_pretrain_only_itl(tiny_sites, fast_config, enc_spec, dec_spec):
    engine = Engine(fast_config, enc_spec, dec_spec)
    multi = engine.run_multi_lower_bound(tiny_sites)
    itl = engine.run_itl(tiny_sites, fast_config.with_overrides(gamma_percent=0.0, ablation="pretrain_only"))
    assert multi.scheme == "multi"
    assert [r.loss_trace for r in multi] == [r.loss_trace for r in itl]
    assert all(e["train"]["l_model"] == 0.0 for r in multi for e in r.loss_trace)
    assert all(r.memory_size == 0 for r in multi)


def test_ablation_both_equals_itl(tiny_sites, fast_config, enc_spec, dec_spec):
    engine = Engine(fast_config, enc_spec, dec_spec)
    both = engine.run_ablation("both", tiny_sites)
    itl = engine.run_itl(tiny_sites)
    assert [r.loss_trace for r in both] == [r.loss_trace for r in itl]


def test_ablation_pretrain_only_has_no_model_loss(tiny_sites, fast_config, enc_spec, dec_spec):
    engine = Engine(fast_config, enc_spec, dec_spec)
    record = engine.run_ablation("pretrain_only", tiny_sites)
    assert record.ablation == "pretrain_only"
    assert all(s["l_model"] == 0.0 for s in engine.log.steps())


def test_ablation_model_loss_only_drops_pretraining(tmp_path, fast_config, dec_spec):
    spec = EncoderSpec(kind="res18", pretrained=True, weights_path=str(tmp_path / "weights.pt"))
    engine = Engine(fast_config, spec, dec_spec)
    built = engine._encoder_spec(fast_config.with_overrides(ablation="model_loss_only"))
    assert built.pretrained is False
    assert engine._encoder_spec(fast_config).pretrained is True


def test_ablation_rejects_unknown_mode(tiny_sites, fast_config, enc_spec, dec_spec):
    with pytest.raises(ConfigError):
        Engine(fast_config, enc_spec, dec_spec).run_ablation("none", tiny_sites)


def test_report_costs(tiny_sites, fast_config, enc_spec, dec_spec):
    engine = Engine(fast_config, enc_spec, dec_spec)
    rows = {r["scheme"]: r for r in report_costs([engine.run_itl(tiny_sites), engine.run_isolated(tiny_sites),
                                                  engine.run_mixed(tiny_sites)])}
    single = count_parameters(build_model(enc_spec, dec_spec))[0]
    assert rows["itl"]["grows_with_sites"] is False
    assert rows["itl"]["per_phase_samples"] == "9;15;21"
    assert rows["isolated"]["stored_parameters"] == 3 * single
    assert rows["isolated"]["grows_with_sites"] is True
    assert rows["mixed"]["per_phase_samples"] == "27"


def test_run_dispatches_on_scheme(tiny_sites, fast_config, enc_spec, dec_spec):
    record = Engine(fast_config.with_overrides(scheme="multi"), enc_spec, dec_spec).run(tiny_sites[:2])
    assert record.scheme == "multi"
    assert record.gamma == 0.0


DESK = [
    SynthSiteSpec("A", intensity_mean=0.0, noise_std=0.4, rng_seed=11),
    SynthSiteSpec("B", intensity_mean=2.5, contrast=0.6, shape_family="blob", noise_std=0.5, rng_seed=12),
    SynthSiteSpec("C", intensity_mean=-2.0, contrast=1.4, noise_std=0.8, size_range=(0.1, 0.2), rng_seed=13),
]


@pytest.fixture(scope="module")
def desk_sites():
    return [preprocess_site(s, (96, 96)) for s in synthesize_sites(DESK, (96, 96))]


def _desk_engine(config):
    return Engine(config, EncoderSpec(kind="tiny_cnn", width=8), DecoderSpec(channels=(64, 32, 16, 8), input_size=(96, 96)))


@pytest.mark.slow
def test_source_frozen_over_desk_run(desk_sites):
    record = _desk_engine(TrainConfig(epochs=20)).run_itl(desk_sites)
    assert all(r.source_unchanged for r in record)


@pytest.mark.slow
def test_memory_law_over_desk_run(desk_sites):
    for gamma in (0.0, 1.0, 3.0, 5.0):
        record = _desk_engine(TrainConfig(epochs=1, gamma_percent=gamma)).run_itl(desk_sites)
        expected = np.cumsum([quota(gamma, len(s.train)) for s in desk_sites])
        assert [r.memory_size for r in record] == list(expected)


@pytest.mark.slow
def test_rehearsal_reduces_forgetting(desk_sites):
    def first_site_dsc(config):
        values = []
        for seed in range(3):
            record = _desk_engine(config.with_overrides(seed=seed)).run(desk_sites)
            values.append(record[-1].metrics["A"].dsc_percent / 100.0)
        return float(np.mean(values))

    base = TrainConfig(epochs=20)
    itl5 = first_site_dsc(base.with_overrides(gamma_percent=5.0))
    itl1 = first_site_dsc(base.with_overrides(gamma_percent=1.0))
    lower = first_site_dsc(base.with_overrides(scheme="multi"))
    assert itl5 >= itl1 >= lower
    assert itl5 - lower >= 0.05


@pytest.mark.slow
def test_warm_start_converges_faster(desk_sites):
    config = TrainConfig(epochs=10, gamma_percent=0.0, ablation="pretrain_only")
    warm_losses, cold_losses = [], []
    for seed in range(3):
        engine = _desk_engine(config.with_overrides(seed=seed))
        warm, _, store = engine.run_phase(engine._fresh_bundle(engine.config, "A"), desk_sites[0], MemoryStore(gamma_percent=0.0))
        cold = build_model(engine.encoder_spec, engine.decoder_spec, phase=2, seed=seed + 100)
        _, warm_result, _ = engine.run_phase(warm, desk_sites[1], store)
        _, cold_result, _ = engine.run_phase(cold, desk_sites[1], store)
        warm_losses.append(warm_result.epoch_losses()[9])
        cold_losses.append(cold_result.epoch_losses()[9])
    assert np.mean(warm_losses) < np.mean(cold_losses)
