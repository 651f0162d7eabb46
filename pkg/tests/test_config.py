import pytest
import yaml

from itl_seg.config import ExperimentConfig, config_from_dict, load_config, save_config
from itl_seg.error import ConfigError

DOC = {
    "train": {"epochs": 3, "gamma_percent": 3, "seed": 7, "scheme": "itl"},
    "encoder": {"kind": "tiny_cnn", "width": 8},
    "decoder": {"channels": [32, 16, 8, 8]},
    "loss": {"smoothing_eps": 1.0e-4, "site_alpha": {"B": 1.0}},
    "augment": {"flip_prob": 0.0},
    "data": {
        "image_size": [32, 32],
        "synth": [
            {"site_id": "A", "num_cases": 5, "slices_per_case": 2, "rng_seed": 1},
            {"site_id": "B", "num_cases": 5, "slices_per_case": 2, "shape_family": "blob",
             "size_range": [0.2, 0.3], "rng_seed": 2},
        ],
    },
    "site_order": ["B", "A"],
}


def _write(tmp_path, doc, name="experiment.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return path


def test_load_config(tmp_path):
    config = load_config(_write(tmp_path, DOC))
    assert config.train.epochs == 3
    assert config.train.seed == 7
    assert config.decoder.input_size == (32, 32)
    assert config.data.synth[1].size_range == (0.2, 0.3)
    assert config.site_order == ("B", "A")
    loss = config.loss_config()
    assert loss.smoothing_eps == 1.0e-4
    assert loss.alpha_for("B") == 1.0 and loss.alpha_for("A") == 0.5


def test_defaults():
    config = config_from_dict({})
    assert config.train.epochs == 100
    assert config.train.milestones == (60, 80)
    assert config.decoder.input_size == config.data.image_size == (96, 96)


def test_saved_config_loads_back_equal(tmp_path):
    config = load_config(_write(tmp_path, DOC))
    saved = save_config(config, tmp_path / "out" / "config.yaml")
    assert load_config(saved) == config


@pytest.mark.parametrize("doc, where", [
    ({"train": {"epoch": 3}}, "train.epoch"),
    ({"data": {"synth": [{"site_id": "A", "noise": 1}]}}, "data.synth[0].noise"),
    ({"trainer": {}}, "trainer"),
])
def test_unknown_keys_are_named(doc, where):
    with pytest.raises(ConfigError, match=where.replace("[", r"\[").replace("]", r"\]")):
        config_from_dict(doc)


@pytest.mark.parametrize("doc", [
    {"train": {"batch_size": 0}},
    {"train": {"scheme": "joint"}},
    {"encoder": {"kind": "res18", "pretrained": True}},
    {"decoder": {"channels": [8, 8]}},
    {"decoder": {"input_size": [64, 64]}},
    {"data": {"manifests": ["a.json"], "synth": [{"site_id": "A"}]}},
    {"site_order": ["A", "A"]},
    {"loss": {"smoothing_eps": 0}},
])
def test_invalid_values(doc):
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_relative_paths_resolve_against_config_dir(tmp_path):
    path = _write(tmp_path, {"data": {"manifests": ["sites/A/manifest.json"]}, "report": {"renderer_paths": ["r.py"]}})
    config = load_config(path)
    assert config.data.manifests == (str((tmp_path / "sites" / "A" / "manifest.json").resolve()),)
    assert config.report.renderer_paths == (str((tmp_path / "r.py").resolve()),)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("train: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_with_seed():
    config = ExperimentConfig().with_seed(4)
    assert config.train.seed == 4
