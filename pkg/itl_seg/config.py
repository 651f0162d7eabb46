"""
Module config.py

This module contains the experiment configuration: one YAML (or JSON)
document binding training, architecture, loss, augmentation, data and report
settings. Every section maps onto a dataclass; unknown keys are rejected.

Example:

    train: {epochs: 20, gamma_percent: 5, seed: 0, scheme: itl}
    encoder: {kind: tiny_cnn, width: 16}
    decoder: {channels: [64, 32, 16, 8]}
    data:
      image_size: [96, 96]
      synth:
        - {site_id: A, intensity_mean: 0.0, rng_seed: 1}
        - {site_id: B, intensity_mean: 1.5, shape_family: blob, rng_seed: 2}
    site_order: [A, B]

"""

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, List, Mapping, Optional, Tuple, Type, Union

import yaml

from itl_seg.data.augment import AugmentConfig
from itl_seg.data.types import SynthSiteSpec
from itl_seg.engine.config import TrainConfig
from itl_seg.error import ConfigError
from itl_seg.loss import LossConfig
from itl_seg.model.specs import DecoderSpec, EncoderSpec

logger = logging.getLogger(__name__)

TOP_LEVEL_KEYS = ("train", "encoder", "decoder", "loss", "augment", "data", "site_order", "output_dir", "report")


@dataclass(frozen=True)
class DataConfig:
    manifests: Tuple[str, ...] = ()
    synth: Tuple[SynthSiteSpec, ...] = ()
    image_size: Tuple[int, int] = (96, 96)
    split_seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "manifests", tuple(str(m) for m in self.manifests))
        object.__setattr__(self, "synth", tuple(self.synth))
        object.__setattr__(self, "image_size", tuple(int(s) for s in self.image_size))
        if len(self.image_size) != 2 or min(self.image_size) < 1:
            raise ConfigError(f"data.image_size must be two positive integers, got {self.image_size}")
        if self.manifests and self.synth:
            raise ConfigError("data.manifests and data.synth are mutually exclusive")

    def to_dict(self) -> dict:
        d = {"image_size": list(self.image_size), "split_seed": self.split_seed}
        if self.manifests:
            d["manifests"] = list(self.manifests)
        if self.synth:
            d["synth"] = [_spec_to_dict(s) for s in self.synth]
        return d


@dataclass(frozen=True)
class ReportConfig:
    renderer_paths: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "renderer_paths", tuple(str(p) for p in self.renderer_paths))

    def to_dict(self) -> dict:
        return {"renderer_paths": list(self.renderer_paths)}


@dataclass(frozen=True)
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    decoder: DecoderSpec = field(default_factory=lambda: DecoderSpec(input_size=(96, 96)))
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    data: DataConfig = field(default_factory=DataConfig)
    site_order: Optional[Tuple[str, ...]] = None
    output_dir: Optional[str] = None
    report: ReportConfig = field(default_factory=ReportConfig)

    def __post_init__(self):
        if self.decoder.input_size != self.data.image_size:
            raise ConfigError(f"decoder.input_size {self.decoder.input_size} differs from "
                              f"data.image_size {self.data.image_size}")
        if self.site_order is not None:
            object.__setattr__(self, "site_order", tuple(self.site_order))
            if len(set(self.site_order)) != len(self.site_order):
                raise ConfigError(f"site_order repeats a site: {list(self.site_order)}")

    def loss_config(self) -> LossConfig:
        return dataclasses.replace(self.loss, alpha=self.train.alpha, delta=self.train.delta)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, train=self.train.with_overrides(seed=seed))

    def with_output_dir(self, output_dir: Union[str, Path]) -> "ExperimentConfig":
        return dataclasses.replace(self, output_dir=str(output_dir))

    def to_dict(self) -> dict:
        return {
            "train": self.train.to_dict(),
            "encoder": self.encoder.to_dict(),
            "decoder": {"channels": list(self.decoder.channels)},
            "loss": {"smoothing_eps": self.loss.smoothing_eps, "site_alpha": dict(self.loss.site_alpha),
                     "site_delta": dict(self.loss.site_delta)},
            "augment": dataclasses.asdict(self.augment),
            "data": self.data.to_dict(),
            "site_order": list(self.site_order) if self.site_order is not None else None,
            "output_dir": self.output_dir,
            "report": self.report.to_dict(),
        }


def _spec_to_dict(spec: SynthSiteSpec) -> dict:
    d = dataclasses.asdict(spec)
    d["size_range"] = list(spec.size_range)
    return d


def _section(cls: Type, values: Any, where: str, exclude: Tuple[str, ...] = (), **extra):
    """Build a dataclass section, rejecting unknown keys with their full path."""
    if values is None:
        values = {}
    if not isinstance(values, Mapping):
        raise ConfigError(f"{where} must be a mapping, got {type(values).__name__}")
    known = {f.name for f in dataclasses.fields(cls)} - set(exclude)
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"Unknown key(s) in {where}: " + ", ".join(f"{where}.{k}" for k in unknown))
    try:
        return cls(**{**values, **extra})
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid {where}: {e}") from e


def _resolve(path: str, base_dir: Optional[Path]) -> str:
    p = Path(os.path.expanduser(path))
    if not p.is_absolute() and base_dir is not None:
        p = base_dir / p
    return str(p.resolve())


def config_from_dict(doc: Optional[Mapping], base_dir: Optional[Path] = None) -> ExperimentConfig:
    """Validate a parsed config document; relative paths resolve against `base_dir`."""
    doc = doc or {}
    if not isinstance(doc, Mapping):
        raise ConfigError("The config document must be a mapping")
    unknown = sorted(set(doc) - set(TOP_LEVEL_KEYS))
    if unknown:
        raise ConfigError(f"Unknown top-level key(s): {', '.join(unknown)}")

    data_doc = doc.get("data") or {}
    if not isinstance(data_doc, Mapping):
        raise ConfigError("data must be a mapping")
    synth_docs = data_doc.get("synth") or []
    if not isinstance(synth_docs, list):
        raise ConfigError("data.synth must be a list of site specs")
    synth = []
    for i, s in enumerate(synth_docs):
        if isinstance(s, Mapping) and "size_range" in s:
            s = {**s, "size_range": tuple(s["size_range"])}
        synth.append(_section(SynthSiteSpec, s, f"data.synth[{i}]"))
    manifests = [_resolve(m, base_dir) for m in (data_doc.get("manifests") or [])]
    data = _section(DataConfig, {k: v for k, v in data_doc.items() if k not in ("synth", "manifests")}, "data",
                    synth=tuple(synth), manifests=tuple(manifests))

    decoder_doc = dict(doc.get("decoder") or {})
    if "input_size" in decoder_doc and tuple(decoder_doc["input_size"]) != data.image_size:
        raise ConfigError(f"decoder.input_size {decoder_doc['input_size']} differs from data.image_size")
    decoder_doc.pop("input_size", None)

    encoder_doc = dict(doc.get("encoder") or {})
    if encoder_doc.get("weights_path"):
        encoder_doc["weights_path"] = _resolve(encoder_doc["weights_path"], base_dir)

    report_doc = dict(doc.get("report") or {})
    report_doc["renderer_paths"] = [_resolve(p, base_dir) for p in report_doc.get("renderer_paths") or []]

    output_dir = doc.get("output_dir")
    return ExperimentConfig(
        train=_section(TrainConfig, doc.get("train"), "train"),
        encoder=_section(EncoderSpec, encoder_doc, "encoder"),
        decoder=_section(DecoderSpec, decoder_doc, "decoder", exclude=("input_size",), input_size=data.image_size),
        loss=_section(LossConfig, doc.get("loss"), "loss", exclude=("alpha", "delta")),
        augment=_section(AugmentConfig, doc.get("augment"), "augment"),
        data=data,
        site_order=doc.get("site_order"),
        output_dir=_resolve(output_dir, base_dir) if output_dir else None,
        report=_section(ReportConfig, report_doc, "report"),
    )


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Parse and validate a YAML/JSON experiment config."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, "r") as f:
            doc = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse {path}: {e}") from e
    return config_from_dict(doc, base_dir=path.parent.resolve())


def save_config(config: ExperimentConfig, path: Union[str, Path]) -> Path:
    """Write the effective config; loading it back gives an equal config."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        yaml.safe_dump(config.to_dict(), f, sort_keys=False)
    return path
