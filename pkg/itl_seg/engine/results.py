"""
Module results.py

This module contains the serializable outcomes of training: one PhaseResult
per incremental phase and the RunRecord that collects a whole run.

"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Union

from itl_seg.metrics import SiteMetrics
from itl_seg.util import read_json, write_json


@dataclass
class PhaseResult:
    phase_index: int
    trained_site: str
    metrics: Dict[str, SiteMetrics]
    loss_trace: List[dict] = field(default_factory=list)
    steps: int = 0
    train_samples: int = 0
    memory_size: int = 0
    source_digest_start: Optional[str] = None
    source_digest_end: Optional[str] = None
    mixing_entropy: Optional[float] = None
    checkpoint: Optional[str] = None

    @property
    def source_unchanged(self) -> bool:
        return self.source_digest_start == self.source_digest_end

    def epoch_losses(self, split: str = "train", key: str = "l_all") -> List[Optional[float]]:
        return [None if e[split] is None else e[split][key] for e in self.loss_trace]

    def to_dict(self) -> dict:
        return {
            "phase_index": self.phase_index,
            "trained_site": self.trained_site,
            "metrics": {k: v.to_dict() for k, v in self.metrics.items()},
            "loss_trace": self.loss_trace,
            "steps": self.steps,
            "train_samples": self.train_samples,
            "memory_size": self.memory_size,
            "source_digest_start": self.source_digest_start,
            "source_digest_end": self.source_digest_end,
            "mixing_entropy": self.mixing_entropy,
            "checkpoint": self.checkpoint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhaseResult":
        d = dict(d)
        d["metrics"] = {k: SiteMetrics.from_dict(v) for k, v in d["metrics"].items()}
        return cls(**d)


@dataclass
class RunRecord:
    """Everything a report needs about one training run"""
    scheme: str
    backbone: str
    gamma: float
    seed: int
    site_order: List[str]
    ablation: str = "none"
    results: List[PhaseResult] = field(default_factory=list)
    stored_parameters: int = 0
    models_stored: int = 1
    per_phase_samples: List[int] = field(default_factory=list)

    def __iter__(self) -> Iterator[PhaseResult]:
        return iter(self.results)

    def __len__(self) -> int:
        return len(self.results)

    def __getitem__(self, i: int) -> PhaseResult:
        return self.results[i]

    @property
    def config_key(self) -> tuple:
        """Runs sharing this key differ only in seed."""
        return (self.scheme, self.backbone, self.gamma, self.ablation, tuple(self.site_order))

    def metric_rows(self) -> List[dict]:
        rows = []
        for result in self.results:
            for site_id, m in result.metrics.items():
                rows.append({
                    "scheme": self.scheme,
                    "backbone": self.backbone,
                    "gamma": float(self.gamma),
                    "phase": result.phase_index,
                    "site": site_id,
                    "dsc_percent": m.dsc_percent,
                    "hd95_mm": m.hd95_mm,
                })
        return rows

    def final_metrics(self) -> Dict[str, SiteMetrics]:
        """Per-site metrics after the run (the last phase that evaluated each site)."""
        final = {}
        for result in self.results:
            final.update(result.metrics)
        return final

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "backbone": self.backbone,
            "gamma": self.gamma,
            "seed": self.seed,
            "site_order": list(self.site_order),
            "ablation": self.ablation,
            "results": [r.to_dict() for r in self.results],
            "stored_parameters": self.stored_parameters,
            "models_stored": self.models_stored,
            "per_phase_samples": list(self.per_phase_samples),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        d = dict(d)
        d["results"] = [PhaseResult.from_dict(r) for r in d["results"]]
        return cls(**d)

    def save(self, path: Union[str, Path]) -> None:
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunRecord":
        return cls.from_dict(read_json(path))
