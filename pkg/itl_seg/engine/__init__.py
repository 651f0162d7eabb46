"""
Engine package.

This package contains the training orchestration:
- TrainConfig and the learning-rate schedule
- The JSON-lines training log
- PhaseResult / RunRecord
- Engine: incremental phases, baselines, ablations and costs

"""

from .config import ABLATIONS, SCHEMES, TrainConfig, lr_at
from .runlog import TrainingLog, read_training_log
from .results import PhaseResult, RunRecord
from .trainer import ABLATION_MODES, Engine, mixing_entropy, report_costs

__all__ = [
    'ABLATIONS', 'SCHEMES', 'TrainConfig', 'lr_at',
    'TrainingLog', 'read_training_log',
    'PhaseResult', 'RunRecord',
    'ABLATION_MODES', 'Engine', 'mixing_entropy', 'report_costs',
]
