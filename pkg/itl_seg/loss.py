"""
Module loss.py

This module contains the differentiable Dice loss and the incremental
objective built from it: the site-level loss on current-site data, the
model-level loss (target and source branches) on memory exemplars, and their
sum.

"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple, Union

import torch

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-5

MemoryBatches = Mapping[str, Tuple[torch.Tensor, torch.Tensor]]
Weight = Union[float, Mapping[str, float]]


@dataclass
class LossConfig:
    """Loss weights; per-site overrides fall back to the scalar weights"""
    alpha: float = 0.5
    delta: float = 0.5
    smoothing_eps: float = DEFAULT_EPS
    site_alpha: Dict[str, float] = field(default_factory=dict)
    site_delta: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        weights = [self.alpha, self.delta, *self.site_alpha.values(), *self.site_delta.values()]
        if any(w < 0 for w in weights):
            raise ValueError("Loss weights alpha and delta must be >= 0")
        if self.smoothing_eps <= 0:
            raise ValueError(f"smoothing_eps must be > 0, got {self.smoothing_eps}")

    def alpha_for(self, site_id: str) -> float:
        return self.site_alpha.get(site_id, self.alpha)

    def delta_for(self, site_id: str) -> float:
        return self.site_delta.get(site_id, self.delta)


@dataclass
class LossBreakdown:
    l_site: torch.Tensor
    l_target: torch.Tensor
    l_source: torch.Tensor
    l_model: torch.Tensor
    l_all: torch.Tensor

    def as_dict(self) -> Dict[str, float]:
        return {
            "l_site": float(self.l_site.detach()),
            "l_target": float(self.l_target.detach()),
            "l_source": float(self.l_source.detach()),
            "l_model": float(self.l_model.detach()),
            "l_all": float(self.l_all.detach()),
        }


def _check_inputs(pred: torch.Tensor, gt: torch.Tensor) -> None:
    if pred.shape != gt.shape:
        raise ValueError(f"Shape mismatch: pred {tuple(pred.shape)} vs gt {tuple(gt.shape)}")
    with torch.no_grad():
        if pred.numel() and (pred.min() < 0 or pred.max() > 1):
            raise ValueError("Predicted probabilities must lie in [0, 1]")


def dice_loss(pred_prob: torch.Tensor, gt: torch.Tensor, eps: float = DEFAULT_EPS) -> torch.Tensor:
    """1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps) over the last two dims.

    An HxW input gives a scalar; a batch NxHxW gives N per-sample losses.
    """
    _check_inputs(pred_prob, gt)
    gt = gt.to(pred_prob.dtype)
    inter = (pred_prob * gt).sum(dim=(-2, -1))
    denom = pred_prob.sum(dim=(-2, -1)) + gt.sum(dim=(-2, -1))
    return 1.0 - (2.0 * inter + eps) / (denom + eps)


def _zero(model) -> torch.Tensor:
    return torch.zeros((), device=next(model.parameters()).device)


def _branch_loss(model, x: torch.Tensor, y: torch.Tensor, branch: str, eps: float) -> torch.Tensor:
    if x.shape[0] == 0:
        raise ValueError("Empty batch")
    return dice_loss(model(x, branch=branch), y, eps).mean()


def site_loss(model, x: torch.Tensor, y: torch.Tensor, eps: float = DEFAULT_EPS) -> torch.Tensor:
    """Mean target-branch Dice loss over a current-site batch."""
    return _branch_loss(model, x, y, "target", eps)


def _weight(weight: Weight, site_id: str) -> float:
    if isinstance(weight, Mapping):
        return float(weight[site_id])
    return float(weight)


def _memory_loss(model, memory_batches: MemoryBatches, weight: Weight, branch: str, eps: float) -> torch.Tensor:
    total = _zero(model)
    for site_id, (x, y) in memory_batches.items():
        w = _weight(weight, site_id)
        if w == 0:
            continue
        # Averaged within the site so its weight does not depend on exemplar count
        total = total + w * _branch_loss(model, x, y, branch, eps)
    return total


def target_memory_loss(model, memory_batches: MemoryBatches, alpha: Weight = 0.5,
                       eps: float = DEFAULT_EPS) -> torch.Tensor:
    """Weighted sum over past sites of target-branch Dice losses on exemplars."""
    if model.phase_index == 1:
        return _zero(model)
    if not memory_batches:
        logger.warning("Phase %d has an empty memory; target memory loss is 0", model.phase_index)
        return _zero(model)
    return _memory_loss(model, memory_batches, alpha, "target", eps)


def source_memory_loss(model, memory_batches: MemoryBatches, delta: Weight = 0.5,
                       eps: float = DEFAULT_EPS) -> torch.Tensor:
    """Weighted sum of frozen source-branch Dice losses on exemplars; only the encoder gets gradients."""
    if model.phase_index == 1:
        return _zero(model)
    if model.source_decoder is None:
        raise ValueError(f"Phase {model.phase_index} model has no source decoder")
    if not memory_batches:
        logger.warning("Phase %d has an empty memory; source memory loss is 0", model.phase_index)
        return _zero(model)
    return _memory_loss(model, memory_batches, delta, "source", eps)


def total_loss(l_site: torch.Tensor, l_target: Optional[torch.Tensor] = None,
               l_source: Optional[torch.Tensor] = None) -> LossBreakdown:
    """l_model = l_target + l_source; l_all = l_model + l_site."""
    l_site = torch.as_tensor(l_site)
    l_target = torch.zeros_like(l_site) if l_target is None else torch.as_tensor(l_target)
    l_source = torch.zeros_like(l_site) if l_source is None else torch.as_tensor(l_source)
    l_model = l_target + l_source
    return LossBreakdown(l_site=l_site, l_target=l_target, l_source=l_source, l_model=l_model,
                         l_all=l_model + l_site)


def compute_breakdown(model, x: torch.Tensor, y: torch.Tensor, memory_batches: Optional[MemoryBatches],
                      config: LossConfig, use_model_loss: bool = True) -> LossBreakdown:
    """Full loss of one optimizer step."""
    eps = config.smoothing_eps
    l_site = site_loss(model, x, y, eps)
    if not use_model_loss or model.phase_index == 1 or not memory_batches:
        return total_loss(l_site)
    sites = list(memory_batches)
    alpha = {s: config.alpha_for(s) for s in sites}
    delta = {s: config.delta_for(s) for s in sites}
    return total_loss(
        l_site,
        target_memory_loss(model, memory_batches, alpha, eps),
        source_memory_loss(model, memory_batches, delta, eps),
    )
