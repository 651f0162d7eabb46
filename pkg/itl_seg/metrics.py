"""
Module metrics.py

This module contains the segmentation quality metrics (Dice, percentile
Hausdorff distance), per-case and per-site aggregation, the forgetting matrix
across incremental phases and the metrics CSV format.

Conventions:
- boundary pixels are foreground pixels with at least one 4-connected
  background neighbour; pixels outside the image count as background
- distances are pooled over both directions (pred->gt and gt->pred) and
  over all slices of a case, each slice matched within itself
- percentiles interpolate linearly between order statistics
- both masks empty: Dice 1, distance 0; one empty: Dice 0 and the image
  diagonal in millimetres for the distance

"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from scipy import ndimage
from scipy.spatial import cKDTree

from itl_seg.data.preprocess import make_augmented_input
from itl_seg.data.types import SiteDataset
from itl_seg.error import CheckpointError, DatasetError

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("scheme", "backbone", "gamma", "phase", "site", "dsc_percent", "hd95_mm")

_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass
class SiteMetrics:
    """Mean test metrics of one site, with the per-case values they average"""
    site_id: str
    dsc_percent: float
    hd95_mm: float
    per_case: List[Tuple[str, float, float]] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.dsc_percent <= 100.0 + 1e-9:
            raise ValueError(f"dsc_percent out of range: {self.dsc_percent}")
        if self.hd95_mm < 0:
            raise ValueError(f"hd95_mm must be >= 0, got {self.hd95_mm}")

    def to_dict(self) -> dict:
        return {
            "site_id": self.site_id,
            "dsc_percent": self.dsc_percent,
            "hd95_mm": self.hd95_mm,
            "per_case": [list(c) for c in self.per_case],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SiteMetrics":
        return cls(d["site_id"], float(d["dsc_percent"]), float(d["hd95_mm"]),
                   [(c[0], float(c[1]), float(c[2])) for c in d.get("per_case", [])])


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"Shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    for name, m in (("pred", pred), ("gt", gt)):
        if m.dtype != bool and not np.isin(m, (0, 1)).all():
            raise ValueError(f"{name} is not a binary mask")
    return pred.astype(bool), gt.astype(bool)


def dice_coefficient(pred: np.ndarray, gt: np.ndarray) -> float:
    """2|P and G| / (|P| + |G|); two empty masks score 1."""
    p, g = _check_pair(pred, gt)
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, g).sum()) / total


def boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with a 4-connected background neighbour (image border is background)."""
    m = np.asarray(mask, dtype=bool)
    eroded = ndimage.binary_erosion(m, structure=_FOUR_CONNECTED, border_value=0)
    return m & ~eroded


def diagonal_mm(shape: Tuple[int, int], spacing_mm: float) -> float:
    """Sentinel distance when exactly one mask is empty."""
    return math.hypot(shape[0], shape[1]) * spacing_mm


def _in_plane(spacing_mm: Union[float, Sequence[float]]) -> float:
    if np.ndim(spacing_mm) == 0:
        return float(spacing_mm)
    return float(spacing_mm[0])


def _slice_distances(pred: np.ndarray, gt: np.ndarray, sentinel: float) -> np.ndarray:
    """Symmetric nearest-boundary distances of one slice, in pixels."""
    bp = np.argwhere(boundary(pred))
    bg = np.argwhere(boundary(gt))
    if len(bp) == 0 and len(bg) == 0:
        return np.empty(0)
    if len(bp) == 0 or len(bg) == 0:
        return np.full(len(bp) + len(bg), sentinel)
    d_pg, _ = cKDTree(bg).query(bp, k=1)
    d_gp, _ = cKDTree(bp).query(bg, k=1)
    return np.concatenate([d_pg, d_gp])


def surface_distances(pred: np.ndarray, gt: np.ndarray, spacing_mm: Union[float, Sequence[float]] = 1.0) -> np.ndarray:
    """Pooled boundary distances in mm of a slice (HxW) or a case stack (DxHxW)."""
    p, g = _check_pair(pred, gt)
    if p.ndim == 2:
        p, g = p[None], g[None]
    if p.ndim != 3:
        raise ValueError(f"Expected HxW or DxHxW masks, got {p.shape}")
    spacing = _in_plane(spacing_mm)
    sentinel_px = math.hypot(p.shape[1], p.shape[2])
    parts = [_slice_distances(ps, gs, sentinel_px) for ps, gs in zip(p, g)]
    return np.concatenate(parts) * spacing if parts else np.empty(0)


def hausdorff_percentile(pred: np.ndarray, gt: np.ndarray, spacing_mm: Union[float, Sequence[float]] = 1.0,
                         q: float = 95.0) -> float:
    """q-th percentile of pooled symmetric boundary distances; q = 100 is the Hausdorff distance."""
    p, g = _check_pair(pred, gt)
    has_p, has_g = bool(p.any()), bool(g.any())
    if not has_p and not has_g:
        return 0.0
    if has_p != has_g:
        return diagonal_mm(p.shape[-2:], _in_plane(spacing_mm))
    distances = surface_distances(p, g, spacing_mm)
    return float(np.percentile(distances, q))


def hd95(pred: np.ndarray, gt: np.ndarray, spacing_mm: Union[float, Sequence[float]] = 1.0) -> float:
    return hausdorff_percentile(pred, gt, spacing_mm, q=95.0)


def case_metrics(pred_stack: np.ndarray, gt_stack: np.ndarray,
                 spacing_mm: Union[float, Sequence[float]] = 1.0) -> Tuple[float, float]:
    """(dice, hd95_mm) of one case, slices aggregated as one stacked mask set."""
    return dice_coefficient(pred_stack, gt_stack), hd95(pred_stack, gt_stack, spacing_mm)


def predict_case(bundle, volume: np.ndarray, threshold: float = 0.5,
                 batch_size: int = 16) -> Tuple[np.ndarray, np.ndarray]:
    """Target-branch probabilities and binarized masks for every slice of a DxHxW case volume."""
    volume = np.asarray(volume, dtype=np.float32)
    contexts = [make_augmented_input(volume, k).channels for k in range(volume.shape[0])]
    device = next(bundle.parameters()).device
    was_training = bundle.training
    bundle.eval()
    probs = []
    try:
        with torch.no_grad():
            for start in range(0, len(contexts), batch_size):
                x = torch.from_numpy(np.stack(contexts[start:start + batch_size])).to(device)
                probs.append(bundle(x, branch="target").cpu().numpy())
    finally:
        bundle.train(was_training)
    prob = np.concatenate(probs, axis=0)
    return prob, (prob >= threshold).astype(np.uint8)


def score_site(site: SiteDataset, predictions: Mapping[str, np.ndarray]) -> SiteMetrics:
    """Average per-case metrics of binary prediction stacks keyed by test case id."""
    cases = site.cases("test")
    if not cases:
        raise DatasetError(f"Site {site.site_id} has an empty test set")
    per_case = []
    for case_id, slices in cases.items():
        if case_id not in predictions:
            raise DatasetError(f"No prediction for test case of site {site.site_id}", case_id=case_id)
        gt = np.stack([s.mask for s in slices], axis=0)
        dsc, hd = case_metrics(predictions[case_id], gt, slices[0].spacing_mm)
        per_case.append((case_id, dsc, hd))
    return SiteMetrics(
        site_id=site.site_id,
        dsc_percent=100.0 * float(np.mean([c[1] for c in per_case])),
        hd95_mm=float(np.mean([c[2] for c in per_case])),
        per_case=per_case,
    )


def evaluate_site(model, site: SiteDataset, threshold: float = 0.5,
                  predictions_out: Optional[Dict[str, np.ndarray]] = None) -> SiteMetrics:
    """Predict every test case of `site` with the target branch and score it."""
    expected = tuple(model.decoder_spec.input_size)
    if site.image_shape is not None and tuple(site.image_shape) != expected:
        raise CheckpointError(f"Model expects {expected} slices but site {site.site_id} has {site.image_shape}")
    predictions = {}
    for case_id in site.cases("test"):
        _, binary = predict_case(model, site.case_volume(case_id, "test"), threshold)
        predictions[case_id] = binary
    if predictions_out is not None:
        predictions_out.update(predictions)
    metrics = score_site(site, predictions)
    logger.debug("Site %s: DSC %.2f%%, 95HD %.2f mm", site.site_id, metrics.dsc_percent, metrics.hd95_mm)
    return metrics


@dataclass
class ForgettingMatrix:
    """Per-phase metrics of every site seen so far (lower-triangular)"""
    phases: List[int]
    sites: List[str]
    entries: Dict[Tuple[int, str], SiteMetrics]
    learned_phase: Dict[str, int]

    def get(self, phase: int, site: str) -> Optional[SiteMetrics]:
        return self.entries.get((phase, site))

    def delta(self, site: str, attr: str = "dsc_percent", phase: Optional[int] = None) -> float:
        """metric(phase) - metric(phase the site was learned); `phase` defaults to the last one."""
        phase = self.phases[-1] if phase is None else phase
        now = self.entries[(phase, site)]
        then = self.entries[(self.learned_phase[site], site)]
        return getattr(now, attr) - getattr(then, attr)

    @property
    def deltas(self) -> Dict[str, Tuple[float, float]]:
        return {s: (self.delta(s, "dsc_percent"), self.delta(s, "hd95_mm")) for s in self.sites}

    def to_rows(self) -> List[dict]:
        rows = []
        for phase in self.phases:
            for site in self.sites:
                m = self.get(phase, site)
                if m is None:
                    continue
                rows.append({
                    "phase": phase,
                    "site": site,
                    "dsc_percent": m.dsc_percent,
                    "hd95_mm": m.hd95_mm,
                    "dsc_delta": self.delta(site, "dsc_percent", phase),
                    "hd95_delta": self.delta(site, "hd95_mm", phase),
                })
        return rows


def forgetting_matrix(results: Sequence) -> ForgettingMatrix:
    """Build the phase x site table from PhaseResults ordered by phase."""
    phases, sites, entries, learned = [], [], {}, {}
    for result in results:
        if result.phase_index not in phases:
            phases.append(result.phase_index)
        for site_id, m in result.metrics.items():
            if site_id not in learned:
                learned[site_id] = result.phase_index
                sites.append(site_id)
            entries[(result.phase_index, site_id)] = m
    return ForgettingMatrix(phases=phases, sites=sites, entries=entries, learned_phase=learned)


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def write_metrics_csv(rows: Iterable[Mapping], path: Union[str, Path]) -> Path:
    """Write metric rows with the (scheme, backbone, gamma, phase, site, dsc_percent, hd95_mm) columns."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return path


def read_metrics_csv(path: Union[str, Path]) -> List[dict]:
    with open(path, "r", newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path} is not a metrics CSV: columns {reader.fieldnames}")
        rows = []
        for r in reader:
            rows.append({
                "scheme": r["scheme"],
                "backbone": r["backbone"],
                "gamma": float(r["gamma"]),
                "phase": int(r["phase"]),
                "site": r["site"],
                "dsc_percent": float(r["dsc_percent"]),
                "hd95_mm": float(r["hd95_mm"]),
            })
        return rows
