"""
Module synth.py

This module contains the synthetic multi-site generator used for desk-scale
experiments. Each site draws its foreground shapes, intensity, contrast and
noise from its own SynthSiteSpec, so sites form distinguishable input
distributions.

"""

import logging
import math
from typing import List, Sequence, Tuple

import numpy as np
from PIL import Image, ImageDraw

from itl_seg.data.preprocess import split_train_test
from itl_seg.data.types import SiteDataset, SiteMeta, SliceSample, SynthSiteSpec

logger = logging.getLogger(__name__)

POLYGON_VERTICES = 64


def _outline(cy: float, cx: float, ry: float, rx: float, angle: float,
             family: str, phases: Tuple[float, float]) -> List[Tuple[float, float]]:
    points = []
    for k in range(POLYGON_VERTICES):
        phi = 2 * math.pi * k / POLYGON_VERTICES
        scale = 1.0
        if family == "blob":
            scale = 1.0 + 0.2 * math.sin(3 * phi + phases[0]) + 0.1 * math.cos(5 * phi + phases[1])
        u, v = ry * scale * math.sin(phi), rx * scale * math.cos(phi)
        y = cy + u * math.cos(angle) - v * math.sin(angle)
        x = cx + u * math.sin(angle) + v * math.cos(angle)
        points.append((x, y))
    return points


def _rasterize(points: List[Tuple[float, float]], shape: Tuple[int, int]) -> np.ndarray:
    h, w = shape
    canvas = Image.new("L", (w, h), 0)
    ImageDraw.Draw(canvas).polygon(points, fill=1, outline=1)
    return np.array(canvas, dtype=np.uint8)


def synthesize_case(spec: SynthSiteSpec, case_index: int, shape: Tuple[int, int]) -> List[SliceSample]:
    """Generate all slices of one case; deterministic in (rng_seed, case_index)."""
    rng = np.random.default_rng([spec.rng_seed, case_index])
    h, w = shape
    case_id = f"{spec.site_id}_case{case_index:03d}"

    case_mean = spec.intensity_mean + spec.intensity_std * rng.standard_normal()
    radius = rng.uniform(*spec.size_range) * min(h, w)
    aspect = rng.uniform(0.75, 1.25)
    cy = h / 2 + rng.uniform(-0.12, 0.12) * h
    cx = w / 2 + rng.uniform(-0.12, 0.12) * w
    angle = rng.uniform(0, math.pi)
    phases = (rng.uniform(0, 2 * math.pi), rng.uniform(0, 2 * math.pi))

    n = spec.slices_per_case
    mid = (n - 1) / 2
    samples = []
    for k in range(n):
        # Organ cross-section shrinks towards both ends of the volume
        profile = math.sqrt(max(0.25, 1.0 - ((k - mid) / (n / 2 + 0.5)) ** 2))
        points = _outline(cy, cx, radius * profile * aspect, radius * profile / aspect, angle, spec.shape_family, phases)
        mask = _rasterize(points, shape)
        image = case_mean + spec.contrast * mask.astype(np.float64)
        if spec.noise_std > 0:
            image = image + spec.noise_std * rng.standard_normal(shape)
        samples.append(SliceSample(
            site_id=spec.site_id,
            case_id=case_id,
            slice_index=k,
            image=image.astype(np.float32),
            mask=mask,
            spacing_mm=(spec.in_plane_mm, spec.through_plane_mm),
        ))
    return samples


def synthesize_site(spec: SynthSiteSpec, shape: Tuple[int, int] = (96, 96)) -> SiteDataset:
    """Generate one raw (un-normalized) synthetic site split 4:1 by case."""
    samples = []
    for c in range(spec.num_cases):
        samples.extend(synthesize_case(spec, c, shape))
    case_ids = sorted({s.case_id for s in samples})
    train_ids, _ = split_train_test(case_ids, seed=spec.rng_seed)
    train_set = set(train_ids)
    meta = SiteMeta(
        site_id=spec.site_id,
        modality="synthetic",
        num_cases=spec.num_cases,
        in_plane_resolution_mm=(spec.in_plane_mm, spec.in_plane_mm),
        through_plane_mm=(spec.through_plane_mm, spec.through_plane_mm),
        source_name=f"synthetic:{spec.shape_family}",
    )
    return SiteDataset(
        meta=meta,
        train=[s for s in samples if s.case_id in train_set],
        test=[s for s in samples if s.case_id not in train_set],
    )


def synthesize_sites(specs: Sequence[SynthSiteSpec], shape: Tuple[int, int] = (96, 96)) -> List[SiteDataset]:
    """Generate one raw synthetic site per spec."""
    if not specs:
        raise ValueError("At least one synthetic site spec is required")
    ids = [s.site_id for s in specs]
    if len(set(ids)) != len(ids):
        raise ValueError(f"Duplicate synthetic site ids: {ids}")
    sites = [synthesize_site(spec, shape) for spec in specs]
    for site in sites:
        logger.info("Synthesized site %s: %d cases, %d train / %d test slices",
                    site.site_id, site.meta.num_cases, len(site.train), len(site.test))
    return sites
