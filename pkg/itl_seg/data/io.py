"""
Module io.py

This module contains reading and writing of per-site dataset manifests and
their slice files.

Manifest (one JSON document per site, paths relative to the manifest):

    {
      "site_id": "A",
      "modality": "MRI",
      "spacing": {"in_plane_mm": 0.625, "through_plane_mm": 3.6},
      "field_strength_tesla": 3.0,           (optional)
      "source_name": "NCI-ISBI13",           (optional)
      "test_cases": ["case07"],              (optional, fixes the split)
      "cases": [
        {"case_id": "case01",
         "slices": [{"image": "images/case01_000.f32", "mask": "masks/case01_000.png"}]}
      ]
    }

Images are 16-bit single-channel PNG or raw little-endian float32 preceded by
a header of three little-endian int32 (H, W, 1). Masks are 8-bit PNG holding
{0, 255}, read as {0, 1}.

"""

import json
import logging
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from PIL import Image

from itl_seg.data.preprocess import preprocess_site, split_train_test
from itl_seg.data.types import SiteDataset, SiteMeta, SliceSample
from itl_seg.error import DatasetError

logger = logging.getLogger(__name__)

RAW_SUFFIXES = (".f32", ".raw")
RAW_HEADER = np.dtype("<i4")
RAW_DTYPE = np.dtype("<f4")

MANIFEST_KEYS = {"site_id", "modality", "spacing", "cases", "field_strength_tesla", "source_name", "test_cases"}
REQUIRED_KEYS = {"site_id", "modality", "spacing", "cases"}


def read_raw_image(path: Union[str, Path]) -> np.ndarray:
    """Read a raw float32 slice with its (H, W, 1) header."""
    data = Path(path).read_bytes()
    header_size = 3 * RAW_HEADER.itemsize
    if len(data) < header_size:
        raise DatasetError("Truncated raw image header", path=str(path))
    h, w, c = np.frombuffer(data[:header_size], dtype=RAW_HEADER)
    if c != 1 or h < 1 or w < 1:
        raise DatasetError(f"Raw image header must be (H, W, 1), got {(h, w, c)}", path=str(path))
    expected = int(h) * int(w) * RAW_DTYPE.itemsize
    if len(data) - header_size != expected:
        raise DatasetError(f"Raw image payload has {len(data) - header_size} bytes, expected {expected}", path=str(path))
    return np.frombuffer(data[header_size:], dtype=RAW_DTYPE).reshape(int(h), int(w)).astype(np.float32)


def write_raw_image(path: Union[str, Path], image: np.ndarray) -> None:
    image = np.asarray(image)
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(np.array([h, w, 1], dtype=RAW_HEADER).tobytes())
        f.write(np.ascontiguousarray(image, dtype=RAW_DTYPE).tobytes())


def read_image(path: Union[str, Path]) -> np.ndarray:
    """Read a slice image from raw float32 or 16-bit PNG."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError("Slice file not found", path=str(path))
    if path.suffix.lower() in RAW_SUFFIXES:
        return read_raw_image(path)
    try:
        with Image.open(path) as img:
            array = np.array(img)
    except OSError as e:
        raise DatasetError(f"Unreadable image: {e}", path=str(path))
    if array.ndim != 2:
        raise DatasetError(f"Image must be single-channel, got shape {array.shape}", path=str(path))
    return array.astype(np.float32)


def read_mask(path: Union[str, Path]) -> np.ndarray:
    """Read an 8-bit PNG mask holding {0, 255} as a {0, 1} array."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError("Mask file not found", path=str(path))
    try:
        with Image.open(path) as img:
            array = np.array(img)
    except OSError as e:
        raise DatasetError(f"Unreadable mask: {e}", path=str(path))
    if array.ndim != 2:
        raise DatasetError(f"Mask must be single-channel, got shape {array.shape}", path=str(path))
    if not np.isin(array, (0, 255)).all():
        raise DatasetError("non-binary mask", path=str(path))
    return (array == 255).astype(np.uint8)


def write_mask(path: Union[str, Path], mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask) * 255).astype(np.uint8)).save(path, format="PNG")


def _validate_manifest(doc: dict, path: Path) -> None:
    if not isinstance(doc, dict):
        raise DatasetError("Manifest must be a JSON object", path=str(path))
    missing = REQUIRED_KEYS - set(doc)
    if missing:
        raise DatasetError(f"Manifest is missing keys {sorted(missing)}", path=str(path))
    unknown = set(doc) - MANIFEST_KEYS
    if unknown:
        raise DatasetError(f"Manifest has unknown keys {sorted(unknown)}", path=str(path))
    spacing = doc["spacing"]
    if not isinstance(spacing, dict) or set(spacing) != {"in_plane_mm", "through_plane_mm"}:
        raise DatasetError("spacing must hold exactly in_plane_mm and through_plane_mm", path=str(path))
    if not isinstance(doc["cases"], list) or not doc["cases"]:
        raise DatasetError("Manifest must list at least one case", path=str(path))
    seen = set()
    for case in doc["cases"]:
        if not isinstance(case, dict) or "case_id" not in case or not case.get("slices"):
            raise DatasetError("Every case needs a case_id and a non-empty slices list", path=str(path))
        if case["case_id"] in seen:
            raise DatasetError("Duplicate case_id", path=str(path), case_id=case["case_id"])
        seen.add(case["case_id"])
        for idx, s in enumerate(case["slices"]):
            if not isinstance(s, dict) or set(s) != {"image", "mask"}:
                raise DatasetError("Slice entries need exactly image and mask", path=str(path),
                                   case_id=case["case_id"], slice_index=idx)


def read_manifest(manifest_path: Union[str, Path]) -> SiteDataset:
    """Load a site manifest and its slice files without preprocessing."""
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise DatasetError("Manifest file not found", path=str(manifest_path))
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise DatasetError(f"Manifest is not valid JSON: {e}", path=str(manifest_path))
    _validate_manifest(doc, manifest_path)

    root = manifest_path.parent
    in_plane = float(doc["spacing"]["in_plane_mm"])
    through_plane = float(doc["spacing"]["through_plane_mm"])
    site_id = str(doc["site_id"])

    samples: List[SliceSample] = []
    for case in doc["cases"]:
        case_id = str(case["case_id"])
        shape: Optional[Tuple[int, int]] = None
        for idx, entry in enumerate(case["slices"]):
            image_path = root / entry["image"]
            mask_path = root / entry["mask"]
            try:
                image = read_image(image_path)
                mask = read_mask(mask_path)
            except DatasetError as e:
                raise DatasetError(e.message, path=e.path, case_id=case_id, slice_index=idx) from e
            if image.shape != mask.shape:
                raise DatasetError(f"Image/mask shape mismatch {image.shape} vs {mask.shape}",
                                   path=str(image_path), case_id=case_id, slice_index=idx)
            if shape is not None and image.shape != shape:
                raise DatasetError(f"Slice shape {image.shape} differs from the case's {shape}",
                                   path=str(image_path), case_id=case_id, slice_index=idx)
            shape = image.shape
            samples.append(SliceSample(site_id=site_id, case_id=case_id, slice_index=idx,
                                       image=image, mask=mask, spacing_mm=(in_plane, through_plane)))

    case_ids = [str(c["case_id"]) for c in doc["cases"]]
    field_strength = doc.get("field_strength_tesla")
    if isinstance(field_strength, list):
        field_strength = tuple(field_strength)
    meta = SiteMeta(
        site_id=site_id,
        modality=str(doc["modality"]),
        num_cases=len(case_ids),
        field_strength_tesla=field_strength,
        in_plane_resolution_mm=(in_plane, in_plane),
        through_plane_mm=(through_plane, through_plane),
        source_name=str(doc.get("source_name", "")),
    )
    return _split_samples(meta, samples, case_ids, doc.get("test_cases"), seed=0)


def _split_samples(meta: SiteMeta, samples: List[SliceSample], case_ids: List[str],
                   test_cases: Optional[List[str]], seed: int) -> SiteDataset:
    if test_cases is None:
        _, test_cases = split_train_test(case_ids, seed)
    unknown = set(test_cases) - set(case_ids)
    if unknown:
        raise DatasetError(f"test_cases lists unknown cases {sorted(unknown)}")
    test_set = set(test_cases)
    return SiteDataset(
        meta=meta,
        train=[s for s in samples if s.case_id not in test_set],
        test=[s for s in samples if s.case_id in test_set],
    )


def load_site(manifest_path: Union[str, Path], shape: Tuple[int, int] = (384, 384),
              split_seed: Optional[int] = None) -> SiteDataset:
    """Read, split, normalize and resample one site.

    A manifest's `test_cases` fixes the split; otherwise the cases are split
    4:1 with `split_seed` (default 0).
    """
    site = read_manifest(manifest_path)
    if split_seed is not None:
        case_ids = sorted(site.case_ids("train") | site.case_ids("test"))
        site = _split_samples(site.meta, site.all_samples(), case_ids, None, seed=split_seed)
    logger.info("Loaded site %s: %d train / %d test slices", site.site_id, len(site.train), len(site.test))
    return preprocess_site(site, shape)


def write_site(site: SiteDataset, out_dir: Union[str, Path]) -> Path:
    """Write a site as manifest + raw float32 images + PNG masks; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)

    cases = []
    for split in ("train", "test"):
        for case_id, slices in site.cases(split).items():
            entries = []
            for s in slices:
                stem = f"{case_id}_{s.slice_index:03d}"
                write_raw_image(out_dir / "images" / f"{stem}.f32", s.image)
                write_mask(out_dir / "masks" / f"{stem}.png", s.mask)
                entries.append({"image": f"images/{stem}.f32", "mask": f"masks/{stem}.png"})
            cases.append({"case_id": case_id, "slices": entries})
    cases.sort(key=lambda c: c["case_id"])

    sample = site.all_samples()[0]
    doc = {
        "site_id": site.site_id,
        "modality": site.meta.modality,
        "spacing": {"in_plane_mm": float(sample.spacing_mm[0]), "through_plane_mm": float(sample.spacing_mm[1])},
        "source_name": site.meta.source_name,
        "test_cases": sorted(site.case_ids("test")),
        "cases": cases,
    }
    if site.meta.field_strength_tesla is not None:
        doc["field_strength_tesla"] = site.meta.field_strength_tesla
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(doc, indent=2) + "\n")
    return manifest_path
