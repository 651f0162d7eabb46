"""
Data package.

This package contains site dataset types, ingestion, preprocessing,
augmentation and the synthetic multi-site generator:
- Domain types (SliceSample, SiteDataset, ...)
- Manifest reading/writing
- Normalization, resampling, splitting and axial context
- Joint image/mask augmentation
- Synthetic sites

"""

from .types import AugmentedInput, SiteDataset, SiteMeta, SliceSample, SynthSiteSpec
from .preprocess import (check_shapes, holdout_validation, make_augmented_input, normalize_intensity,
                         preprocess_site, resample_slice, split_train_test)
from .augment import AugmentConfig, AugmentParams, apply_params, augment, draw_params, hflip
from .io import load_site, read_manifest, write_site
from .synth import synthesize_sites

__all__ = [
    'AugmentedInput', 'SiteDataset', 'SiteMeta', 'SliceSample', 'SynthSiteSpec',
    'check_shapes', 'holdout_validation', 'make_augmented_input', 'normalize_intensity',
    'preprocess_site', 'resample_slice', 'split_train_test',
    'AugmentConfig', 'AugmentParams', 'apply_params', 'augment', 'draw_params', 'hflip',
    'load_site', 'read_manifest', 'write_site',
    'synthesize_sites',
]
