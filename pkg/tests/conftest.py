import os

import hypothesis
import numpy as np
import pytest

from itl_seg.data.preprocess import preprocess_site
from itl_seg.data.synth import synthesize_sites
from itl_seg.data.types import SynthSiteSpec
from itl_seg.engine.config import TrainConfig
from itl_seg.model.specs import DecoderSpec, EncoderSpec

np.seterr(all="warn")

hypothesis.settings.register_profile("dev", max_examples=50, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=200, deadline=None)
hypothesis.settings.register_profile("debugger", report_multiple_bugs=False, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "dev"))

TINY_SHAPE = (32, 32)


@pytest.fixture
def tiny_specs():
    return [
        SynthSiteSpec(site_id="A", num_cases=5, slices_per_case=3, intensity_mean=0.0, noise_std=0.3, rng_seed=1),
        SynthSiteSpec(site_id="B", num_cases=5, slices_per_case=3, intensity_mean=2.0, contrast=0.7,
                      shape_family="blob", noise_std=0.4, rng_seed=2),
        SynthSiteSpec(site_id="C", num_cases=5, slices_per_case=3, intensity_mean=-1.0, noise_std=0.6,
                      size_range=(0.2, 0.35), rng_seed=3),
    ]


@pytest.fixture
def tiny_sites(tiny_specs):
    return [preprocess_site(s, TINY_SHAPE) for s in synthesize_sites(tiny_specs, TINY_SHAPE)]


@pytest.fixture
def enc_spec():
    return EncoderSpec(kind="tiny_cnn", width=4)


@pytest.fixture
def dec_spec():
    return DecoderSpec(channels=(16, 8, 8, 4), input_size=TINY_SHAPE)


@pytest.fixture
def fast_config():
    return TrainConfig(epochs=1, batch_size=4, rehearsal_batch_size=2, gamma_percent=50.0, seed=0)
