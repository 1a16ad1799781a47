import numpy as np
import pytest
from hypothesis import settings

from refed.synth import GeneratorConfig, generate

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def tiny_generator(**kw):
    base = dict(n_classes=3, t_len=8, n_bands=2, polygons_per_class=8, pixels_mean=10.0, pixels_min=4)
    base.update(kw)
    return GeneratorConfig(**base)


@pytest.fixture(scope="session")
def tiny_pair():
    """Small source/target pair for fast end-to-end checks."""
    return generate(tiny_generator())


@pytest.fixture(scope="session")
def default_pair():
    return generate(GeneratorConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
