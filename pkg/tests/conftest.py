import os

import numpy as np
import pytest
from hypothesis import settings

from vitslim import vit

settings.register_profile("default", deadline=None, max_examples=60)
settings.register_profile("ci", deadline=None, max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

GOLDEN = os.path.join(os.path.dirname(__file__), "golden")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_weights():
    return vit.init_weights(vit.ViTConfig(), seed=0)


@pytest.fixture(scope="session")
def micro_config():
    return vit.preset("micro")


def random_images(config, batch, seed=0, dtype=np.float64):
    r = np.random.default_rng(seed)
    side = config.image_side
    return r.random((batch, side, side, config.channels)).astype(dtype)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
