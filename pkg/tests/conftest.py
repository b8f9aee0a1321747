import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from evrecon import synth
from evrecon.events import EventStream

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def clean_case():
    """Dense shapes scene, 9x9 horizontal motion blur, noiseless events."""
    return synth.make_case("shapes", pattern="shapes", noise_ratio=0.0)


@pytest.fixture(scope="session")
def noisy_case():
    """Sparser shapes scene with 50% injected noise."""
    return synth.make_case("sparse_noisy", pattern="sparse_shapes", noise_ratio=0.5)


def random_stream(rng, n=200, width=16, height=12, t_max=10_000):
    t = np.sort(rng.integers(0, t_max, n))
    return EventStream(width, height, t, rng.integers(0, width, n), rng.integers(0, height, n),
                       rng.choice(np.array([-1, 1]), n))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS, format_result
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for row in sorted(RESULTS):
        terminalreporter.write_line(format_result(*row))
