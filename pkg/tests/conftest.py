import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_positive_instance(rng, n_l, n_u, spread=1.0):
    """Symmetric W with strictly positive entries and the matching layout."""
    from rmtssl.dataset import ClassLayout

    lay = ClassLayout(tuple(n_l), tuple(n_u))
    A = rng.uniform(0.1, 0.1 + spread, size=(lay.n, lay.n))
    return (A + A.T) / 2, lay


def pytest_terminal_summary(terminalreporter):
    report = getattr(sys.modules.get("test_acceptance"), "REPORT", [])
    if report:
        terminalreporter.section("acceptance criteria")
        for line in sorted(report):
            terminalreporter.write_line(line)
