import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from cakecut.core import Interval, PiecewiseDensity, common_refinement

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# Filled by test_acceptance.py and printed at the end of the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@st.composite
def profiles(draw, min_n=1, max_n=4, max_m=6, max_value=4):
    """Random profiles on [0, 1] with integer densities and boundaries on a 1/16 grid."""
    n = draw(st.integers(min_n, max_n))
    dens = []
    for i in range(n):
        m = draw(st.integers(1, max_m))
        cuts = sorted(draw(st.sets(st.integers(1, 15), min_size=m - 1, max_size=m - 1)))
        bps = (0.0, *(c / 16 for c in cuts), 1.0)
        vals = draw(st.lists(st.integers(0, max_value), min_size=len(bps) - 1, max_size=len(bps) - 1))
        if not any(vals):
            vals[0] = 1
        dens.append(PiecewiseDensity(bps, tuple(map(float, vals)), f"a{i + 1}"))
    return common_refinement(dens, Interval(0.0, 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
