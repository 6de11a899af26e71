import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from viroctl.model import ModelParams

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

RATE_NAMES = ("d1", "d2", "d3", "d4", "d5", "d6", "b1", "b2", "b3", "b4", "b5", "b6")


@st.composite
def model_params(draw, r0_range=None, delays=True, tau_steps=(0, 500), h=0.01):
    """Random valid parameters; delays are multiples of ``h``."""
    pos = st.floats(0.05, 2.0)
    small = st.floats(0.0, 0.3)
    kw = dict(
        omega=draw(st.floats(1.0, 50.0)), beta=draw(st.floats(0.001, 0.5)),
        mu=draw(pos), mu1=draw(pos), b=draw(st.floats(0.05, 2.0)),
        **{n: draw(small) for n in RATE_NAMES},
    )
    if delays:
        kw["tau"] = draw(st.integers(*tau_steps)) * h
        kw["tau1"] = draw(st.integers(*tau_steps)) * h
        kw["alpha"] = draw(st.floats(0.0, 1.0))
    p = ModelParams(**kw)
    if r0_range is not None:
        from viroctl.model import compute_r0
        lo, hi = r0_range
        target = draw(st.floats(lo, hi))
        p = p.with_(beta=p.beta * target / compute_r0(p))
    return p


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
