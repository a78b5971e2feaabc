import os

import pytest
from hypothesis import HealthCheck, settings

from jelab.spectral import AmplitudeProfile, Density, MeasureSpec, SpectralDomain

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def ex2():
    """Constant profile b = 1 with the Gaussian-in-p density."""
    prof = AmplitudeProfile.constant(1.0, epsilon=0.5)
    dom = SpectralDomain(prof, "paper_locus", (-0.6, 0.6))
    meas = MeasureSpec(density=Density("gaussian_p", (("k", 12.0),)))
    return prof, dom, meas


@pytest.fixture(scope="session")
def ex1_profile():
    return AmplitudeProfile.quadratic(1 / 24, 1 / 16, epsilon=0.2)


_LINES = pytest.StashKey()


@pytest.fixture
def report(request):
    """Print one acceptance line and keep it for the terminal summary."""
    lines = request.config.stash.setdefault(_LINES, [])

    def emit(label, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        print(line)
        lines.append(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)
