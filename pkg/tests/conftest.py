"""Shared fixtures and the acceptance-summary reporter.

Heavy objects (default parameter set, propagators) are session-scoped;
tests treat them as read-only.  The acceptance module registers one
result per criterion through the ``acceptance_record`` fixture, and the
terminal summary prints one PASS/FAIL line per registered criterion.
"""

import numpy as np
import pytest

from chbcontrol.dynamics import build_propagator
from chbcontrol.steady import default_params

_ACCEPTANCE_RESULTS = {}


@pytest.fixture(scope="session")
def params_default():
    """Default physical setup: n=64, phibar=0.5, sine forcing."""
    return default_params()


@pytest.fixture(scope="session")
def params_zero_ubar():
    """Same setup with zero forcing, hence ubar identically zero."""
    return default_params(forcing="zero")


@pytest.fixture(scope="session")
def prop_default(params_default):
    """Backward-Euler propagator at the default dt."""
    return build_propagator(params_default.grid, params_default, dt=1e-3, theta=1.0)


@pytest.fixture(scope="session")
def prop_zero_ubar(params_zero_ubar):
    return build_propagator(params_zero_ubar.grid, params_zero_ubar, dt=1e-3, theta=1.0)


@pytest.fixture(scope="session")
def rng_factory():
    """Deterministic per-test random generators."""

    def make(seed):
        return np.random.default_rng(seed)

    return make


@pytest.fixture(scope="session")
def acceptance_record():
    """Register an acceptance-criterion outcome for the terminal summary."""

    def record(number, name, passed, detail=""):
        _ACCEPTANCE_RESULTS[number] = (name, bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE_RESULTS):
        name, passed, detail = _ACCEPTANCE_RESULTS[number]
        verdict = "PASS" if passed else "FAIL"
        line = f"criterion {number:02d} {name}: {verdict}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
