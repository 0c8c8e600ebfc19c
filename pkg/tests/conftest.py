import os
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=300,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


# one PASS/FAIL line per acceptance criterion in the terminal summary
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k): acceptance criterion number k")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    k = getattr(report, "criterion", None)
    if k is not None:
        _CRITERIA[k] = _CRITERIA.get(k, True) and report.passed


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result().criterion = mark.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if _CRITERIA[k] else 'FAIL'}")


@pytest.fixture(scope="session")
def fisher_krogstad():
    """Krogstad run of the Fisher preset, n = 128, h = 1/n^2 to t = 10, with its
    wall time and the frozen half-step reference."""
    from ultraspectral.expint import PhiOperator, cf_poles, etd_run
    from ultraspectral.presets import fisher_problem

    n = 128
    h = 1 / n ** 2
    p = fisher_problem()
    t0 = time.perf_counter()
    u = etd_run(PhiOperator.for_problem(p, n, h, cf_poles()), p.initial_coeffs(n), 0.0, round(10 / h))
    elapsed = time.perf_counter() - t0
    ref = np.load(Path(__file__).with_name("data") / "fisher_half_step.npy")
    return u, ref, elapsed
