import os

import numpy as np
import pytest

from kpopweight import load_csv

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")

WORKED_CSV = os.path.join(FIXTURES, "worked_example.csv")
WORKED_ROLES = {
    "sample_col": "in_sample",
    "covariates": ["female", "college"],
    "outcome_col": "support",
}


@pytest.fixture(scope="session")
def worked():
    """The 8-sample / 4-stratum worked example.

    Sample: 3x (female, college), 1x (female only), 3x (neither),
    1x (college only) — both margins at 50%, joint distribution off;
    population: the four profiles in equal shares.  Support is 0.8 for
    college-educated females, 0.2 otherwise.
    """
    return load_csv(WORKED_CSV, WORKED_ROLES)


@pytest.fixture
def rng():
    return np.random.default_rng(20260823)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    # Emit the acceptance pass/fail lines past output capture.
    outcome = yield
    report = outcome.get_result()
    crit = getattr(getattr(item, "function", None), "_criterion", None)
    if crit is None or report.when != "call":
        return
    status = "PASS" if report.passed else "FAIL"
    tr = item.config.pluginmanager.get_plugin("terminalreporter")
    if tr is not None:
        tr.write_line(f"[{status}] criterion {crit[0]}: {crit[1]}")
