import sys

import numpy as np
import pytest
from hypothesis import settings

from pixkit.numcore import RngState

settings.register_profile("pixkit", deadline=None, max_examples=60)
settings.load_profile("pixkit")


@pytest.fixture
def rng():
    return RngState(1234)


@pytest.fixture
def gen():
    return np.random.default_rng(20241016)


def pytest_terminal_summary(terminalreporter):
    """Echo acceptance verdicts even when output capture hides the test prints."""
    mod = next((m for name, m in list(sys.modules.items()) if name.endswith("test_acceptance")), None)
    results = getattr(mod, "RESULTS", None)
    if results is None:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        ok, detail = results.get(n, (False, "errored or skipped before a verdict"))
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
