import sys

import numpy as np
import pytest

from dsoc.env import make_rng, random_matrix
from dsoc.sim import Engine, Event, Scenario


@pytest.fixture(scope="session", autouse=True)
def compiled():
    """Compile every jitted kernel once so timed tests measure simulation only."""
    for variant, events in (("static", []), ("static_heuristic", []),
                            ("dynamic", [Event(300, "enter"), Event(600, "leave")])):
        m = random_matrix(2, 4, make_rng(0), 0.05)
        Engine(Scenario(4, m, 0.05, 900, variant=variant, events=events), trace=True, check=True).run()
    return True


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
