from pathlib import Path

import numpy as np
import pytest

from hospiflow.data import ArrivalSpec, generate_synthetic
from hospiflow.params import canonical_space

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture(scope="session")
def space():
    return canonical_space()


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def small_scenario(space):
    x_true = space.defaults.copy()
    x_true[13] = 0.15
    return generate_synthetic(x_true, ArrivalSpec.constant(40, 45), seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


VERDICTS: list[str] = []


@pytest.fixture
def verdict(capsys):
    """Record one acceptance line and fail the test if the check did not hold."""

    def record(number: int, title: str, ok: bool, seconds: float, limit: float, detail: str = ""):
        passed = ok and seconds < limit
        line = f"{'PASS' if passed else 'FAIL'} criterion {number:>2}: {title} ({seconds:.1f}s of {limit:.0f}s) {detail}".rstrip()
        VERDICTS.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
        assert seconds < limit, line

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance")
        for line in sorted(VERDICTS, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
