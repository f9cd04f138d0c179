import numpy as np
import pytest

from drdose.data import Dataset


def random_dataset(seed, n=20, lo=10.0, hi=14.0, covars=("x1", "x2")):
    """Small dataset whose doses cover (lo, hi] so every width-2 stratum is populated."""
    rng = np.random.default_rng(seed)
    x = {c: rng.normal(size=n) for c in covars}
    d = np.empty(n)
    half = n // 2
    d[:half] = rng.uniform(lo + 0.05, lo + 1.95, size=half)
    d[half:] = rng.uniform(lo + 2.05, hi - 0.05, size=n - half)
    rng.shuffle(d)
    y = 1.0 + 0.3 * d + sum(x.values()) + rng.normal(size=n)
    return Dataset(y, d, x)


@pytest.fixture
def small_data():
    return random_dataset(0)


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record and assert one acceptance sub-check; lines are echoed in the summary."""
    def check(label, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {label}" + (f"  [{detail}]" if detail else "")
        _VERDICTS.append(line)
        print(line)
        return bool(ok)
    return check


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
