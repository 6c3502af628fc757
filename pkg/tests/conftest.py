import numpy as np
import pytest

from dagcd.dataset import CategoricalDataset
from dagcd.kernels import BACKENDS


def random_dataset(rng, p=4, n=20, r_max=3, interventions=True):
    """Small dataset with random level counts and a few intervened rows."""
    levels = rng.integers(2, r_max + 1, size=p)
    values = np.column_stack([rng.integers(1, r + 1, size=n) for r in levels])
    rows = [[] for _ in range(p)]
    if interventions:
        for h in range(n):
            if rng.random() < 0.3:
                rows[int(rng.integers(p))].append(h)
    return CategoricalDataset(values, levels, tuple(rows))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=sorted(BACKENDS))
def backend(request):
    return request.param


# -- acceptance reporting ----------------------------------------------------

_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one pass/fail line; the lines are repeated in the terminal summary."""

    def record(label: str, ok: bool, detail: str = "") -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {label}" + (f"  [{detail}]" if detail else "")
        _CRITERIA.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
