from __future__ import annotations

import numpy as np
import pytest

from sigsde.path_signature import DiscretePath

_ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    _ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_path(rng: np.random.Generator, d: int, n: int = 12, scale: float = 0.5) -> DiscretePath:
    times = np.concatenate([[0.0], np.cumsum(rng.uniform(0.05, 0.2, n - 1))])
    values = np.cumsum(rng.normal(0.0, scale, (n, d)), axis=0)
    return DiscretePath(times, values)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)
