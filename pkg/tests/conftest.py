import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from iotdrift.synthgen import DriftSpec, generate_tables  # noqa: E402


@pytest.fixture(scope="session")
def small_tables():
    spec = DriftSpec(n_homes=4, n_classes=4, days=12, flows_per_class_per_day=4,
                     context_offset_scale=0.5, n_contexts=2, noise_sigma=1.0, seed=5)
    return generate_tables(spec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line; all lines are repeated at the end of the run."""

    def record(criterion: int, ok: bool, detail: str) -> bool:
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _VERDICTS.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
