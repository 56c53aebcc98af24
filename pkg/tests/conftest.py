import time
from pathlib import Path

import pytest

from csiloc.config import Config
from csiloc.pipeline import run_experiment

GOLDEN = Path(__file__).resolve().parents[1] / "golden"


@pytest.fixture(scope="session")
def golden_dir():
    return GOLDEN


@pytest.fixture(scope="session")
def thresholds():
    return Config.load(GOLDEN / "thresholds.cfg")


@pytest.fixture(scope="session")
def golden_run(tmp_path_factory):
    """Run a golden config once per session; returns ``(reports, seconds, output_dir)``."""
    cache = {}

    def run(name: str):
        if name not in cache:
            out = tmp_path_factory.mktemp(name)
            start = time.perf_counter()
            reports = run_experiment(GOLDEN / f"{name}.cfg", out)
            cache[name] = (reports, time.perf_counter() - start, out)
        return cache[name]

    return run


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
