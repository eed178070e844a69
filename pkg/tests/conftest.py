import numpy as np
import pytest

from msilab import BENCHMARK_GAIN, NoiseSpec, generate_data, benchmark_plant


@pytest.fixture(scope="session")
def plant():
    return benchmark_plant()


@pytest.fixture(scope="session")
def gain():
    return BENCHMARK_GAIN


@pytest.fixture(scope="session")
def rec50(plant):
    return generate_data(plant, NoiseSpec(0.0, seed=1), 50)


@pytest.fixture(scope="session")
def rec50_noisy(plant):
    return generate_data(plant, NoiseSpec(0.01, seed=1), 50)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    rows = {}
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid:
                continue
            name = nodeid.split("::")[-1][len("test_criterion_"):]
            ok, detail = rows.get(name, (True, ""))
            if rep.when == "call":
                detail = dict(rep.user_properties).get("detail", "")
            rows[name] = (ok and rep.passed, detail)
    if rows:
        terminalreporter.section("acceptance criteria")
        for name in sorted(rows):
            ok, detail = rows[name]
            terminalreporter.write_line(f"criterion {name}: {'PASS' if ok else 'FAIL'}  {detail}")
