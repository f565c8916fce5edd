import numpy as np
import pytest

from hitcrest import Bernoulli, Dirac, Exponential, ModelSpec, Poisson

LAM = 1.42


def case_a(variant="I"):
    """Bernoulli jumps against a deterministic unit jump."""
    return ModelSpec(LAM, Bernoulli(0.36), 7.0, Dirac(1.0), 17.0, variant)


def case_b(variant="I"):
    """Two exponential jump laws."""
    return ModelSpec(LAM, Exponential(0.71), 14.0, Exponential(2.04), 7.0, variant)


def case_c(variant="I"):
    """Bernoulli against Poisson jumps: both discrete with an atom at zero."""
    return ModelSpec(LAM, Bernoulli(0.36), 7.0, Poisson(1.23), 19.0, variant)


CASES = {"a": case_a, "b": case_b, "c": case_c}


@pytest.fixture(params=sorted(CASES))
def case_name(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, collected by test_acceptance.py
ACCEPTANCE_LINES = []


def record_criterion(number: int, ok: bool, detail: str) -> str:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
