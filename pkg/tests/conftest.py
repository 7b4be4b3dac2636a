import numpy as np
import pytest
from hypothesis import settings

from mg1control.experiments import two_class_mm1, two_class_power_system

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@pytest.fixture
def mm1():
    return two_class_mm1()


@pytest.fixture
def power_sys():
    return two_class_power_system(bounds=(0.3, 0.3))


@pytest.fixture
def power_sqrt():
    return two_class_power_system(bounds=(0.3, 0.3), rate="sqrt", p_const=3.6)


def cobham_delays(lam, m1, m2, order):
    """Textbook nonpreemptive priority waits, computed directly from service moments."""
    lam, m1, m2 = (np.asarray(a, dtype=float) for a in (lam, m1, m2))
    w0 = 0.5 * np.sum(lam * m2)
    out = np.empty(lam.size)
    sigma = 0.0
    for c in order:
        prev = sigma
        sigma += lam[c] * m1[c]
        out[c] = w0 / ((1 - prev) * (1 - sigma))
    return out


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one pass/fail line per acceptance criterion; printed at the end of the run."""

    def _report(name: str, ok: bool, detail: str, note: str = "") -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}" + (f" ({note})" if note else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
