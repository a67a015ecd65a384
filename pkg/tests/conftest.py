import os

import numpy as np
import pytest

from sseweak.sse import SSEProblem

_ACCEPTANCE: list[str] = []


def pytest_addoption(parser):
    parser.addoption(
        "--full-scale",
        action="store_true",
        default=False,
        help="run the long full-parameter oscillator table (about half an hour of CPU)",
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--full-scale") or os.environ.get("SSEWEAK_FULL_SCALE") == "1":
        return
    skip = pytest.mark.skip(reason="needs --full-scale or SSEWEAK_FULL_SCALE=1")
    for item in items:
        if "fullscale" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def _report(criterion: str, ok: bool, detail: str):
        line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok

    return _report


def random_hermitian(rs, d, scale=1.0):
    m = rs.normal(size=(d, d)) + 1j * rs.normal(size=(d, d))
    return scale * 0.5 * (m + m.conj().T)


def random_matrix(rs, d, scale=1.0):
    return scale * (rs.normal(size=(d, d)) + 1j * rs.normal(size=(d, d))) / np.sqrt(d)


def random_state(rs, d):
    z = rs.normal(size=d) + 1j * rs.normal(size=d)
    return z / np.linalg.norm(z)


def random_problem(rs, d, n=2, scale=0.5) -> SSEProblem:
    return SSEProblem(
        hamiltonian=random_hermitian(rs, d, scale),
        lindblads=tuple(random_matrix(rs, d, scale) for _ in range(n)),
        observable=random_hermitian(rs, d),
        z0=random_state(rs, d),
    )


@pytest.fixture
def rs():
    return np.random.default_rng(12345)
