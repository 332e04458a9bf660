import os

import pytest

from preview_mpc.scenario import load_scenario
from preview_mpc.sim import compute_constants

# the suite runs on a single core by default; set PREVIEW_MPC_THREADS to override
os.environ.setdefault("PREVIEW_MPC_THREADS", "1")

_ACCEPTANCE = []


@pytest.fixture(scope="session")
def scenario():
    return load_scenario()


@pytest.fixture(scope="session")
def cfg(scenario):
    return scenario.horizon_config


@pytest.fixture(scope="session")
def ing(scenario):
    return scenario.ingredients


@pytest.fixture(scope="session")
def constants(scenario, cfg):
    return compute_constants(cfg, scenario.sequences, seed=0, schedule=scenario.sequences)


@pytest.fixture
def record():
    """Register one acceptance outcome, printed in the terminal summary."""
    def _record(criterion: int, part: str, ok: bool, detail: str = ""):
        _ACCEPTANCE.append((criterion, part, bool(ok), detail))
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for c in sorted({r[0] for r in _ACCEPTANCE}):
        parts = [r for r in _ACCEPTANCE if r[0] == c]
        ok = all(r[2] for r in parts)
        detail = "; ".join(f"{r[1]}: {'ok' if r[2] else 'FAILED'}{' (' + r[3] + ')' if r[3] else ''}" for r in parts)
        tr.write_line(f"criterion {c}: {'PASS' if ok else 'FAIL'} - {detail}")
