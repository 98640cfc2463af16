import time

import pytest

from rayocc.experiments import OverfitConfig, overfit

ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def overfit_run(tmp_path_factory):
    """One desk overfit run shared by the training smoke test and the acceptance suite."""
    work = tmp_path_factory.mktemp("overfit")
    t0 = time.perf_counter()
    out = overfit(work, OverfitConfig())
    out["seconds"] = time.perf_counter() - t0
    return work, out


@pytest.fixture
def criterion():
    """record(name, ok, detail) prints one PASS/FAIL line and keeps it for the summary."""

    def record(name: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE[name] = (bool(ok), detail)
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
