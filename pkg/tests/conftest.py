from __future__ import annotations

import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE: dict[str, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if item.path.name != "test_acceptance.py":
        return
    props = dict(item.user_properties)
    entry = _ACCEPTANCE.setdefault(item.nodeid, {"name": item.name, "outcome": "passed"})
    marker = item.get_closest_marker("criterion")
    entry["criterion"] = str(marker.args[0]) if marker else props.get("criterion", "?")
    entry["detail"] = props.get("detail", "")
    if report.failed:
        entry["outcome"] = "failed"
    elif report.skipped and entry["outcome"] != "failed":
        entry["outcome"] = "skipped"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for entry in sorted(_ACCEPTANCE.values(), key=lambda e: (_order(e["criterion"]), e["name"])):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[entry["outcome"]]
        line = f"{status}  criterion {entry['criterion']:<3} {entry['name']}"
        if entry["detail"]:
            line += f"  [{entry['detail']}]"
        terminalreporter.write_line(line)


def _order(criterion: str) -> tuple:
    digits = "".join(ch for ch in criterion if ch.isdigit())
    return (int(digits) if digits else 99, criterion)


@pytest.fixture(scope="session")
def calibrated_run():
    """Twenty-five simulated minutes of the calibrated field configuration."""
    from bilocnet.config import field_config
    from bilocnet.pipeline import analyze, simulate, synchronize

    cfg = field_config(duration_s=1500.0, seed=2024)
    t0 = time.perf_counter()
    run = simulate(cfg)
    refs = {kind: {s: run.reference(s, kind) for s in ("A", "B", "C")}
            for kind in ("square_10kHz", "pulse_1Hz")}
    net_sync = synchronize(cfg, run.streams, refs)
    del run
    result = analyze(cfg, net_sync.streams)
    elapsed = time.perf_counter() - t0
    return {"result": result, "sync": net_sync, "elapsed": elapsed, "config": cfg}
