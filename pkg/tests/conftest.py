from __future__ import annotations

import pytest


def pytest_runtest_logreport(report: pytest.TestReport) -> None:
    # One visible pass/fail line per acceptance criterion.
    if "test_acceptance" not in report.nodeid:
        return
    if report.when == "call":
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(
            report.outcome, report.outcome.upper())
        name = report.nodeid.split("::")[-1]
        print(f"\nACCEPTANCE {status} {name}", flush=True)
    elif report.when == "setup" and report.skipped:
        name = report.nodeid.split("::")[-1]
        print(f"\nACCEPTANCE SKIP {name}", flush=True)
