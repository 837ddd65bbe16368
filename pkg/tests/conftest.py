"""Shared fixtures and builders for the test suite."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

import pytest

from issuetriage.analyzers import SeverityExample
from issuetriage.model import IssueRecord, RepoRef, SeverityClass

EPOCH = datetime(2024, 1, 1, tzinfo=timezone.utc)

REPO = RepoRef(owner="acme", name="shop")

# One (title, body) per class, vocabularies pairwise disjoint, so a
# nearest-centroid model trained on these classifies them perfectly.
CLASS_TEXTS: dict[SeverityClass, tuple[str, str]] = {
    SeverityClass.BLOCKER: ("deadlock freezes startup", "mutex ordering wedges boot sequence"),
    SeverityClass.CRITICAL: ("payment charge duplicated", "ledger posts amount twice nightly"),
    SeverityClass.MAJOR: ("search results stale", "index refresh lags behind writes"),
    SeverityClass.MINOR: ("tooltip overlaps avatar", "hover card clips profile picture"),
    SeverityClass.TRIVIAL: ("readme typo", "spelling mistake documentation paragraph"),
}


def five_class_examples() -> list[SeverityExample]:
    return [SeverityExample(title, body, cls) for cls, (title, body) in CLASS_TEXTS.items()]


def make_issue(
    number: int,
    title: str,
    body: str = "",
    repo: RepoRef = REPO,
    state: str = "open",
    labels: frozenset[str] = frozenset(),
    created_at: datetime | None = None,
) -> IssueRecord:
    created = created_at or (EPOCH + timedelta(minutes=number))
    return IssueRecord(
        repo=repo,
        number=number,
        title=title,
        body=body,
        state=state,
        labels=labels,
        url=f"https://forge.example/{repo.owner}/{repo.name}/issues/{number}",
        created_at=created,
        indexed_at=created,
    )


@pytest.fixture
def store(tmp_path):
    from issuetriage.store import IssueStore

    with IssueStore(tmp_path / "store.sqlite") as handle:
        yield handle


def pytest_runtest_logreport(report):
    # One visible verdict line per end-to-end acceptance check.
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    verdict = "PASS" if report.passed else ("FAIL" if report.failed else "SKIP")
    print(f"\nACCEPTANCE {name}: {verdict}", flush=True)
