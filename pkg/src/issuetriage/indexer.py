"""Installation and backfill: getting a repository's history indexed.

Backfill pages through the full issue listing and checkpoints the last
completed page after every page, inside the same store that holds the
issues. A crash mid-backfill therefore resumes at the first incomplete
page, and because indexing is an idempotent upsert keyed on (repo,
number), re-reading a page the crash interrupted cannot create
duplicates or double-count.

Installation never posts feedback: issues that exist before the install
moment get indexed as candidate knowledge only. The installation
timestamp is the cutoff the event pipeline later checks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

from issuetriage.forge import DEFAULT_PAGE_SIZE, ForgeClient
from issuetriage.model import RepoRef, utc_now
from issuetriage.store import IssueStore, SyncState

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BackfillReport:
    repo: RepoRef
    pages_fetched: int
    issues_seen: int
    resumed_from_page: int
    complete: bool


def install_repo(
    store: IssueStore,
    client: ForgeClient,
    owner: str,
    name: str,
    page_size: int = DEFAULT_PAGE_SIZE,
    on_page: Callable[[int, int], None] | None = None,
) -> BackfillReport:
    """Register the repository and run (or resume) the issue backfill.

    Safe to call again after a crash or for an already installed
    repository; completed backfills return immediately.
    """
    repo = client.get_repo(owner, name)
    state = store.get_sync_state(repo)
    if state is None:
        state = store.register_repo(repo)
    if state.backfill_complete:
        return BackfillReport(
            repo=repo,
            pages_fetched=0,
            issues_seen=0,
            resumed_from_page=0,
            complete=True,
        )
    last_done = state.backfill_cursor or 0
    start_page = last_done + 1
    pages = 0
    seen = 0
    for page, issues in client.iter_issue_pages(repo, page_size=page_size, start_page=start_page):
        for issue in issues:
            store.upsert_issue(issue)
        seen += len(issues)
        pages += 1
        store.save_sync_state(
            SyncState(
                repo=repo,
                installed_at=state.installed_at,
                backfill_cursor=page,
                backfill_complete=False,
                last_sync_at=utc_now(),
            )
        )
        if on_page is not None:
            on_page(page, len(issues))
    store.save_sync_state(
        SyncState(
            repo=repo,
            installed_at=state.installed_at,
            backfill_cursor=None,
            backfill_complete=True,
            last_sync_at=utc_now(),
        )
    )
    log.info("backfill of %s complete: %d issues over %d pages", repo.full_name, seen, pages)
    return BackfillReport(
        repo=repo,
        pages_fetched=pages,
        issues_seen=seen,
        resumed_from_page=start_page,
        complete=True,
    )
