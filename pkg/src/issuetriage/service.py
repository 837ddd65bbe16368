"""Event pipeline: queued delivery in, labels and comments out.

The pipeline is deliberately sequential per issue: index the issue,
run the three analyzers through the plugin host, render whatever
succeeded, then post. Feature independence comes from the host (a
failed analyzer yields a failure record, and the other two features
still ship) rather than from concurrency.

Posting is made exactly-once by three layers: the gateway's delivery
ledger drops replays, a local feedback flag short-circuits re-runs,
and before posting anything the poster audits the issue's existing
comments for this tool's markers, so a crash after an ack, or between
two comments, never produces a second copy.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field

from issuetriage.analyzers import (
    AnalyzerSettings,
    DuplicateConfig,
    SeverityModel,
    load_seed_examples,
    register_defaults,
    train_severity,
)
from issuetriage.config import AppConfig
from issuetriage.forge import ForgeApiError, ForgeClient, parse_issue
from issuetriage.model import (
    CommentKind,
    FeedbackBundle,
    FeedbackComment,
    IssueRecord,
    RepoRef,
)
from issuetriage.plugins import (
    AnalysisRequest,
    AnalyzerDescriptor,
    AnalyzerHost,
    AnalyzerKind,
    DuplicateOutcome,
    FailureRecord,
    LocalizationOutcome,
    SeverityOutcome,
    consensus_wrap,
)
from issuetriage.render import (
    DUPLICATE_LABEL,
    comment_marker,
    render_localization_comment,
    render_similar_comment,
    severity_to_label,
)
from issuetriage.store import IssueStore, NotInstalledError, QueuedDelivery

log = logging.getLogger(__name__)

MAX_DELIVERY_ATTEMPTS = 5


@dataclass
class PipelineResult:
    """What one delivery produced; returned for observability and tests."""

    repo: RepoRef | None = None
    issue_number: int | None = None
    indexed: bool = False
    posted: bool = False
    skipped_reason: str | None = None
    failures: list[FailureRecord] = field(default_factory=list)


class TriageService:
    def __init__(
        self,
        store: IssueStore,
        client: ForgeClient,
        host: AnalyzerHost,
        config: AppConfig,
    ) -> None:
        self.store = store
        self.client = client
        self.host = host
        self.config = config

    # -- event intake ---------------------------------------------------

    def process_delivery(self, delivery: QueuedDelivery) -> PipelineResult:
        result = PipelineResult()
        payload = json.loads(delivery.raw_body.decode("utf-8"))
        repo_data = payload.get("repository") or {}
        owner = (repo_data.get("owner") or {}).get("login") or repo_data.get("owner")
        name = repo_data.get("name")
        if not owner or not name:
            result.skipped_reason = "payload has no repository"
            self._log_skip(delivery, result.skipped_reason)
            return result
        repo = RepoRef(
            owner=str(owner),
            name=str(name),
            default_branch=str(repo_data.get("default_branch", "main")),
        )
        result.repo = repo
        try:
            cutoff = self.store.installation_cutoff(repo)
        except NotInstalledError:
            result.skipped_reason = f"repository {repo.full_name} is not installed"
            self._log_skip(delivery, result.skipped_reason)
            return result
        issue = parse_issue(payload["issue"], repo)
        result.issue_number = issue.number
        self.store.upsert_issue(issue)
        result.indexed = True
        if issue.created_at < cutoff:
            result.skipped_reason = "issue predates installation"
            self._log_skip(delivery, result.skipped_reason)
            return result
        bundle, failures = self.analyze_issue(issue)
        result.failures = failures
        for failure in failures:
            self.store.log_operation(
                "analyzer",
                "failed",
                f"{failure.kind.value}/{failure.analyzer_id or '-'}: "
                f"{failure.reason}: {failure.message}",
                repo=repo,
                issue_number=issue.number,
            )
        result.posted = self.post_feedback(issue, bundle)
        return result

    def _log_skip(self, delivery: QueuedDelivery, reason: str) -> None:
        self.store.log_operation(
            "delivery", "skipped", f"{delivery.delivery_id}: {reason}"
        )

    # -- analysis -------------------------------------------------------

    def analyze_issue(
        self, issue: IssueRecord
    ) -> tuple[FeedbackBundle, list[FailureRecord]]:
        """Run all three analyzers; failures never block the other kinds."""
        repo = issue.repo
        candidates = tuple(
            self.store.query_issues(repo, exclude_number=issue.number)
        )
        files = tuple(self.client.list_files(repo))
        deadline = self.config.analyzers.deadline_seconds
        failures: list[FailureRecord] = []
        comments: list[FeedbackComment] = []
        severity_label: tuple[str, str] | None = None
        duplicate_label: str | None = None

        duplicates = self.host.dispatch(
            AnalysisRequest(
                kind=AnalyzerKind.DUPLICATE,
                issue=issue,
                candidates=candidates,
                deadline=deadline,
            )
        )
        if isinstance(duplicates, FailureRecord):
            failures.append(duplicates)
        elif isinstance(duplicates, DuplicateOutcome) and duplicates.suggestions:
            by_number = {c.number: c for c in candidates}
            ranked = [
                (by_number[number], score)
                for number, score in duplicates.suggestions
                if number in by_number
            ]
            if ranked:
                comments.append(
                    FeedbackComment(
                        kind=CommentKind.SIMILAR_ISSUES,
                        markdown_body=render_similar_comment(issue, ranked),
                    )
                )
                duplicate_label = DUPLICATE_LABEL[0]

        severity = self.host.dispatch(
            AnalysisRequest(kind=AnalyzerKind.SEVERITY, issue=issue, deadline=deadline)
        )
        if isinstance(severity, FailureRecord):
            failures.append(severity)
        elif isinstance(severity, SeverityOutcome):
            severity_label = severity_to_label(severity.severity)

        localization = self.host.dispatch(
            AnalysisRequest(
                kind=AnalyzerKind.LOCALIZATION,
                issue=issue,
                files=files,
                deadline=deadline,
            )
        )
        if isinstance(localization, FailureRecord):
            failures.append(localization)
        elif isinstance(localization, LocalizationOutcome) and localization.ranking:
            comments.append(
                FeedbackComment(
                    kind=CommentKind.BUG_LOCALIZATION,
                    markdown_body=render_localization_comment(
                        issue,
                        list(localization.ranking),
                        lambda path: self.client.file_url(repo, path),
                    ),
                )
            )

        bundle = FeedbackBundle(
            repo=repo,
            issue_number=issue.number,
            severity_label=severity_label,
            duplicate_label=duplicate_label,
            comments=tuple(comments),
        )
        return bundle, failures

    # -- posting --------------------------------------------------------

    def post_feedback(self, issue: IssueRecord, bundle: FeedbackBundle) -> bool:
        """Deliver the bundle at most once; returns True when anything posted.

        Re-runs audit the issue's comments on the forge for the marker
        lines this tool writes, so partially delivered feedback is
        completed without duplication. A permanent API rejection of one
        action is logged and skipped without aborting the rest; a forge
        outage propagates so the whole delivery is retried later.
        """
        repo = issue.repo
        if self.store.has_feedback(repo, issue.number):
            return False
        if bundle.severity_label is None and not bundle.comments:
            self.store.record_feedback(repo, issue.number, "nothing-to-post")
            return False
        already_posted: set[CommentKind] = set()
        if bundle.comments:
            existing = self.client.list_comments(repo, issue.number)
            for kind in CommentKind:
                marker = comment_marker(kind, repo.full_name, issue.number)
                if any(marker in str(c.get("body", "")) for c in existing):
                    already_posted.add(kind)
        wanted_labels: list[tuple[str, str]] = []
        if bundle.severity_label is not None:
            wanted_labels.append(bundle.severity_label)
        if bundle.duplicate_label is not None:
            wanted_labels.append(DUPLICATE_LABEL)
        applied: list[str] = []
        for name, color in wanted_labels:
            try:
                self.client.ensure_label(repo, name, color)
                self.client.add_labels(repo, issue.number, [name])
            except ForgeApiError as exc:
                self._log_action(repo, issue.number, f"label {name}: rejected: {exc}", ok=False)
                continue
            applied.append(name)
            self._log_action(repo, issue.number, f"label {name}: applied", ok=True)
        delivered: set[CommentKind] = set(already_posted)
        for comment in bundle.comments:
            if comment.kind in already_posted:
                continue
            try:
                self.client.create_comment(repo, issue.number, comment.markdown_body)
            except ForgeApiError as exc:
                self._log_action(
                    repo, issue.number, f"comment {comment.kind.value}: rejected: {exc}", ok=False
                )
                continue
            delivered.add(comment.kind)
            self._log_action(repo, issue.number, f"comment {comment.kind.value}: posted", ok=True)
        summary = {
            "labels": applied,
            "comments": sorted(kind.value for kind in delivered),
        }
        self.store.record_feedback(repo, issue.number, json.dumps(summary, sort_keys=True))
        return bool(applied or delivered)

    def _log_action(self, repo: RepoRef, issue_number: int, message: str, ok: bool) -> None:
        self.store.log_operation(
            "feedback",
            "ok" if ok else "failed",
            message,
            repo=repo,
            issue_number=issue_number,
        )


class Worker:
    """Single consumer thread draining the durable delivery queue."""

    def __init__(self, service: TriageService, poll_interval: float = 0.25) -> None:
        self.service = service
        self.poll_interval = poll_interval
        self.wakeup = threading.Event()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._attempts: dict[int, int] = {}
        self.drained = threading.Event()

    def notify(self) -> None:
        self.wakeup.set()

    def start(self) -> None:
        self._thread = threading.Thread(target=self._run, daemon=True, name="triage-worker")
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        self.wakeup.set()
        if self._thread is not None:
            self._thread.join(timeout=10)

    def _run(self) -> None:
        while not self._stop.is_set():
            self.drain()
            self.drained.set()
            self.wakeup.wait(timeout=self.poll_interval)
            self.wakeup.clear()

    def drain(self) -> None:
        """Process queued deliveries until none are claimable."""
        store = self.service.store
        while not self._stop.is_set():
            item = store.claim_pending()
            if item is None:
                return
            try:
                self.service.process_delivery(item)
            except Exception as exc:
                attempts = self._attempts.get(item.queue_id, 0) + 1
                self._attempts[item.queue_id] = attempts
                if attempts >= MAX_DELIVERY_ATTEMPTS:
                    log.error(
                        "delivery %s abandoned after %d attempts: %s",
                        item.delivery_id,
                        attempts,
                        exc,
                    )
                    store.log_operation(
                        "delivery",
                        "abandoned",
                        f"{item.delivery_id}: {type(exc).__name__}: {exc}",
                    )
                    store.mark_done(item.queue_id)
                    continue
                log.warning(
                    "delivery %s failed (attempt %d): %s", item.delivery_id, attempts, exc
                )
                store.release_claim(item.queue_id)
                return
            else:
                self._attempts.pop(item.queue_id, None)
                store.mark_done(item.queue_id)


def load_severity_model(config: AppConfig) -> SeverityModel:
    """The configured trained model, or one trained from the built-in seed."""
    if config.severity_model_path:
        return SeverityModel.load(config.severity_model_path)
    return train_severity(
        load_seed_examples(), title_weight=config.analyzers.title_weight
    )


def build_host(config: AppConfig, model: SeverityModel) -> AnalyzerHost:
    """Analyzer host with the reference analyzers wired per configuration."""
    host = AnalyzerHost()
    settings = AnalyzerSettings(
        duplicate=DuplicateConfig(
            threshold=config.analyzers.threshold,
            max_suggestions=config.analyzers.max_suggestions,
            title_weight=config.analyzers.title_weight,
            pool_size=config.analyzers.pool_size,
        ),
        top_k=config.analyzers.top_k,
    )
    register_defaults(host, model, settings)
    host.enable(AnalyzerKind.DUPLICATE, config.analyzers.duplicate_id)
    host.enable(AnalyzerKind.SEVERITY, config.analyzers.severity_id)
    runs = config.analyzers.consensus_runs
    inner_id = config.analyzers.localization_id
    if runs > 1:
        wrapped_id = f"{inner_id}+consensus{runs}"
        host.register(
            AnalyzerDescriptor(
                id=wrapped_id,
                kind=AnalyzerKind.LOCALIZATION,
                display_name=f"{inner_id} with {runs}-run consensus",
            ),
            consensus_wrap(host.implementation(inner_id), runs),
        )
        host.enable(AnalyzerKind.LOCALIZATION, wrapped_id)
    else:
        host.enable(AnalyzerKind.LOCALIZATION, inner_id)
    return host
