"""Host side of the analyzer plugin boundary.

The event pipeline is the host; each analysis feature is a plugin picked
by configuration. The host isolates plugin failures (an exception, a
deadline overrun, or an invalid result becomes a FailureRecord instead of
crashing the pipeline) and validates every outcome before it travels
downstream, so the three features stay independent: one failing kind
never suppresses the others.

Plugins are registered in code and selected at runtime by id; shared-
object loading is out of scope. Deadlines run the plugin on a dedicated
thread and abandon it on overrun (threads cannot be killed), which is
recorded as a failure.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeoutError
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from issuetriage.model import CodeFileRef, IssueRecord, SeverityClass

DEFAULT_DEADLINE_SECONDS = 60.0


class AnalyzerKind(enum.Enum):
    DUPLICATE = "duplicate"
    SEVERITY = "severity"
    LOCALIZATION = "localization"


@dataclass(frozen=True)
class AnalyzerDescriptor:
    id: str
    kind: AnalyzerKind
    display_name: str
    deterministic: bool = True
    config: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class AnalysisRequest:
    kind: AnalyzerKind
    issue: IssueRecord
    candidates: tuple[IssueRecord, ...] = ()
    files: tuple[CodeFileRef, ...] = ()
    deadline: float = DEFAULT_DEADLINE_SECONDS


@dataclass(frozen=True)
class DuplicateOutcome:
    """(issue_number, score) sorted by score desc, ties by number asc."""

    suggestions: tuple[tuple[int, float], ...]


@dataclass(frozen=True)
class SeverityOutcome:
    severity: SeverityClass
    confidence: float


@dataclass(frozen=True)
class LocalizationOutcome:
    """(path, score) sorted by score desc, ties by path ascending."""

    ranking: tuple[tuple[str, float], ...]


AnalysisOutcome = DuplicateOutcome | SeverityOutcome | LocalizationOutcome
AnalyzerImpl = Callable[[AnalysisRequest], AnalysisOutcome]


@dataclass(frozen=True)
class FailureRecord:
    kind: AnalyzerKind
    analyzer_id: str | None
    reason: str  # "error", "timeout", "invalid-outcome", "not-configured"
    message: str


class RegistrationError(ValueError):
    pass


class OutcomeInvalidError(ValueError):
    pass


# Cosine scores may exceed 1.0 by float noise; anything past this is a bug.
SCORE_TOLERANCE = 1e-12


def _check_ranked(pairs: Sequence[tuple[object, float]], what: str) -> None:
    previous: tuple[float, object] | None = None
    for key, score in pairs:
        if not isinstance(score, float) or not math.isfinite(score):
            raise OutcomeInvalidError(f"{what} score must be a finite float, got {score!r}")
        if previous is not None:
            prev_score, prev_key = previous
            if score > prev_score:
                raise OutcomeInvalidError(f"{what} list not sorted by score descending")
            if score == prev_score and key < prev_key:  # type: ignore[operator]
                raise OutcomeInvalidError(f"{what} ties not broken ascending")
        previous = (score, key)


def validate_outcome(kind: AnalyzerKind, outcome: AnalysisOutcome) -> None:
    """Raise OutcomeInvalidError unless the outcome honors its contract."""
    if kind is AnalyzerKind.DUPLICATE:
        if not isinstance(outcome, DuplicateOutcome):
            raise OutcomeInvalidError(f"expected DuplicateOutcome, got {type(outcome).__name__}")
        for number, score in outcome.suggestions:
            if not isinstance(number, int) or number <= 0:
                raise OutcomeInvalidError(f"bad issue number {number!r}")
            if (
                isinstance(score, float)
                and math.isfinite(score)
                and not 0.0 <= score <= 1.0 + SCORE_TOLERANCE
            ):
                raise OutcomeInvalidError(f"duplicate score {score} outside [0, 1]")
        _check_ranked(outcome.suggestions, "duplicate")
    elif kind is AnalyzerKind.SEVERITY:
        if not isinstance(outcome, SeverityOutcome):
            raise OutcomeInvalidError(f"expected SeverityOutcome, got {type(outcome).__name__}")
        if not isinstance(outcome.severity, SeverityClass):
            raise OutcomeInvalidError(f"bad severity class {outcome.severity!r}")
        if (
            not isinstance(outcome.confidence, float)
            or not math.isfinite(outcome.confidence)
            or not 0.0 <= outcome.confidence <= 1.0 + SCORE_TOLERANCE
        ):
            raise OutcomeInvalidError(f"confidence {outcome.confidence!r} outside [0, 1]")
    elif kind is AnalyzerKind.LOCALIZATION:
        if not isinstance(outcome, LocalizationOutcome):
            raise OutcomeInvalidError(
                f"expected LocalizationOutcome, got {type(outcome).__name__}"
            )
        for path, _score in outcome.ranking:
            if not isinstance(path, str) or not path:
                raise OutcomeInvalidError(f"bad path {path!r}")
        _check_ranked(outcome.ranking, "localization")
    else:  # pragma: no cover - enum is closed
        raise OutcomeInvalidError(f"unknown analyzer kind {kind!r}")


class AnalyzerHost:
    """Registry plus dispatcher. Registration order never affects behavior."""

    def __init__(self) -> None:
        self._registered: dict[str, tuple[AnalyzerDescriptor, AnalyzerImpl]] = {}
        self._enabled: dict[AnalyzerKind, str] = {}

    def register(self, descriptor: AnalyzerDescriptor, impl: AnalyzerImpl) -> None:
        if descriptor.id in self._registered:
            raise RegistrationError(f"analyzer id already registered: {descriptor.id}")
        self._registered[descriptor.id] = (descriptor, impl)

    def enable(self, kind: AnalyzerKind, analyzer_id: str) -> None:
        """Select the one analyzer that runs for this kind."""
        entry = self._registered.get(analyzer_id)
        if entry is None:
            raise RegistrationError(f"unknown analyzer id: {analyzer_id}")
        descriptor, _ = entry
        if descriptor.kind is not kind:
            raise RegistrationError(
                f"analyzer {analyzer_id} has kind {descriptor.kind.value}, not {kind.value}"
            )
        self._enabled[kind] = analyzer_id

    def enabled_descriptor(self, kind: AnalyzerKind) -> AnalyzerDescriptor | None:
        analyzer_id = self._enabled.get(kind)
        if analyzer_id is None:
            return None
        return self._registered[analyzer_id][0]

    def registered_ids(self) -> list[str]:
        return sorted(self._registered)

    def implementation(self, analyzer_id: str) -> AnalyzerImpl:
        entry = self._registered.get(analyzer_id)
        if entry is None:
            raise RegistrationError(f"unknown analyzer id: {analyzer_id}")
        return entry[1]

    def dispatch(self, request: AnalysisRequest) -> AnalysisOutcome | FailureRecord:
        """Run the enabled analyzer for the request kind, fully isolated."""
        analyzer_id = self._enabled.get(request.kind)
        if analyzer_id is None:
            return FailureRecord(
                kind=request.kind,
                analyzer_id=None,
                reason="not-configured",
                message=f"no enabled analyzer for kind {request.kind.value}",
            )
        _, impl = self._registered[analyzer_id]
        executor = ThreadPoolExecutor(max_workers=1, thread_name_prefix=f"analyzer-{analyzer_id}")
        try:
            future = executor.submit(impl, request)
            try:
                outcome = future.result(timeout=request.deadline)
            except FutureTimeoutError:
                return FailureRecord(
                    kind=request.kind,
                    analyzer_id=analyzer_id,
                    reason="timeout",
                    message=f"analyzer exceeded {request.deadline:g}s deadline",
                )
            except Exception as exc:
                return FailureRecord(
                    kind=request.kind,
                    analyzer_id=analyzer_id,
                    reason="error",
                    message=f"{type(exc).__name__}: {exc}",
                )
        finally:
            executor.shutdown(wait=False)
        try:
            validate_outcome(request.kind, outcome)
        except OutcomeInvalidError as exc:
            return FailureRecord(
                kind=request.kind,
                analyzer_id=analyzer_id,
                reason="invalid-outcome",
                message=str(exc),
            )
        return outcome


def _mean(values: Sequence[float]) -> float:
    # Exact passthrough when all runs agree, so wrapping a deterministic
    # analyzer cannot perturb its scores.
    if all(v == values[0] for v in values):
        return values[0]
    return math.fsum(values) / len(values)


def consensus_wrap(impl: AnalyzerImpl, runs: int) -> AnalyzerImpl:
    """Keep only localization paths suggested in every one of `runs` runs.

    Survivors are ordered by mean score descending, ties by path. With
    runs=1 the inner analyzer is returned unchanged; any inner failure
    fails the whole wrapped call.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if runs == 1:
        return impl

    def wrapped(request: AnalysisRequest) -> LocalizationOutcome:
        collected: list[dict[str, float]] = []
        for _ in range(runs):
            outcome = impl(request)
            if not isinstance(outcome, LocalizationOutcome):
                raise OutcomeInvalidError(
                    f"consensus wrapper needs LocalizationOutcome, got {type(outcome).__name__}"
                )
            collected.append(dict(outcome.ranking))
        common = set(collected[0])
        for scores in collected[1:]:
            common &= set(scores)
        ranked = [(path, _mean([scores[path] for scores in collected])) for path in common]
        ranked.sort(key=lambda item: (-item[1], item[0]))
        return LocalizationOutcome(ranking=tuple(ranked))

    return wrapped
