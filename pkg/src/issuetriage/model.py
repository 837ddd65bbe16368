"""Domain types shared across the service: repos, issues, files, feedback."""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field
from datetime import datetime, timezone


class ValidationError(ValueError):
    """A record violates its own invariants. Never retriable."""


def utc_now() -> datetime:
    return datetime.now(tz=timezone.utc)


def ensure_utc(value: datetime) -> datetime:
    """Normalize to an aware UTC datetime; naive input is rejected."""
    if value.tzinfo is None:
        raise ValidationError("timestamp must be timezone-aware")
    return value.astimezone(timezone.utc)


def parse_timestamp(value: str) -> datetime:
    """Parse an ISO-8601 timestamp, accepting the forge's trailing 'Z'."""
    if value.endswith("Z"):
        value = value[:-1] + "+00:00"
    try:
        parsed = datetime.fromisoformat(value)
    except ValueError as exc:
        raise ValidationError(f"bad timestamp: {value!r}") from exc
    return ensure_utc(parsed)


@dataclass(frozen=True)
class RepoRef:
    """A forge repository, identified case-insensitively by owner/name."""

    owner: str
    name: str
    default_branch: str = "main"

    def __post_init__(self) -> None:
        for label, value in (("owner", self.owner), ("name", self.name)):
            if not value:
                raise ValidationError(f"repo {label} must be non-empty")
            if "/" in value:
                raise ValidationError(f"repo {label} must not contain '/'")
        if not self.default_branch:
            raise ValidationError("default_branch must be non-empty")

    @property
    def key(self) -> str:
        return f"{self.owner}/{self.name}".lower()

    @property
    def full_name(self) -> str:
        return f"{self.owner}/{self.name}"


@dataclass(frozen=True)
class IssueRecord:
    """One indexed issue. (repo, number) is unique in the store."""

    repo: RepoRef
    number: int
    title: str
    body: str
    state: str  # "open" or "closed"
    labels: frozenset[str]
    url: str
    created_at: datetime
    indexed_at: datetime

    def __post_init__(self) -> None:
        if self.number <= 0:
            raise ValidationError("issue number must be positive")
        if self.state not in ("open", "closed"):
            raise ValidationError(f"bad issue state: {self.state!r}")
        if not self.url:
            raise ValidationError("issue url must be non-empty")
        object.__setattr__(self, "created_at", ensure_utc(self.created_at))
        object.__setattr__(self, "indexed_at", ensure_utc(self.indexed_at))
        if self.body is None:  # forge may send null bodies
            object.__setattr__(self, "body", "")


@dataclass(frozen=True)
class CodeFileRef:
    """A file of the repository's latest default-branch snapshot."""

    repo: RepoRef
    path: str
    url: str

    def __post_init__(self) -> None:
        if not self.path:
            raise ValidationError("file path must be non-empty")
        if self.path.startswith("/"):
            raise ValidationError("file path must not start with '/'")


@functools.total_ordering
class SeverityClass(enum.Enum):
    """Five ordered severity levels; Blocker is the most severe."""

    BLOCKER = "Blocker"
    CRITICAL = "Critical"
    MAJOR = "Major"
    MINOR = "Minor"
    TRIVIAL = "Trivial"

    @property
    def rank(self) -> int:
        """Higher rank means more severe."""
        order = [
            SeverityClass.TRIVIAL,
            SeverityClass.MINOR,
            SeverityClass.MAJOR,
            SeverityClass.CRITICAL,
            SeverityClass.BLOCKER,
        ]
        return order.index(self) + 1

    def __lt__(self, other: "SeverityClass") -> bool:
        if not isinstance(other, SeverityClass):
            return NotImplemented
        return self.rank < other.rank

    @classmethod
    def from_name(cls, name: str) -> "SeverityClass":
        for member in cls:
            if member.value == name:
                return member
        raise ValidationError(f"unknown severity class: {name!r}")


#: Most-severe-first, the canonical iteration order for tie-breaking.
SEVERITY_ORDER: tuple[SeverityClass, ...] = (
    SeverityClass.BLOCKER,
    SeverityClass.CRITICAL,
    SeverityClass.MAJOR,
    SeverityClass.MINOR,
    SeverityClass.TRIVIAL,
)


class CommentKind(enum.Enum):
    SIMILAR_ISSUES = "similar_issues"
    BUG_LOCALIZATION = "bug_localization"


@dataclass(frozen=True)
class FeedbackComment:
    kind: CommentKind
    markdown_body: str


@dataclass(frozen=True)
class FeedbackBundle:
    """Everything the tool posts back for one new issue.

    severity_label is absent when the severity analyzer failed; the
    duplicate label is present exactly when a similar-issues comment is.
    """

    repo: RepoRef
    issue_number: int
    severity_label: tuple[str, str] | None  # (name, 6-hex-digit color)
    duplicate_label: str | None
    comments: tuple[FeedbackComment, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.severity_label is not None:
            name, color = self.severity_label
            if name not in {c.value for c in SeverityClass}:
                raise ValidationError(f"bad severity label name: {name!r}")
            if len(color) != 6 or any(ch not in "0123456789abcdefABCDEF" for ch in color):
                raise ValidationError(f"bad label color: {color!r}")
        kinds = [c.kind for c in self.comments]
        if len(kinds) != len(set(kinds)):
            raise ValidationError("at most one comment per kind")
        has_similar = CommentKind.SIMILAR_ISSUES in kinds
        if (self.duplicate_label is not None) != has_similar:
            raise ValidationError(
                "duplicate label must be present exactly when similar issues were suggested"
            )

    def comment(self, kind: CommentKind) -> FeedbackComment | None:
        for c in self.comments:
            if c.kind == kind:
                return c
        return None
