"""Turn analysis outcomes into labels and markdown comments.

Comment bodies are built from data-file templates shipped with the
package, not from code, so wording changes never touch logic. Every
rendered comment starts with an invisible HTML marker naming the repo,
issue, comment kind, and template version; the poster uses that marker
to recognize feedback it already delivered.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from importlib import resources
from typing import Callable

from issuetriage.model import CommentKind, IssueRecord, SeverityClass

TEMPLATE_VERSION = 1

# GitHub-style label colors, hex without the leading '#'.
SEVERITY_COLORS: dict[SeverityClass, str] = {
    SeverityClass.BLOCKER: "B60205",
    SeverityClass.CRITICAL: "D93F0B",
    SeverityClass.MAJOR: "E99695",
    SeverityClass.MINOR: "FBCA04",
    SeverityClass.TRIVIAL: "FEF2C0",
}

DUPLICATE_LABEL: tuple[str, str] = ("Duplicate", "CFD3D7")

_TEMPLATE_FILES: dict[CommentKind, str] = {
    CommentKind.SIMILAR_ISSUES: "similar_issues.md",
    CommentKind.BUG_LOCALIZATION: "bug_localization.md",
}

# Characters CommonMark can treat as syntax; titles get them escaped.
_MARKDOWN_SPECIALS = set("\\`*_{}[]()<>#+-.!|~\"'")


def severity_to_label(severity: SeverityClass) -> tuple[str, str]:
    """Label (name, color) for a predicted severity."""
    return (severity.value, SEVERITY_COLORS[severity])


def format_score(score: float) -> str:
    """Two decimals, round half up: 0.675 renders as 0.68."""
    return str(Decimal(repr(score)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def escape_markdown(text: str) -> str:
    """Backslash-escape anything a markdown renderer could interpret."""
    out: list[str] = []
    for ch in text:
        if ch in _MARKDOWN_SPECIALS:
            out.append("\\")
        out.append(ch)
    return "".join(out)


@dataclass(frozen=True)
class CommentTemplate:
    """Header lines followed by one per-item format line.

    In the template file the last non-empty line is the item format;
    everything above it is the header, kept verbatim.
    """

    header: str
    item_format: str

    @classmethod
    def parse(cls, text: str, source: str = "<template>") -> "CommentTemplate":
        lines = text.rstrip("\n").split("\n")
        item_index = None
        for i in range(len(lines) - 1, -1, -1):
            if lines[i].strip():
                item_index = i
                break
        if item_index is None:
            raise ValueError(f"{source}: template has no item format line")
        header = "\n".join(lines[:item_index]).rstrip("\n")
        return cls(header=header, item_format=lines[item_index])


def load_template(kind: CommentKind) -> CommentTemplate:
    name = _TEMPLATE_FILES[kind]
    text = resources.files("issuetriage.data.templates").joinpath(name).read_text("utf-8")
    return CommentTemplate.parse(text, source=name)


def comment_marker(kind: CommentKind, repo_full_name: str, issue_number: int) -> str:
    """Machine-readable first line, invisible in rendered markdown."""
    return (
        f"<!-- issuetriage kind={kind.value} repo={repo_full_name} "
        f"issue={issue_number} v={TEMPLATE_VERSION} -->"
    )


def _assemble(marker: str, header: str, items: list[str]) -> str:
    parts = [marker]
    if header:
        parts.append(header)
    parts.extend(items)
    return "\n".join(parts) + "\n"


def render_similar_comment(
    issue: IssueRecord,
    suggestions: list[tuple[IssueRecord, float]],
    template: CommentTemplate | None = None,
) -> str:
    """Markdown body for the similar-issues comment. Needs >= 1 suggestion."""
    if not suggestions:
        raise ValueError("refusing to render an empty similar-issues comment")
    tpl = template or load_template(CommentKind.SIMILAR_ISSUES)
    items = [
        tpl.item_format.format(
            number=candidate.number,
            title=escape_markdown(candidate.title),
            url=candidate.url,
            score=format_score(score),
        )
        for candidate, score in suggestions
    ]
    marker = comment_marker(CommentKind.SIMILAR_ISSUES, issue.repo.full_name, issue.number)
    return _assemble(marker, tpl.header, items)


def render_localization_comment(
    issue: IssueRecord,
    ranking: list[tuple[str, float]],
    file_url: Callable[[str], str],
    template: CommentTemplate | None = None,
) -> str:
    """Markdown body for the ranked-files comment. Needs >= 1 entry.

    file_url maps a repository path to a browsable URL for it.
    """
    if not ranking:
        raise ValueError("refusing to render an empty localization comment")
    tpl = template or load_template(CommentKind.BUG_LOCALIZATION)
    items = [
        tpl.item_format.format(
            rank=rank,
            path=escape_markdown(path),
            url=file_url(path),
            score=format_score(score),
        )
        for rank, (path, score) in enumerate(ranking, start=1)
    ]
    marker = comment_marker(CommentKind.BUG_LOCALIZATION, issue.repo.full_name, issue.number)
    return _assemble(marker, tpl.header, items)
