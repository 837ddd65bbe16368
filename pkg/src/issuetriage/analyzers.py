"""Reference analyzers: duplicate detection, severity, bug localization.

All three share the same retrieval core (tokenize, tf-idf over a corpus
built for the occasion, cosine). They are plain functions plus small
config/model types; `register_defaults` wires them into a plugin host.

Determinism is load-bearing here. Candidate scoring in a thread pool
must be bit-identical to the serial run, so workers only compute
independent per-candidate scores and the ordering is decided afterwards
by one sort on the collected list. Centroid training sums with
math.fsum, which makes the model independent of example order.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from issuetriage.model import SEVERITY_ORDER, CodeFileRef, IssueRecord, SeverityClass
from issuetriage.plugins import (
    AnalysisRequest,
    AnalyzerDescriptor,
    AnalyzerHost,
    AnalyzerKind,
    DuplicateOutcome,
    LocalizationOutcome,
    SeverityOutcome,
)
from issuetriage.text import Corpus, TermVector, build_corpus, cosine, tfidf_vector, tokenize

DEFAULT_THRESHOLD = 0.6
DEFAULT_MAX_SUGGESTIONS = 5
DEFAULT_TITLE_WEIGHT = 2
DEFAULT_TOP_K = 5


def issue_text(issue: IssueRecord, title_weight: int = DEFAULT_TITLE_WEIGHT) -> str:
    """Text an issue is indexed under: the title repeated, then the body."""
    if title_weight < 1:
        raise ValueError("title_weight must be >= 1")
    return "\n".join([issue.title] * title_weight + [issue.body])


@dataclass(frozen=True)
class DuplicateConfig:
    threshold: float = DEFAULT_THRESHOLD
    max_suggestions: int = DEFAULT_MAX_SUGGESTIONS
    title_weight: int = DEFAULT_TITLE_WEIGHT
    pool_size: int = 1

    def __post_init__(self) -> None:
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold {self.threshold} outside [0, 1]")
        if self.max_suggestions < 1:
            raise ValueError("max_suggestions must be >= 1")
        if self.pool_size < 1:
            raise ValueError("pool_size must be >= 1")


def score_candidates(
    issue: IssueRecord,
    candidates: Sequence[IssueRecord],
    title_weight: int = DEFAULT_TITLE_WEIGHT,
    pool_size: int = 1,
) -> list[tuple[IssueRecord, float]]:
    """Cosine of the new issue against every candidate, in candidate order.

    The corpus is the issue plus the candidates, nothing else, so a score
    depends only on this call's inputs.
    """
    issue_tokens = tokenize(issue_text(issue, title_weight))
    candidate_tokens = [tokenize(issue_text(c, title_weight)) for c in candidates]
    corpus = build_corpus([issue_tokens] + candidate_tokens)
    issue_vector = tfidf_vector(issue_tokens, corpus)

    def score_one(tokens: list[str]) -> float:
        return cosine(issue_vector, tfidf_vector(tokens, corpus))

    if pool_size == 1 or len(candidates) <= 1:
        scores = [score_one(tokens) for tokens in candidate_tokens]
    else:
        with ThreadPoolExecutor(max_workers=pool_size) as pool:
            scores = list(pool.map(score_one, candidate_tokens))
    return list(zip(candidates, scores))


def detect_duplicates(
    issue: IssueRecord,
    candidates: Sequence[IssueRecord],
    config: DuplicateConfig = DuplicateConfig(),
) -> list[tuple[IssueRecord, float]]:
    """Candidates scoring at least the threshold, best first.

    Ties are broken by ascending issue number; at most
    config.max_suggestions survive. The issue itself is never suggested.
    """
    eligible = [c for c in candidates if c.number != issue.number]
    scored = score_candidates(issue, eligible, config.title_weight, config.pool_size)
    kept = [(c, s) for c, s in scored if s >= config.threshold]
    kept.sort(key=lambda item: (-item[1], item[0].number))
    return kept[: config.max_suggestions]


@dataclass(frozen=True)
class SeverityExample:
    title: str
    body: str
    severity: SeverityClass


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class SeverityModel:
    """Nearest-centroid classifier state, portable as JSON.

    A usable model has a centroid for every severity class; trained_on
    records how many distinct examples backed each one.
    """

    corpus: Corpus
    centroids: Mapping[SeverityClass, TermVector]
    title_weight: int = DEFAULT_TITLE_WEIGHT
    trained_on: Mapping[SeverityClass, int] = field(default_factory=dict)

    def save(self, path: Path | str) -> None:
        payload = {
            "format": "issuetriage-severity-model",
            "version": 1,
            "title_weight": self.title_weight,
            "doc_count": self.corpus.doc_count,
            "doc_freq": dict(sorted(self.corpus.doc_freq.items())),
            "trained_on": {
                cls.value: count
                for cls, count in sorted(self.trained_on.items(), key=lambda kv: kv[0].value)
            },
            "centroids": {
                cls.value: dict(sorted(vec.weights.items()))
                for cls, vec in sorted(self.centroids.items(), key=lambda kv: kv[0].value)
            },
        }
        Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "SeverityModel":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != "issuetriage-severity-model":
            raise ValueError(f"{path}: not a severity model file")
        if payload.get("version") != 1:
            raise ValueError(f"{path}: unsupported model version {payload.get('version')!r}")
        corpus = Corpus(doc_count=int(payload["doc_count"]), doc_freq=dict(payload["doc_freq"]))
        centroids = {
            SeverityClass.from_name(name): TermVector.from_weights(weights)
            for name, weights in payload["centroids"].items()
        }
        for severity in SEVERITY_ORDER:
            if severity not in centroids:
                raise ValueError(f"{path}: model missing centroid for class {severity.value}")
        trained_on = {
            SeverityClass.from_name(name): int(count)
            for name, count in payload.get("trained_on", {}).items()
        }
        return cls(
            corpus=corpus,
            centroids=centroids,
            title_weight=int(payload.get("title_weight", DEFAULT_TITLE_WEIGHT)),
            trained_on=trained_on,
        )


def train_severity(
    examples: Sequence[SeverityExample],
    title_weight: int = DEFAULT_TITLE_WEIGHT,
) -> SeverityModel:
    """Fit one centroid per severity class; every class must be covered.

    A centroid is the component-wise mean of the class's tf-idf vectors.
    Exact repeats of an example (same class, same token stream) count
    once, so concatenating a training set with itself yields the same
    model bit for bit. Sums use math.fsum, so shuffling the examples
    cannot change the model either.
    """
    if title_weight < 1:
        raise ValueError("title_weight must be >= 1")
    distinct: dict[tuple[SeverityClass, tuple[str, ...]], list[str]] = {}
    for example in examples:
        doc = tokenize("\n".join([example.title] * title_weight + [example.body]))
        distinct.setdefault((example.severity, tuple(doc)), doc)
    counts = {severity: 0 for severity in SEVERITY_ORDER}
    for severity, _tokens in distinct:
        counts[severity] += 1
    missing = [severity.value for severity in SEVERITY_ORDER if counts[severity] == 0]
    if missing:
        raise TrainingError(f"no training examples for class: {', '.join(missing)}")
    corpus = build_corpus(list(distinct.values()))
    by_class: dict[SeverityClass, list[TermVector]] = {s: [] for s in SEVERITY_ORDER}
    for (severity, _tokens), doc in distinct.items():
        by_class[severity].append(tfidf_vector(doc, corpus))
    centroids: dict[SeverityClass, TermVector] = {}
    for severity, vectors in by_class.items():
        terms: set[str] = set()
        for vec in vectors:
            terms.update(vec.weights)
        count = len(vectors)
        mean_weights = {
            term: math.fsum(vec.weights.get(term, 0.0) for vec in vectors) / count
            for term in sorted(terms)
        }
        centroids[severity] = TermVector.from_weights(mean_weights)
    return SeverityModel(
        corpus=corpus,
        centroids=centroids,
        title_weight=title_weight,
        trained_on=counts,
    )


def predict_severity_text(
    model: SeverityModel, title: str, body: str
) -> tuple[SeverityClass, float]:
    """Nearest centroid by cosine; ties go to the more severe class.

    An issue with no usable tokens gets the middle class, Major, with
    confidence 0.0.
    """
    tokens = tokenize("\n".join([title] * model.title_weight + [body]))
    vector = tfidf_vector(tokens, model.corpus)
    if vector.norm == 0.0:
        return (SeverityClass.MAJOR, 0.0)
    best: tuple[SeverityClass, float] | None = None
    for severity in SEVERITY_ORDER:  # most severe first, so ties keep the first hit
        centroid = model.centroids.get(severity)
        if centroid is None:
            continue
        score = cosine(vector, centroid)
        if best is None or score > best[1]:
            best = (severity, score)
    if best is None:
        return (SeverityClass.MAJOR, 0.0)
    return (best[0], min(max(best[1], 0.0), 1.0))


def predict_severity(model: SeverityModel, issue: IssueRecord) -> tuple[SeverityClass, float]:
    return predict_severity_text(model, issue.title, issue.body)


def path_tokens(path: str) -> list[str]:
    return tokenize(path)


def rank_paths(
    title: str,
    body: str,
    paths: Sequence[str],
    title_weight: int = DEFAULT_TITLE_WEIGHT,
) -> list[tuple[str, float]]:
    """Full relevance ranking of file paths for one issue text.

    The corpus is the issue text plus one document per path. Zero-score
    paths never appear; ties are broken by ascending path.
    """
    issue_tokens = tokenize("\n".join([title] * title_weight + [body]))
    path_docs = [path_tokens(p) for p in paths]
    corpus = build_corpus([issue_tokens] + path_docs)
    issue_vector = tfidf_vector(issue_tokens, corpus)
    scored = [
        (path, cosine(issue_vector, tfidf_vector(tokens, corpus)))
        for path, tokens in zip(paths, path_docs)
    ]
    kept = [(path, score) for path, score in scored if score > 0.0]
    kept.sort(key=lambda item: (-item[1], item[0]))
    return kept


def localize_bugs(
    issue: IssueRecord,
    files: Sequence[CodeFileRef],
    top_k: int = DEFAULT_TOP_K,
    title_weight: int = DEFAULT_TITLE_WEIGHT,
) -> list[tuple[CodeFileRef, float]]:
    """Top files by cosine between issue text and path tokens.

    Zero-score files are dropped even when fewer than top_k remain.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    by_path = {f.path: f for f in files}
    ranked = rank_paths(issue.title, issue.body, [f.path for f in files], title_weight)
    return [(by_path[path], score) for path, score in ranked[:top_k]]


def load_seed_examples() -> list[SeverityExample]:
    """Built-in labeled examples so severity works before any training."""
    raw = resources.files("issuetriage.data").joinpath("severity_seed.jsonl").read_text("utf-8")
    return parse_severity_examples(raw.splitlines(), source="<builtin seed>")


def parse_severity_examples(lines: Iterable[str], source: str = "<input>") -> list[SeverityExample]:
    examples: list[SeverityExample] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            examples.append(
                SeverityExample(
                    title=str(record["title"]),
                    body=str(record.get("body", "")),
                    severity=SeverityClass.from_name(record["severity"]),
                )
            )
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise ValueError(f"{source}:{lineno}: bad severity example: {exc}") from exc
    return examples


DUPLICATE_ANALYZER_ID = "tfidf-duplicates"
SEVERITY_ANALYZER_ID = "centroid-severity"
LOCALIZATION_ANALYZER_ID = "tfidf-localization"


@dataclass(frozen=True)
class AnalyzerSettings:
    duplicate: DuplicateConfig = field(default_factory=DuplicateConfig)
    top_k: int = DEFAULT_TOP_K


def register_defaults(
    host: AnalyzerHost,
    model: SeverityModel,
    settings: AnalyzerSettings = AnalyzerSettings(),
) -> None:
    """Register the three reference analyzers on a host and enable them."""

    def run_duplicates(request: AnalysisRequest) -> DuplicateOutcome:
        ranked = detect_duplicates(request.issue, request.candidates, settings.duplicate)
        return DuplicateOutcome(
            suggestions=tuple((c.number, score) for c, score in ranked)
        )

    def run_severity(request: AnalysisRequest) -> SeverityOutcome:
        severity, confidence = predict_severity(model, request.issue)
        return SeverityOutcome(severity=severity, confidence=confidence)

    def run_localization(request: AnalysisRequest) -> LocalizationOutcome:
        ranked = localize_bugs(
            request.issue, request.files, settings.top_k, settings.duplicate.title_weight
        )
        return LocalizationOutcome(ranking=tuple((ref.path, score) for ref, score in ranked))

    host.register(
        AnalyzerDescriptor(
            id=DUPLICATE_ANALYZER_ID,
            kind=AnalyzerKind.DUPLICATE,
            display_name="TF-IDF duplicate suggester",
        ),
        run_duplicates,
    )
    host.register(
        AnalyzerDescriptor(
            id=SEVERITY_ANALYZER_ID,
            kind=AnalyzerKind.SEVERITY,
            display_name="Nearest-centroid severity",
        ),
        run_severity,
    )
    host.register(
        AnalyzerDescriptor(
            id=LOCALIZATION_ANALYZER_ID,
            kind=AnalyzerKind.LOCALIZATION,
            display_name="TF-IDF path localization",
        ),
        run_localization,
    )
    host.enable(AnalyzerKind.DUPLICATE, DUPLICATE_ANALYZER_ID)
    host.enable(AnalyzerKind.SEVERITY, SEVERITY_ANALYZER_ID)
    host.enable(AnalyzerKind.LOCALIZATION, LOCALIZATION_ANALYZER_ID)
