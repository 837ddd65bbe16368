"""Offline evaluation for the three analyzers.

Datasets are JSONL files, one example per line. Loaders fail loudly
with the line number; every metric edge case (a denominator of zero)
is resolved by a documented convention and surfaces in the report's
`flags` so a clean-looking number can't hide a degenerate dataset.

Conventions:
- duplicate precision with no predicted positives is 1.0 when the
  dataset has no actual positives either, otherwise 0.0; recall mirrors
  that for no actual positives. Both cases are flagged.
- severity precision/recall are macro-averaged over all five classes;
  a class with a zero denominator contributes 0.0 and is flagged.
- average precision divides by the number of relevant paths, so a
  relevant path the ranking never retrieves contributes exactly 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from issuetriage.analyzers import (
    DEFAULT_THRESHOLD,
    DEFAULT_TITLE_WEIGHT,
    SeverityExample,
    SeverityModel,
    parse_severity_examples,
    predict_severity_text,
    rank_paths,
)
from issuetriage.model import SEVERITY_ORDER
from issuetriage.text import build_corpus, cosine, tfidf_vector, tokenize


class DatasetError(ValueError):
    """A dataset file is malformed; the message carries file:line."""


@dataclass(frozen=True)
class EvalReport:
    """Uniform result shape for all three evaluations.

    Fields that a given evaluation does not produce stay None; `flags`
    lists every convention that fired while computing the numbers.
    """

    n_examples: int
    flags: tuple[str, ...] = ()
    accuracy: float | None = None
    precision: float | None = None
    recall: float | None = None
    p_at_k: Mapping[int, float] | None = None
    r_at_k: Mapping[int, float] | None = None
    map_score: float | None = None

    def to_json_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "p_at_k": None if self.p_at_k is None else {str(k): v for k, v in sorted(self.p_at_k.items())},
            "r_at_k": None if self.r_at_k is None else {str(k): v for k, v in sorted(self.r_at_k.items())},
            "map": self.map_score,
            "n_examples": self.n_examples,
            "flags": list(self.flags),
        }


@dataclass(frozen=True)
class DuplicatePair:
    a_title: str
    a_body: str
    b_title: str
    b_body: str
    duplicate: bool


@dataclass(frozen=True)
class LocalizationExample:
    title: str
    body: str
    files: tuple[str, ...]
    relevant: tuple[str, ...]


def _iter_jsonl(lines: Iterable[str], source: str) -> Iterable[tuple[int, dict]]:
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{source}:{lineno}: invalid JSON: {exc}") from exc
        if not isinstance(record, dict):
            raise DatasetError(f"{source}:{lineno}: expected an object, got {type(record).__name__}")
        yield lineno, record


def _issue_fields(record: dict, key: str, source: str, lineno: int) -> tuple[str, str]:
    sub = record.get(key)
    if not isinstance(sub, dict) or "title" not in sub:
        raise DatasetError(f"{source}:{lineno}: {key!r} must be an object with a title")
    return str(sub["title"]), str(sub.get("body", ""))


def load_duplicate_pairs(path: Path | str) -> list[DuplicatePair]:
    source = str(path)
    text = Path(path).read_text(encoding="utf-8")
    pairs: list[DuplicatePair] = []
    for lineno, record in _iter_jsonl(text.splitlines(), source):
        a_title, a_body = _issue_fields(record, "a", source, lineno)
        b_title, b_body = _issue_fields(record, "b", source, lineno)
        verdict = record.get("duplicate")
        if not isinstance(verdict, bool):
            raise DatasetError(f"{source}:{lineno}: 'duplicate' must be true or false")
        pairs.append(DuplicatePair(a_title, a_body, b_title, b_body, verdict))
    if not pairs:
        raise DatasetError(f"{source}: dataset contains no examples")
    return pairs


def load_severity_dataset(path: Path | str) -> list[SeverityExample]:
    text = Path(path).read_text(encoding="utf-8")
    try:
        examples = parse_severity_examples(text.splitlines(), source=str(path))
    except ValueError as exc:
        raise DatasetError(str(exc)) from exc
    if not examples:
        raise DatasetError(f"{path}: dataset contains no examples")
    return examples


def load_localization_dataset(path: Path | str) -> list[LocalizationExample]:
    source = str(path)
    text = Path(path).read_text(encoding="utf-8")
    examples: list[LocalizationExample] = []
    for lineno, record in _iter_jsonl(text.splitlines(), source):
        title, body = _issue_fields(record, "issue", source, lineno)
        files = record.get("files")
        relevant = record.get("relevant")
        if not isinstance(files, list) or not files or not all(isinstance(f, str) for f in files):
            raise DatasetError(f"{source}:{lineno}: 'files' must be a non-empty list of paths")
        if (
            not isinstance(relevant, list)
            or not relevant
            or not all(isinstance(r, str) for r in relevant)
        ):
            raise DatasetError(f"{source}:{lineno}: 'relevant' must be a non-empty list of paths")
        missing = sorted(set(relevant) - set(files))
        if missing:
            raise DatasetError(f"{source}:{lineno}: relevant paths not in 'files': {missing}")
        if len(set(files)) != len(files):
            raise DatasetError(f"{source}:{lineno}: 'files' contains duplicates")
        examples.append(
            LocalizationExample(
                title=title, body=body, files=tuple(files), relevant=tuple(relevant)
            )
        )
    if not examples:
        raise DatasetError(f"{source}: dataset contains no examples")
    return examples


def score_pair(
    pairs: Sequence[DuplicatePair],
    title_weight: int = DEFAULT_TITLE_WEIGHT,
) -> list[float]:
    """Cosine for every pair, under one corpus built from all pair texts.

    Pair-local corpora degenerate: with the +1-smoothed idf, a two
    document corpus zeroes every term the two sides share. Building the
    corpus over the whole dataset keeps scores informative and makes
    them a property of the dataset, which is what an evaluation wants.
    """
    docs = []
    for pair in pairs:
        docs.append(tokenize("\n".join([pair.a_title] * title_weight + [pair.a_body])))
        docs.append(tokenize("\n".join([pair.b_title] * title_weight + [pair.b_body])))
    corpus = build_corpus(docs)
    scores: list[float] = []
    for i in range(0, len(docs), 2):
        scores.append(cosine(tfidf_vector(docs[i], corpus), tfidf_vector(docs[i + 1], corpus)))
    return scores


def eval_duplicates(
    pairs: Sequence[DuplicatePair],
    threshold: float = DEFAULT_THRESHOLD,
    title_weight: int = DEFAULT_TITLE_WEIGHT,
) -> EvalReport:
    if not pairs:
        raise DatasetError("dataset contains no examples")
    scores = score_pair(pairs, title_weight)
    tp = fp = fn = tn = 0
    for pair, score in zip(pairs, scores):
        predicted = score >= threshold
        if predicted and pair.duplicate:
            tp += 1
        elif predicted and not pair.duplicate:
            fp += 1
        elif not predicted and pair.duplicate:
            fn += 1
        else:
            tn += 1
    flags: list[str] = []
    accuracy = (tp + tn) / len(pairs)
    if tp + fp == 0:
        precision = 1.0 if tp + fn == 0 else 0.0
        flags.append("precision-undefined:no-predicted-positives")
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall = 1.0 if tp + fp == 0 else 0.0
        flags.append("recall-undefined:no-actual-positives")
    else:
        recall = tp / (tp + fn)
    return EvalReport(
        n_examples=len(pairs),
        flags=tuple(flags),
        accuracy=accuracy,
        precision=precision,
        recall=recall,
    )


def eval_severity(examples: Sequence[SeverityExample], model: SeverityModel) -> EvalReport:
    if not examples:
        raise DatasetError("dataset contains no examples")
    predictions = [
        predict_severity_text(model, example.title, example.body)[0] for example in examples
    ]
    correct = sum(1 for ex, pred in zip(examples, predictions) if ex.severity is pred)
    flags: list[str] = []
    precision_parts: list[float] = []
    recall_parts: list[float] = []
    for cls in SEVERITY_ORDER:
        tp = sum(1 for ex, pred in zip(examples, predictions) if pred is cls and ex.severity is cls)
        fp = sum(
            1 for ex, pred in zip(examples, predictions) if pred is cls and ex.severity is not cls
        )
        fn = sum(
            1 for ex, pred in zip(examples, predictions) if pred is not cls and ex.severity is cls
        )
        if tp + fp == 0:
            precision_parts.append(0.0)
            flags.append(f"precision-undefined:{cls.value}:never-predicted")
        else:
            precision_parts.append(tp / (tp + fp))
        if tp + fn == 0:
            recall_parts.append(0.0)
            flags.append(f"recall-undefined:{cls.value}:no-examples")
        else:
            recall_parts.append(tp / (tp + fn))
    n_classes = len(SEVERITY_ORDER)
    return EvalReport(
        n_examples=len(examples),
        flags=tuple(flags),
        accuracy=correct / len(examples),
        precision=math.fsum(precision_parts) / n_classes,
        recall=math.fsum(recall_parts) / n_classes,
    )


def average_precision(ranking: Sequence[str], relevant: Sequence[str]) -> float:
    """AP with the divisor fixed at |relevant|.

    Each relevant path retrieved at rank r adds precision@r; a relevant
    path missing from the ranking adds nothing.
    """
    if not relevant:
        raise ValueError("relevant set must be non-empty")
    wanted = set(relevant)
    hits = 0
    total = 0.0
    for rank, path in enumerate(ranking, start=1):
        if path in wanted:
            hits += 1
            total += hits / rank
    return total / len(wanted)


def eval_localization(
    examples: Sequence[LocalizationExample],
    k_list: Sequence[int] = (5, 10),
    title_weight: int = DEFAULT_TITLE_WEIGHT,
) -> EvalReport:
    """Hit accuracy at the largest k, precision/recall at each k, MAP."""
    if not examples:
        raise DatasetError("dataset contains no examples")
    ks = sorted(set(k_list))
    if not ks or ks[0] < 1:
        raise ValueError("k values must be >= 1")
    hit_k = ks[-1]
    hits = 0
    ap_values: list[float] = []
    p_sums: dict[int, list[float]] = {k: [] for k in ks}
    r_sums: dict[int, list[float]] = {k: [] for k in ks}
    flags: list[str] = []
    any_empty = False
    for example in examples:
        ranking = [
            path
            for path, _score in rank_paths(example.title, example.body, list(example.files), title_weight)
        ]
        if not ranking:
            any_empty = True
        wanted = set(example.relevant)
        if wanted & set(ranking[:hit_k]):
            hits += 1
        ap_values.append(average_precision(ranking, example.relevant))
        for k in ks:
            found = len(wanted & set(ranking[:k]))
            p_sums[k].append(found / k)
            r_sums[k].append(found / len(wanted))
    if any_empty:
        flags.append("empty-ranking:issue-shares-no-terms-with-any-path")
    n = len(examples)
    return EvalReport(
        n_examples=n,
        flags=tuple(flags),
        accuracy=hits / n,
        p_at_k={k: math.fsum(p_sums[k]) / n for k in ks},
        r_at_k={k: math.fsum(r_sums[k]) / n for k in ks},
        map_score=math.fsum(ap_values) / n,
    )
