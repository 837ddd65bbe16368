"""Deterministic tokenization and sparse TF-IDF / cosine similarity.

All three analyzers sit on top of this module. Everything here is pure:
same input gives the same output across runs, threads, and pool sizes.
Dot products and norms accumulate over terms in lexicographic order so
results are bit-reproducible regardless of dict iteration order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Mapping

# Tokens are plain lowercase strings; a document is a list of them.
TokenStream = list[str]


class InvalidCorpusError(ValueError):
    """Raised when a vector is requested against an empty corpus."""


def _load_stopwords() -> frozenset[str]:
    data = resources.files("issuetriage.data").joinpath("stopwords.txt").read_text("utf-8")
    return frozenset(line.strip() for line in data.splitlines() if line.strip())


STOPWORDS: frozenset[str] = _load_stopwords()

_MIN_TOKEN_LEN = 2


def _split_identifier(word: str) -> Iterable[str]:
    """Split one alphanumeric run at camelCase and letter/digit boundaries."""
    parts: list[str] = []
    current: list[str] = []
    prev = ""
    for ch in word:
        if current:
            if ch.isdigit() != prev.isdigit():
                parts.append("".join(current))
                current = []
            elif ch.isupper() and prev.islower():
                parts.append("".join(current))
                current = []
            elif ch.islower() and prev.isupper() and len(current) >= 2:
                # End of an acronym run: HTTPServer -> HTTP, Server.
                parts.append("".join(current[:-1]))
                current = [current[-1]]
        current.append(ch)
        prev = ch
    if current:
        parts.append("".join(current))
    return parts


def tokenize(text: str) -> TokenStream:
    """Turn free text into lowercase tokens.

    Rules, in order: split on non-alphanumeric characters, split identifiers
    at camelCase and digit/letter boundaries, lowercase, drop tokens shorter
    than two characters, drop stop words.
    """
    tokens: TokenStream = []
    word: list[str] = []
    for ch in text:
        if ch.isalnum():
            word.append(ch)
            continue
        if word:
            tokens.extend(_split_identifier("".join(word)))
            word = []
    if word:
        tokens.extend(_split_identifier("".join(word)))

    out: TokenStream = []
    for token in tokens:
        lowered = token.lower()
        if len(lowered) < _MIN_TOKEN_LEN or lowered in STOPWORDS:
            continue
        out.append(lowered)
    return out


@dataclass(frozen=True)
class Corpus:
    """Document counts for IDF: how many documents contain each term."""

    doc_count: int
    doc_freq: Mapping[str, int]


def build_corpus(docs: Iterable[TokenStream]) -> Corpus:
    doc_freq: dict[str, int] = {}
    doc_count = 0
    for doc in docs:
        doc_count += 1
        for term in set(doc):
            doc_freq[term] = doc_freq.get(term, 0) + 1
    return Corpus(doc_count=doc_count, doc_freq=doc_freq)


@dataclass(frozen=True)
class TermVector:
    """Sparse non-negative term weights plus their Euclidean norm.

    Zero-weight terms are never stored. Treat instances as immutable;
    they are shared freely across threads.
    """

    weights: Mapping[str, float]
    norm: float = field(default=0.0)

    @staticmethod
    def from_weights(weights: Mapping[str, float]) -> "TermVector":
        kept = {t: w for t, w in weights.items() if w != 0.0}
        total = 0.0
        for term in sorted(kept):
            w = kept[term]
            total += w * w
        return TermVector(weights=kept, norm=math.sqrt(total))


def tfidf_vector(doc: TokenStream, corpus: Corpus) -> TermVector:
    """Sublinear TF times smoothed IDF.

    weight(t) = (1 + ln tf) * ln((doc_count + 1) / (df + 1)). Terms absent
    from the corpus get df = 0 and survive via the +1 smoothing; terms that
    appear in every document get weight 0 and drop out of the vector.
    """
    if corpus.doc_count < 1:
        raise InvalidCorpusError("corpus has no documents")
    counts: dict[str, int] = {}
    for term in doc:
        counts[term] = counts.get(term, 0) + 1
    weights: dict[str, float] = {}
    for term, raw in counts.items():
        tf = 1.0 + math.log(raw)
        idf = math.log((corpus.doc_count + 1) / (corpus.doc_freq.get(term, 0) + 1))
        weights[term] = tf * idf
    return TermVector.from_weights(weights)


def cosine(u: TermVector, v: TermVector) -> float:
    """Cosine similarity in [0, 1]; 0 when either vector has zero norm."""
    if u.norm == 0.0 or v.norm == 0.0:
        return 0.0
    if len(u.weights) > len(v.weights):
        u, v = v, u
    dot = 0.0
    for term in sorted(u.weights):
        w = v.weights.get(term)
        if w is not None:
            dot += u.weights[term] * w
    return dot / (u.norm * v.norm)
