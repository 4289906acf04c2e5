"""First-stage BM25 retrieval over entity abstracts.

Indexing operates on word-level tokens (whitespace/punctuation split), not
word pieces, so document frequencies reflect ordinary text statistics. The
idf uses the +1-smoothed Robertson form, which keeps every contribution
non-negative on small corpora.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .corpus import Document
from .errors import UnknownDoc
from .tokenizer import split_words

DEFAULT_K = 0.9
DEFAULT_B = 0.4


@dataclass
class InvertedIndex:
    postings: dict[str, list[tuple[str, int]]]
    doc_lengths: dict[str, int]
    avgdl: float
    n_docs: int
    _tf: dict[str, dict[str, int]] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if not self._tf:
            self._tf = {term: dict(plist) for term, plist in self.postings.items()}

    def doc_freq(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def term_freq(self, term: str, doc_id: str) -> int:
        return self._tf.get(term, {}).get(doc_id, 0)


@dataclass
class RetrievalResult:
    query_id: str
    ranking: list[tuple[str, float]]


def build_index(docs) -> InvertedIndex:
    """Index a mapping or iterable of documents."""
    if hasattr(docs, "values"):
        docs = list(docs.values())
    postings: dict[str, dict[str, int]] = {}
    doc_lengths: dict[str, int] = {}
    for doc in docs:
        terms = split_words(doc.text)
        doc_lengths[doc.doc_id] = len(terms)
        for term in terms:
            bucket = postings.setdefault(term, {})
            bucket[doc.doc_id] = bucket.get(doc.doc_id, 0) + 1
    n_docs = len(doc_lengths)
    avgdl = sum(doc_lengths.values()) / n_docs if n_docs else 0.0
    sorted_postings = {
        term: sorted(bucket.items()) for term, bucket in postings.items()
    }
    return InvertedIndex(sorted_postings, doc_lengths, avgdl, n_docs)


def _idf(index: InvertedIndex, term: str) -> float:
    df = index.doc_freq(term)
    return math.log((index.n_docs - df + 0.5) / (df + 0.5) + 1.0)


def _term_contribution(index, term, tf, doc_id, k, b):
    if tf == 0:
        return 0.0
    norm = k * (1.0 - b + b * index.doc_lengths[doc_id] / index.avgdl)
    return _idf(index, term) * tf * (k + 1.0) / (tf + norm)


def bm25_score(
    index: InvertedIndex,
    query_terms: list[str],
    doc_id: str,
    k: float = DEFAULT_K,
    b: float = DEFAULT_B,
) -> float:
    """BM25 over the query terms; repeated terms contribute repeatedly."""
    if doc_id not in index.doc_lengths:
        raise UnknownDoc(doc_id)
    score = 0.0
    for term in query_terms:
        score += _term_contribution(index, term, index.term_freq(term, doc_id), doc_id, k, b)
    return score


def search(
    index: InvertedIndex,
    query_terms: list[str],
    k_top: int,
    k: float = DEFAULT_K,
    b: float = DEFAULT_B,
    query_id: str = "",
) -> RetrievalResult:
    """Top-``k_top`` documents by BM25, ties broken by ascending doc id.

    Accumulates scores over postings lists, then fills with zero-score
    documents, which is rank-identical to exhaustively scoring every
    document in the index.
    """
    if k_top < 1:
        raise ValueError("k_top must be >= 1")
    scores: dict[str, float] = {}
    for term in query_terms:
        for doc_id, tf in index.postings.get(term, ()):
            scores[doc_id] = scores.get(doc_id, 0.0) + _term_contribution(
                index, term, tf, doc_id, k, b
            )
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    if len(ranked) < k_top:
        matched = set(scores)
        ranked.extend(
            (doc_id, 0.0)
            for doc_id in sorted(index.doc_lengths)
            if doc_id not in matched
        )
    return RetrievalResult(query_id, ranked[:k_top])
