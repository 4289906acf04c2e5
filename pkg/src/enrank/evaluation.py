"""Ranking metrics, significance testing, and model analyses.

NDCG uses linear gain with the ideal ranking computed over all judged
documents of a query; queries with no relevant documents score 0. The
paired t-test derives its two-tailed p-value from the Student-t CDF via
the regularized incomplete beta function, evaluated with a continued
fraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import Annotation, Qrel, Query, QueryType
from .encoder import EncoderWeights, forward
from .errors import LengthMismatch
from .pipeline import InputFactory, Run
from .tokenizer import MentionCategory, TokenKind, Vocabulary, categorize_query


def ndcg_at_k(ranking, qrels_for_query: dict[str, int], k: int) -> float:
    """NDCG@k with linear gain; 0 when the query has no relevant docs."""
    if k < 1:
        raise ValueError("k must be >= 1")
    doc_ids = [item[0] if isinstance(item, tuple) else item for item in ranking]
    dcg = 0.0
    for i, doc_id in enumerate(doc_ids[:k], start=1):
        gain = qrels_for_query.get(doc_id, 0)
        dcg += gain / math.log2(i + 1)
    ideal = sorted(qrels_for_query.values(), reverse=True)
    idcg = sum(g / math.log2(i + 1) for i, g in enumerate(ideal[:k], start=1))
    if idcg == 0.0:
        return 0.0
    return dcg / idcg


def qrels_by_query(qrels: list[Qrel]) -> dict[str, dict[str, int]]:
    grouped: dict[str, dict[str, int]] = {}
    for qrel in qrels:
        grouped.setdefault(qrel.query_id, {})[qrel.doc_id] = qrel.grade
    return grouped


@dataclass
class EvalReport:
    tag: str
    cutoffs: list[int]
    per_query: dict[str, dict[int, float]]
    means: dict[int, float]
    unjudged_queries: list[str] = field(default_factory=list)
    empty_queries: list[str] = field(default_factory=list)
    significance: dict[int, tuple[float, float]] = field(default_factory=dict)

    def scores_at(self, cutoff: int, query_ids=None) -> list[float]:
        ids = sorted(self.per_query) if query_ids is None else list(query_ids)
        return [self.per_query[qid][cutoff] for qid in ids]

    def to_tsv(self) -> str:
        lines = ["query_id\t" + "\t".join(f"ndcg@{k}" for k in self.cutoffs)]
        for qid in sorted(self.per_query):
            values = "\t".join(repr(self.per_query[qid][k]) for k in self.cutoffs)
            lines.append(f"{qid}\t{values}")
        mean_values = "\t".join(repr(self.means[k]) for k in self.cutoffs)
        lines.append(f"mean\t{mean_values}")
        for k in self.cutoffs:
            if k in self.significance:
                t, p = self.significance[k]
                mark = "*" if p < 0.05 else ""
                lines.append(f"significance@{k}\tt={t!r} p={p!r}{mark}")
        for qid in self.unjudged_queries:
            lines.append(f"warning\tno judgments for query {qid}")
        for qid in self.empty_queries:
            lines.append(f"warning\tempty run for query {qid}")
        return "\n".join(lines) + "\n"


def evaluate_run(run: Run, qrels: list[Qrel], cutoffs=(10, 100)) -> EvalReport:
    """Per-query NDCG at each cutoff over the union of run and judged queries.

    Run queries lacking judgments and judged queries missing from the run
    both score 0 and are flagged.
    """
    cutoffs = list(cutoffs)
    judged = qrels_by_query(qrels)
    query_ids = sorted(set(run.rankings) | set(judged))
    per_query: dict[str, dict[int, float]] = {}
    unjudged, empty = [], []
    for qid in query_ids:
        ranking = run.rankings.get(qid)
        if ranking is None:
            empty.append(qid)
            per_query[qid] = {k: 0.0 for k in cutoffs}
            continue
        if qid not in judged:
            unjudged.append(qid)
            per_query[qid] = {k: 0.0 for k in cutoffs}
            continue
        per_query[qid] = {k: ndcg_at_k(ranking, judged[qid], k) for k in cutoffs}
    means = {
        k: sum(scores[k] for scores in per_query.values()) / len(per_query)
        if per_query
        else 0.0
        for k in cutoffs
    }
    return EvalReport(run.tag, cutoffs, per_query, means, unjudged, empty)


def _beta_cont_fraction(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 200):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cont_fraction(a, b, x) / a
    return 1.0 - front * _beta_cont_fraction(b, a, 1.0 - x) / b


def paired_ttest(scores_a, scores_b) -> tuple[float, float]:
    """Two-tailed paired t-test; identical inputs give p = 1.0."""
    if len(scores_a) != len(scores_b) or len(scores_a) < 2:
        raise LengthMismatch(
            f"need two equal-length samples of size >= 2, "
            f"got {len(scores_a)} and {len(scores_b)}"
        )
    diffs = np.asarray(scores_a, dtype=float) - np.asarray(scores_b, dtype=float)
    n = diffs.size
    mean = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), 0.0
    t = mean / (sd / math.sqrt(n))
    df = n - 1
    p = regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
    return t, p


def mark_significance(report: EvalReport, baseline: EvalReport) -> EvalReport:
    """Attach paired t-test results against a baseline report, per cutoff."""
    shared = sorted(set(report.per_query) & set(baseline.per_query))
    for k in report.cutoffs:
        if k not in baseline.cutoffs:
            continue
        a = [report.per_query[qid][k] for qid in shared]
        b = [baseline.per_query[qid][k] for qid in shared]
        report.significance[k] = paired_ttest(a, b)
    return report


@dataclass
class CategoryReport:
    tag_a: str
    tag_b: str
    rows: list[tuple[MentionCategory, int, float, float]]

    def to_tsv(self) -> str:
        lines = [f"category\tcount\tndcg@10:{self.tag_a}\tndcg@10:{self.tag_b}"]
        for category, count, mean_a, mean_b in self.rows:
            lines.append(f"{category.label}\t{count}\t{mean_a!r}\t{mean_b!r}")
        return "\n".join(lines) + "\n"


def query_categories(
    queries: dict[str, Query], annotations: list[Annotation], vocab: Vocabulary
) -> dict[str, MentionCategory]:
    by_owner: dict[str, list[Annotation]] = {}
    for ann in annotations:
        by_owner.setdefault(ann.owner_id, []).append(ann)
    return {
        qid: categorize_query(by_owner.get(qid, []), vocab) for qid in queries
    }


def category_report(
    run_a: Run,
    run_b: Run,
    queries: dict[str, Query],
    annotations: list[Annotation],
    vocab: Vocabulary,
    qrels: list[Qrel],
) -> CategoryReport:
    """Mean NDCG@10 of both runs, bucketed by mention category."""
    categories = query_categories(queries, annotations, vocab)
    report_a = evaluate_run(run_a, qrels, cutoffs=(10,))
    report_b = evaluate_run(run_b, qrels, cutoffs=(10,))
    buckets: dict[MentionCategory, list[str]] = {}
    for qid in queries:
        buckets.setdefault(categories[qid], []).append(qid)
    rows = []
    for category in sorted(buckets, key=lambda c: c.value):
        members = buckets[category]
        mean_a = sum(report_a.per_query[q][10] for q in members) / len(members)
        mean_b = sum(report_b.per_query[q][10] for q in members) / len(members)
        rows.append((category, len(members), mean_a, mean_b))
    return CategoryReport(run_a.tag, run_b.tag, rows)


@dataclass
class CrossTab:
    counts: dict[tuple[MentionCategory, QueryType], int]

    def cell(self, category: MentionCategory, query_type: QueryType) -> int:
        return self.counts.get((category, query_type), 0)

    def to_tsv(self) -> str:
        types = list(QueryType)
        lines = ["category\t" + "\t".join(t.value for t in types)]
        for category in sorted(MentionCategory, key=lambda c: c.value):
            cells = "\t".join(str(self.cell(category, t)) for t in types)
            lines.append(f"{category.label}\t{cells}")
        return "\n".join(lines) + "\n"


def crosstab(
    queries: dict[str, Query], annotations: list[Annotation], vocab: Vocabulary
) -> CrossTab:
    """Counts of mention category by query type."""
    categories = query_categories(queries, annotations, vocab)
    counts: dict[tuple[MentionCategory, QueryType], int] = {}
    for qid, query in queries.items():
        key = (categories[qid], query.query_type)
        counts[key] = counts.get(key, 0) + 1
    return CrossTab(counts)


def export_final_embeddings(
    weights: EncoderWeights,
    query_doc_pairs: list[tuple[str, str]],
    factory: InputFactory,
    entity_vectors=None,
) -> list[tuple[str, str, str, np.ndarray]]:
    """Final-layer vectors of entity tokens and their mention tokens.

    For every entity token in each pair's input, emits the entity row and
    the row of the first beginning word piece scanning back from it.
    Row format: (kind, surface, query_id, vector).
    """
    rows = []
    for query_id, doc_id in query_doc_pairs:
        model_input = factory.build(doc_id, query_id=query_id)
        out = forward(weights, model_input, entity_vectors)
        tokens = model_input.tokens
        for pos, token in enumerate(tokens):
            if token.kind is not TokenKind.ENTITY:
                continue
            rows.append(("entity", token.surface, query_id, out.final_hidden[pos]))
            for back in range(pos - 1, -1, -1):
                mention = tokens[back]
                if mention.kind is TokenKind.WORD_PIECE and not mention.surface.startswith("##"):
                    rows.append(("mention", mention.surface, query_id, out.final_hidden[back]))
                    break
    return rows


def export_attention(
    weights: EncoderWeights,
    query_id: str,
    doc_id: str,
    factory: InputFactory,
    entity_vectors=None,
) -> list[tuple[str, float]]:
    """Attention of the classification token, first layer, first head."""
    model_input = factory.build(doc_id, query_id=query_id)
    out = forward(weights, model_input, entity_vectors)
    weights_row = out.attentions[0, 0, 0]
    return [
        (token.surface, float(w)) for token, w in zip(model_input.tokens, weights_row)
    ]


def embeddings_to_tsv(rows) -> str:
    lines = ["kind\tsurface\tquery_id\tvector"]
    for kind, surface, query_id, vector in rows:
        values = " ".join(repr(float(v)) for v in vector)
        lines.append(f"{kind}\t{surface}\t{query_id}\t{values}")
    return "\n".join(lines) + "\n"


def attention_to_tsv(rows) -> str:
    lines = ["surface\tweight"]
    for surface, weight in rows:
        lines.append(f"{surface}\t{weight!r}")
    return "\n".join(lines) + "\n"
