"""Multi-stage ranking orchestration.

First-stage runs are re-ranked by rescoring the top candidates with a
point-wise relevance scorer; training follows the two-stage recipe of a
general triples pass followed by per-fold fine-tuning. Entity-enabled and
entity-disabled modes share one code path, differing only in whether
annotations are applied at tokenization time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .alignment import AlignmentMatrix, map_token
from .corpus import Collection, FoldSpec
from .embeddings import JointEmbeddingTable
from .encoder import EncoderWeights, TrainingBatch, forward, train_pointwise
from .errors import MissingDocText, ParseError
from .tokenizer import (
    InputLimits,
    ModelInput,
    Token,
    TokenKind,
    Vocabulary,
    annotate_tokens,
    build_input,
    wordpiece_tokenize,
)

# Tail candidates keep their order on a strictly decreasing score ramp
# below the rescored block, so per-query scores stay non-increasing.
TAIL_STEP = 1e-6


@dataclass
class Run:
    """Per-query ranked lists; rank i+1 is position i."""

    tag: str
    rankings: dict[str, list[tuple[str, float]]]

    def candidate_sets(self) -> dict[str, list[str]]:
        return {qid: [doc for doc, _ in ranked] for qid, ranked in self.rankings.items()}


def write_run(run: Run, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for query_id, ranked in run.rankings.items():
            for rank, (doc_id, score) in enumerate(ranked, start=1):
                fh.write(f"{query_id} Q0 {doc_id} {rank} {score!r} {run.tag}\n")


def read_run(path) -> Run:
    rankings: dict[str, list[tuple[str, float]]] = {}
    tag = "run"
    for lineno, line in enumerate(open(path, encoding="utf-8"), start=1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ParseError(f"expected 6 run-file fields, got {line!r}", line=lineno)
        query_id, _, doc_id, rank_str, score_str, tag = parts
        try:
            rank, score = int(rank_str), float(score_str)
        except ValueError:
            raise ParseError(f"bad rank/score in {line!r}", line=lineno) from None
        ranked = rankings.setdefault(query_id, [])
        if rank != len(ranked) + 1:
            raise ParseError(
                f"rank {rank} for query {query_id} not contiguous "
                f"(expected {len(ranked) + 1})",
                line=lineno,
            )
        if ranked and score > ranked[-1][1]:
            raise ParseError(f"scores increase at rank {rank} of query {query_id}", line=lineno)
        ranked.append((doc_id, score))
    return Run(tag, rankings)


class InputFactory:
    """Builds encoder inputs from collection texts and annotations.

    With ``entities_enabled`` the tokens of each annotated mention are
    followed by the separator and entity token, provided the entity has an
    embedding (``known_entities``). Query texts that match a collection
    query verbatim inherit its annotations, which lets triples files refer
    to queries by text alone.
    """

    def __init__(
        self,
        collection: Collection,
        vocab: Vocabulary,
        known_entities=None,
        entities_enabled: bool = True,
        limits: InputLimits = InputLimits(),
    ):
        self.collection = collection
        self.vocab = vocab
        self.known_entities = known_entities
        self.entities_enabled = entities_enabled
        self.limits = limits
        self._by_owner: dict[str, list] = {}
        for ann in collection.annotations:
            self._by_owner.setdefault(ann.owner_id, []).append(ann)
        self._text_to_query = {q.text: q.query_id for q in collection.queries.values()}

    def _tokens(self, text: str, owner_id: str | None) -> list[Token]:
        anns = self._by_owner.get(owner_id, []) if owner_id else []
        if self.entities_enabled and anns:
            return annotate_tokens(text, anns, self.vocab, self.known_entities)
        return wordpiece_tokenize(text, self.vocab)

    def query_tokens(self, query_id: str | None = None, query_text: str | None = None):
        if query_id is not None:
            query = self.collection.queries.get(query_id)
            if query is None:
                raise KeyError(f"unknown query: {query_id}")
            return self._tokens(query.text, query_id)
        owner = self._text_to_query.get(query_text)
        return self._tokens(query_text, owner)

    def doc_tokens(self, doc_id: str) -> list[Token]:
        doc = self.collection.docs.get(doc_id)
        if doc is None:
            raise MissingDocText(doc_id)
        return self._tokens(doc.text, doc_id)

    def build(self, doc_id: str, query_id: str | None = None,
              query_text: str | None = None) -> ModelInput:
        return build_input(
            self.query_tokens(query_id, query_text),
            self.doc_tokens(doc_id),
            self.vocab,
            self.limits,
        )


def make_entity_provider(vocab: Vocabulary, table: JointEmbeddingTable,
                         alignment: AlignmentMatrix, token_table):
    """Entity-token id to encoder-space vector, via the fitted map."""

    def provider(token_id: int):
        surface = vocab.surface_of(token_id)
        return map_token(Token(TokenKind.ENTITY, token_id, surface), table, alignment, token_table)

    return provider


def make_scorer(weights: EncoderWeights, factory: InputFactory, entity_vectors=None):
    """Point-wise scorer: (query_id, doc_id) -> relevance probability."""

    def scorer(query_id: str, doc_id: str) -> float:
        model_input = factory.build(doc_id, query_id=query_id)
        return forward(weights, model_input, entity_vectors).probability

    return scorer


def make_fold_scorer(models: dict[int, EncoderWeights], folds: list[FoldSpec],
                     factory: InputFactory, entity_vectors=None):
    """Route each query to the model of the fold holding it in test."""
    fold_of = {}
    for fold in folds:
        for qid in fold.test_query_ids:
            fold_of[qid] = fold.fold_id
    scorers = {
        fid: make_scorer(model, factory, entity_vectors) for fid, model in models.items()
    }

    def scorer(query_id: str, doc_id: str) -> float:
        if query_id not in fold_of:
            raise KeyError(f"query {query_id} is in no fold's test set")
        return scorers[fold_of[query_id]](query_id, doc_id)

    return scorer


def rerank(run: Run, scorer, depth: int, tag: str | None = None) -> Run:
    """Rescore the top-``depth`` candidates per query and resort them.

    Candidates below the depth keep their relative order, on scores
    remapped strictly below the rescored block so the run stays sorted.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    rankings: dict[str, list[tuple[str, float]]] = {}
    for query_id, ranked in run.rankings.items():
        block = ranked[:depth]
        rescored = sorted(
            ((doc_id, scorer(query_id, doc_id)) for doc_id, _ in block),
            key=lambda item: (-item[1], item[0]),
        )
        floor = min((s for _, s in rescored), default=0.0)
        tail = [
            (doc_id, floor - (j + 1) * TAIL_STEP)
            for j, (doc_id, _) in enumerate(ranked[depth:])
        ]
        rankings[query_id] = rescored + tail
    return Run(tag or f"{run.tag}-reranked", rankings)


@dataclass
class StagePlan:
    """General triples for stage 1, fold-driven pairs for stage 2."""

    stage1_triples: list[tuple[str, str, str]]
    folds: list[FoldSpec]
    stage2_pairs: dict[int, list[tuple[str, str, int]]]

    def __post_init__(self):
        by_fold = {fold.fold_id: fold for fold in self.folds}
        for fold_id, pairs in self.stage2_pairs.items():
            test_ids = by_fold[fold_id].test_query_ids
            leaked = {qid for qid, _, _ in pairs} & test_ids
            if leaked:
                raise ValueError(f"fold {fold_id} trains on its own test queries: {sorted(leaked)}")


def make_stage_plan(collection: Collection, stage1_triples) -> StagePlan:
    """Stage-2 pairs from fold train queries; positives are grade > 0."""
    stage2: dict[int, list[tuple[str, str, int]]] = {}
    for fold in collection.folds:
        pairs = []
        for qrel in collection.qrels:
            if qrel.query_id in fold.train_query_ids:
                pairs.append((qrel.query_id, qrel.doc_id, 1 if qrel.grade > 0 else 0))
        stage2[fold.fold_id] = pairs
    return StagePlan(list(stage1_triples), list(collection.folds), stage2)


def _into_batches(examples, batch_size):
    batches = []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start : start + batch_size]
        batches.append(TrainingBatch([mi for mi, _ in chunk], [lbl for _, lbl in chunk]))
    return batches


@dataclass
class FinetuneResult:
    models: dict[int, EncoderWeights]
    stage1_trace: list[float]
    fold_traces: dict[int, list[float]]
    trained_queries: dict[int, set[str]] = field(default_factory=dict)


def load_triples(path) -> list[tuple[str, str, str]]:
    """Stage-1 triples file: ``query_text<TAB>positive<TAB>negative``."""
    triples = []
    for lineno, line in enumerate(open(path, encoding="utf-8"), start=1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"expected 3 triple fields, got {line!r}", line=lineno)
        triples.append(tuple(parts))
    return triples


def save_triples(triples, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for query_text, pos_doc, neg_doc in triples:
            fh.write(f"{query_text}\t{pos_doc}\t{neg_doc}\n")


def two_stage_finetune(
    weights: EncoderWeights,
    plan: StagePlan,
    factory: InputFactory,
    lr: float,
    entity_vectors=None,
    stage1_epochs: int = 1,
    stage2_epochs: int = 1,
    batch_size: int = 8,
    warmup_steps: int = 0,
    stage1_factory: InputFactory | None = None,
    stage2_lr: float | None = None,
) -> FinetuneResult:
    """Stage 1 on the general triples, then one clone per fold on its
    training pairs. Returns a model per fold.

    ``stage1_factory`` lets the triples resolve against a different
    (general) collection; it defaults to ``factory``. Stage 2 uses
    ``stage2_lr`` (default ``lr``) with a warm-up over the first 10% of
    its updates.
    """
    general = stage1_factory or factory
    stage1_examples = []
    for query_text, pos_doc, neg_doc in plan.stage1_triples:
        stage1_examples.append((general.build(pos_doc, query_text=query_text), 1))
        stage1_examples.append((general.build(neg_doc, query_text=query_text), 0))
    stage1_trace: list[float] = []
    if stage1_examples and stage1_epochs > 0:
        _, stage1_trace = train_pointwise(
            weights,
            _into_batches(stage1_examples, batch_size),
            lr,
            stage1_epochs,
            entity_vectors,
            warmup_steps,
        )

    models: dict[int, EncoderWeights] = {}
    fold_traces: dict[int, list[float]] = {}
    trained: dict[int, set[str]] = {}
    for fold in plan.folds:
        fold_weights = weights.clone()
        pairs = plan.stage2_pairs.get(fold.fold_id, [])
        examples = [
            (factory.build(doc_id, query_id=query_id), label)
            for query_id, doc_id, label in pairs
        ]
        trained[fold.fold_id] = {query_id for query_id, _, _ in pairs}
        assert not trained[fold.fold_id] & fold.test_query_ids
        if examples and stage2_epochs > 0:
            batches = _into_batches(examples, batch_size)
            _, trace = train_pointwise(
                fold_weights,
                batches,
                stage2_lr if stage2_lr is not None else lr,
                stage2_epochs,
                entity_vectors,
                warmup_steps=max(1, len(batches) * stage2_epochs // 10),
            )
        else:
            trace = []
        models[fold.fold_id] = fold_weights
        fold_traces[fold.fold_id] = trace
    return FinetuneResult(models, stage1_trace, fold_traces, trained)
