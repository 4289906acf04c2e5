"""Joint word/entity embeddings via skip-gram with negative sampling.

Training draws positive pairs from three pools and interleaves them by
shuffling their union each epoch:

* word to context word, within a sliding window over the corpus;
* entity to linked entity, both directions of every graph link;
* entity to anchor context word, tying the two key spaces together.

Each positive trains a binary logistic objective against ``negatives``
uniformly sampled targets from the same namespace. Single-threaded and
bitwise deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .corpus import KnowledgeGraph, normalize_text
from .errors import EmptyCorpus, ParseError, UnknownKey
from .tokenizer import ENTITY_PREFIX, split_words

POOL_NAMES = ("word_context", "entity_neighbor", "entity_anchor")


@dataclass
class EmbeddingConfig:
    dim: int = 16
    window: int = 2
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.05
    seed: int = 0
    min_count: int = 0

    def __post_init__(self):
        for name in ("dim", "window", "negatives", "learning_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.min_count < 0:
            raise ValueError("min_count must be >= 0")


class JointEmbeddingTable:
    """Shared-space vectors for words and entities.

    Words and entities live in disjoint key namespaces; entity keys carry
    an ``ENTITY/`` prefix wherever a single flat key space is exposed
    (files, :func:`similarity`, :func:`neighbors`).
    """

    def __init__(self, dim, word_keys, entity_keys, vectors, context_vectors=None):
        self.dim = dim
        self.word_keys = list(word_keys)
        self.entity_keys = list(entity_keys)
        self.vectors = vectors
        self.context_vectors = context_vectors
        self._rows = {w: i for i, w in enumerate(self.word_keys)}
        offset = len(self.word_keys)
        for i, e in enumerate(self.entity_keys):
            self._rows[ENTITY_PREFIX + e] = offset + i
        self.loss_trace: dict[str, list[float]] = {}

    @property
    def n_words(self) -> int:
        return len(self.word_keys)

    @property
    def n_entities(self) -> int:
        return len(self.entity_keys)

    def keys(self) -> list[str]:
        return self.word_keys + [ENTITY_PREFIX + e for e in self.entity_keys]

    def row(self, key: str) -> int:
        try:
            return self._rows[key]
        except KeyError:
            raise UnknownKey(key) from None

    def vector(self, key: str) -> np.ndarray:
        return self.vectors[self.row(key)]

    def word_vector(self, word: str) -> np.ndarray:
        return self.vector(word)

    def entity_vector(self, entity_id: str) -> np.ndarray:
        return self.vector(ENTITY_PREFIX + entity_id)

    def has_entity(self, entity_id: str) -> bool:
        return ENTITY_PREFIX + entity_id in self._rows

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{self.dim}\t{self.n_words}\t{self.n_entities}\n")
            for key in self.keys():
                values = " ".join(repr(v) for v in self.vectors[self.row(key)])
                fh.write(f"{key}\t{values}\n")

    @classmethod
    def load(cls, path) -> "JointEmbeddingTable":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n").split("\t")
            if len(header) != 3:
                raise ParseError("expected 'dim<TAB>n_words<TAB>n_entities' header", line=1)
            dim, n_words, n_entities = (int(x) for x in header)
            words, entities, rows = [], [], []
            for lineno, raw in enumerate(fh, start=2):
                line = raw.rstrip("\n")
                if not line:
                    continue
                key, _, values = line.partition("\t")
                vec = np.array([float(v) for v in values.split()])
                if vec.shape != (dim,):
                    raise ParseError(f"vector length {vec.size} != dim {dim}", line=lineno)
                if key.startswith(ENTITY_PREFIX):
                    entities.append(key[len(ENTITY_PREFIX) :])
                else:
                    words.append(key)
                rows.append(vec)
        if len(words) != n_words or len(entities) != n_entities:
            raise ParseError(
                f"header promised {n_words} words / {n_entities} entities, "
                f"found {len(words)} / {len(entities)}"
            )
        return cls(dim, words, entities, np.array(rows) if rows else np.zeros((0, dim)))


@dataclass
class _PairPools:
    """Training pairs per objective, as parallel row-index arrays."""

    centers: np.ndarray
    targets: np.ndarray
    pool_ids: np.ndarray
    # Per-pool uniform negative-sampling ranges over the target namespace.
    neg_low: np.ndarray = field(repr=False, default=None)
    neg_high: np.ndarray = field(repr=False, default=None)


def _collect_pairs(corpus_words, graph, word_rows, entity_rows, window, n_words):
    centers, targets, pools = [], [], []

    for words in corpus_words:
        rows = [word_rows[w] for w in words if w in word_rows]
        for i, center in enumerate(rows):
            lo = max(0, i - window)
            hi = min(len(rows), i + window + 1)
            for j in range(lo, hi):
                if j != i:
                    centers.append(center)
                    targets.append(rows[j])
                    pools.append(0)

    if graph is not None:
        for src, dst in graph.links:
            a, b = entity_rows[src], entity_rows[dst]
            centers.extend((a, b))
            targets.extend((b, a))
            pools.extend((1, 1))
        for entity_id, context in graph.anchors:
            erow = entity_rows[entity_id]
            for word in context:
                wrow = word_rows.get(word)
                if wrow is not None:
                    centers.append(erow)
                    targets.append(wrow)
                    pools.append(2)

    centers = np.asarray(centers, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    pools = np.asarray(pools, dtype=np.int64)
    n_rows = n_words + len(entity_rows)
    # Pools 0 and 2 target words, pool 1 targets entities.
    low = np.where(pools == 1, n_words, 0)
    high = np.where(pools == 1, n_rows, n_words)
    return _PairPools(centers, targets, pools, low, high)


def train_joint_embeddings(
    corpus, graph: KnowledgeGraph | None, config: EmbeddingConfig
) -> JointEmbeddingTable:
    """Train the joint table; deterministic for a fixed config and seed."""
    corpus_words = [split_words(normalize_text(text)) for text in corpus]
    freq: dict[str, int] = {}
    for words in corpus_words:
        for word in words:
            freq[word] = freq.get(word, 0) + 1
    if not freq:
        raise EmptyCorpus("no words in corpus")

    word_keys = [w for w in freq if freq[w] >= max(1, config.min_count)]
    word_rows = {w: i for i, w in enumerate(word_keys)}
    entity_keys = list(graph.entities) if graph is not None else []
    entity_rows = {e: len(word_keys) + i for i, e in enumerate(entity_keys)}

    n_rows = len(word_keys) + len(entity_keys)
    rng = np.random.default_rng(config.seed)
    vec_in = (rng.random((n_rows, config.dim)) - 0.5) / config.dim
    vec_out = (rng.random((n_rows, config.dim)) - 0.5) / config.dim

    pairs = _collect_pairs(
        corpus_words, graph, word_rows, entity_rows, config.window, len(word_keys)
    )

    table = JointEmbeddingTable(config.dim, word_keys, entity_keys, vec_in, vec_out)
    table.loss_trace = {name: [] for name in POOL_NAMES}
    n_pairs = pairs.centers.shape[0]
    if n_pairs == 0:
        return table

    for _ in range(config.epochs):
        order = rng.permutation(n_pairs)
        negatives = rng.integers(
            pairs.neg_low[order][:, None],
            pairs.neg_high[order][:, None],
            size=(n_pairs, config.negatives),
            dtype=np.int64,
        )
        losses = _kernels.sgns_epoch(
            vec_in,
            vec_out,
            pairs.centers[order],
            pairs.targets[order],
            negatives,
            config.learning_rate,
        )
        shuffled_pools = pairs.pool_ids[order]
        for pool_id, name in enumerate(POOL_NAMES):
            mask = shuffled_pools == pool_id
            if mask.any():
                table.loss_trace[name].append(float(losses[mask].mean()))
    return table


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def similarity(table: JointEmbeddingTable, key_a: str, key_b: str) -> float:
    """Cosine between two table vectors, in [-1, 1]."""
    return cosine(table.vector(key_a), table.vector(key_b))


def neighbors(table: JointEmbeddingTable, key: str, k: int) -> list[tuple[str, float]]:
    """Top-k keys by descending cosine, ties broken lexicographically."""
    if k < 1:
        raise ValueError("k must be >= 1")
    query = table.vector(key)
    scored = [
        (other, cosine(query, table.vector(other)))
        for other in table.keys()
        if other != key
    ]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:k]
