"""Synthetic desk-scale collections for experiments and tests.

Builds a world of entity groups: each group shares theme words and forms a
clique in the knowledge graph, and each entity owns one abstract document.
Half of the entity mentions are common words, repeated in their abstracts
so vocabulary learning merges them into single pieces; the other half are
rare words that occur once in the corpus and stay fragmented into
continuation pieces. Distractor documents reuse theme and filler words so
first-stage retrieval produces confusable candidate sets.

A separate "general" query set over the same documents feeds stage-1
training triples, keeping the evaluation queries unseen until the
fold-wise second stage.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .corpus import (
    Annotation,
    Collection,
    Document,
    FoldSpec,
    KnowledgeGraph,
    Qrel,
    Query,
    query_type_of,
    save_annotations,
    save_documents,
    save_folds,
    save_graph,
    save_qrels,
    save_queries,
)
from .pipeline import save_triples

_CONSONANTS = "bcdfgklmnprstvz"
_VOWELS = "aeiou"
_FILLERS = ["is", "a", "of", "the", "region", ".", "place", "near", "lies", "in"]
_QUERY_ID_PREFIXES = ["SemSearch_ES", "INEX_LD", "SemSearch_LS", "QALD2_te"]


def _syllable(rng) -> str:
    return _CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]


def _make_words(rng, count: int, syllables: int, taken: set[str]) -> list[str]:
    words = []
    while len(words) < count:
        word = "".join(_syllable(rng) for _ in range(syllables))
        if word not in taken:
            taken.add(word)
            words.append(word)
    return words


@dataclass
class World:
    collection: Collection
    general: Collection
    graph: KnowledgeGraph
    triples: list[tuple[str, str, str]]
    groups: dict[str, int]
    split_entities: set[str]
    paths: dict[str, str]


def make_world(
    out_dir,
    n_groups: int = 10,
    group_size: int = 4,
    n_distractors: int = 160,
    negatives_per_query: int = 8,
    general_queries_per_entity: int = 2,
    seed: int = 0,
) -> World:
    """Generate and persist a synthetic world under ``out_dir``."""
    if n_groups % 2 != 0:
        raise ValueError("n_groups must be even (groups are paired into twins)")
    rng = np.random.default_rng(seed)
    taken: set[str] = set(_FILLERS)

    # Twin groups share their lead theme word: it retrieves both groups but
    # cannot tell them apart, so only the mention or entity disambiguates.
    # The remaining theme words are group-private.
    shared_leads = _make_words(rng, n_groups // 2, 2, taken)
    themes = [
        [shared_leads[g // 2]] + _make_words(rng, 2, 2, taken)
        for g in range(n_groups)
    ]
    noise = _make_words(rng, 40, 2, taken)
    n_entities = n_groups * group_size
    # Alternating common (merged) and rare (fragmented) mentions per group.
    common_mentions = _make_words(rng, (n_entities + 1) // 2, 2, taken)
    rare_mentions = _make_words(rng, n_entities // 2, 4, taken)

    entities: list[str] = []
    groups: dict[str, int] = {}
    split_entities: set[str] = set()
    common_iter, rare_iter = iter(common_mentions), iter(rare_mentions)
    for g in range(n_groups):
        for j in range(group_size):
            if j % 2 == 0:
                mention = next(common_iter)
            else:
                mention = next(rare_iter)
                split_entities.add(mention)
            entities.append(mention)
            groups[mention] = g

    def pick(pool):
        return pool[rng.integers(len(pool))]

    docs: dict[str, Document] = {}
    doc_annotations: list[Annotation] = []
    entity_doc: dict[str, str] = {}
    for i, mention in enumerate(entities):
        t1, t2, t3 = themes[groups[mention]]
        doc_id = f"d{i:03d}"
        if mention in split_entities:
            text = (
                f"{mention} is a {t1} {t2} of the {t3} region . "
                f"{pick(noise)} {pick(noise)} {t2} place near {pick(noise)}"
            )
        else:
            # Repeats make the vocabulary learner merge the mention.
            text = (
                f"{mention} is a {t1} {t2} of the {t3} region . "
                f"{mention} lies near {pick(noise)} {pick(noise)} . {mention} is {t2}"
            )
        docs[doc_id] = Document(doc_id, text)
        entity_doc[mention] = doc_id
        doc_annotations.append(Annotation(doc_id, 0, len(mention), mention, mention))

    # Distractors repeat one group's lead theme word more densely than the
    # group's own abstracts do, so first-stage retrieval prefers them.
    for i in range(n_distractors):
        doc_id = f"x{i:03d}"
        ta = themes[rng.integers(n_groups)][0]
        tb = pick(themes[rng.integers(n_groups)])
        words = [
            pick(noise), pick(noise), "is", "a", ta, ta, "region", "of",
            pick(noise), ".", ta, tb, pick(noise), "place",
        ]
        docs[doc_id] = Document(doc_id, " ".join(words))

    def twin_group(g: int) -> int:
        return g + 1 if g % 2 == 0 else g - 1

    queries: dict[str, Query] = {}
    query_annotations: list[Annotation] = []
    qrels: list[Qrel] = []
    query_ids: list[str] = []
    distractor_ids = sorted(d for d in docs if d.startswith("x"))
    for i, mention in enumerate(entities):
        prefix = _QUERY_ID_PREFIXES[i % len(_QUERY_ID_PREFIXES)]
        qid = f"{prefix}-{i}"
        g = groups[mention]
        text = f"{mention} {themes[g][0]} region"
        queries[qid] = Query(qid, text, query_type_of(qid))
        query_ids.append(qid)
        query_annotations.append(Annotation(qid, 0, len(mention), mention, mention))

        qrels.append(Qrel(qid, entity_doc[mention], 2))
        siblings = [e for e in entities if groups[e] == g and e != mention]
        for sib in siblings:
            qrels.append(Qrel(qid, entity_doc[sib], 1))
        # Judged negatives: twin-group abstracts (theme-identical), plus
        # distractors and unrelated abstracts.
        twins = [entity_doc[e] for e in entities if groups[e] == twin_group(g)]
        others = [entity_doc[e] for e in entities
                  if groups[e] not in (g, twin_group(g))]
        n_dist = max(1, negatives_per_query - len(twins) - 2)
        judged_neg = (
            twins
            + [str(d) for d in rng.choice(distractor_ids, size=n_dist, replace=False)]
            + [str(d) for d in rng.choice(others, size=2, replace=False)]
        )
        for doc_id in judged_neg:
            qrels.append(Qrel(qid, doc_id, 0))

    folds = []
    for f in range(5):
        test = frozenset(query_ids[f::5])
        train = frozenset(q for q in query_ids if q not in test)
        folds.append(FoldSpec(f, train, test))

    collection = Collection(docs, queries, qrels, query_annotations + doc_annotations, folds)

    general_queries: dict[str, Query] = {}
    general_annotations: list[Annotation] = []
    triples: list[tuple[str, str, str]] = []
    for i, mention in enumerate(entities):
        g = groups[mention]
        siblings = [e for e in entities if groups[e] == g and e != mention]
        twins = [entity_doc[e] for e in entities if groups[e] == twin_group(g)]
        for j in range(general_queries_per_entity):
            qid = f"GEN-{i}-{j}"
            text = f"{mention} {themes[g][j % 3]}"
            general_queries[qid] = Query(qid, text, query_type_of(qid))
            general_annotations.append(Annotation(qid, 0, len(mention), mention, mention))
            triples.append((text, entity_doc[mention], pick(distractor_ids)))
            if siblings:
                triples.append((text, entity_doc[pick(siblings)], pick(twins)))

    general = Collection(
        docs, general_queries, [], general_annotations + doc_annotations, []
    )

    links = []
    for g in range(n_groups):
        members = [e for e in entities if groups[e] == g]
        for i, a in enumerate(members):
            for b in members[i + 1 :]:
                links.append((a, b))
    # Anchor contexts use the group-private theme words; the shared lead
    # would pull twin groups together in the joint space.
    anchors = [
        (mention, (mention, themes[groups[mention]][1], themes[groups[mention]][2]))
        for mention in entities
    ]
    graph = KnowledgeGraph(list(entities), links, anchors)

    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, f"{name}.tsv") for name in (
        "docs", "queries", "annotations", "folds", "gen_queries", "gen_annotations",
        "gen_folds", "triples",
    )}
    paths["qrels"] = os.path.join(out_dir, "qrels.txt")
    paths["gen_qrels"] = os.path.join(out_dir, "gen_qrels.txt")
    paths["graph"] = os.path.join(out_dir, "graph.txt")
    save_documents(docs, paths["docs"])
    save_queries(queries, paths["queries"])
    save_qrels(qrels, paths["qrels"])
    save_annotations(collection.annotations, paths["annotations"])
    save_folds(folds, paths["folds"])
    save_queries(general_queries, paths["gen_queries"])
    save_qrels([], paths["gen_qrels"])
    save_annotations(general.annotations, paths["gen_annotations"])
    with open(paths["gen_folds"], "w", encoding="utf-8"):
        pass
    save_graph(graph, paths["graph"])
    save_triples(triples, paths["triples"])
    return World(collection, general, graph, triples, groups, split_entities, paths)
