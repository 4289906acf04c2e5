"""Collection loading, validation, and persistence.

A collection bundles entity-abstract documents, queries, graded relevance
judgments, entity annotations, and cross-validation folds. All text is
NFC-normalized and lower-cased at load time so downstream tokenization is
deterministic; ids are kept verbatim.
"""

from __future__ import annotations

import enum
import unicodedata
from dataclasses import dataclass, field

from .errors import DanglingLink, DuplicateId, ParseError

__all__ = [
    "Document",
    "Query",
    "QueryType",
    "Qrel",
    "Annotation",
    "KnowledgeGraph",
    "FoldSpec",
    "Collection",
    "ValidationReport",
    "normalize_text",
    "load_collection",
    "load_documents",
    "load_queries",
    "load_qrels",
    "load_annotations",
    "load_folds",
    "load_graph",
    "validate",
    "save_documents",
    "save_queries",
    "save_qrels",
    "save_annotations",
    "save_folds",
    "save_graph",
]


class QueryType(enum.Enum):
    SEMSEARCH = "SemSearch"
    INEX_LD = "INEX-LD"
    LISTSEARCH = "ListSearch"
    QALD_2 = "QALD-2"
    OTHER = "Other"


def normalize_text(text: str) -> str:
    """NFC-normalize and lower-case free text."""
    return unicodedata.normalize("NFC", text).lower()


def query_type_of(query_id: str) -> QueryType:
    """Derive the query category from the id prefix.

    Ids follow the entity-retrieval benchmark convention of encoding the
    source benchmark in the id (e.g. ``SemSearch_ES-1``, ``INEX_LD-20``,
    ``QALD2_te-1``). Unrecognized prefixes map to ``Other``.
    """
    low = query_id.lower()
    if low.startswith(("semsearch_ls", "listsearch", "trec_entity", "inex_xer")):
        return QueryType.LISTSEARCH
    if low.startswith("semsearch"):
        return QueryType.SEMSEARCH
    if low.startswith(("inex_ld", "inex-ld")):
        return QueryType.INEX_LD
    if low.startswith(("qald", "qald-2", "qald2")):
        return QueryType.QALD_2
    return QueryType.OTHER


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str
    query_type: QueryType


@dataclass(frozen=True)
class Qrel:
    query_id: str
    doc_id: str
    grade: int


@dataclass(frozen=True)
class Annotation:
    """An entity mention inside a query or document text.

    ``char_start``/``char_end`` are 0-based offsets into the normalized
    owner text, end-exclusive.
    """

    owner_id: str
    char_start: int
    char_end: int
    mention: str
    entity_id: str

    def overlaps(self, other: "Annotation") -> bool:
        return (
            self.owner_id == other.owner_id
            and self.char_start < other.char_end
            and other.char_start < self.char_end
        )

    def contains(self, other: "Annotation") -> bool:
        return (
            self.owner_id == other.owner_id
            and self.char_start <= other.char_start
            and other.char_end <= self.char_end
        )


@dataclass(frozen=True)
class FoldSpec:
    fold_id: int
    train_query_ids: frozenset[str]
    test_query_ids: frozenset[str]


@dataclass
class KnowledgeGraph:
    """Entity set, directed links, and pre-extracted anchor contexts.

    Immutable by convention after :func:`load_graph`.
    """

    entities: list[str]
    links: list[tuple[str, str]]
    anchors: list[tuple[str, tuple[str, ...]]]
    _entity_set: frozenset[str] = field(init=False, repr=False)

    def __post_init__(self):
        self._entity_set = frozenset(self.entities)

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self._entity_set


@dataclass
class Collection:
    """All load-time artifacts, immutable by convention after load."""

    docs: dict[str, Document]
    queries: dict[str, Query]
    qrels: list[Qrel]
    annotations: list[Annotation]
    folds: list[FoldSpec]

    def annotations_for(self, owner_id: str) -> list[Annotation]:
        return [a for a in self.annotations if a.owner_id == owner_id]

    def qrels_for(self, query_id: str) -> dict[str, int]:
        return {q.doc_id: q.grade for q in self.qrels if q.query_id == query_id}


@dataclass
class ValidationReport:
    """Report-only consistency findings; empty lists mean a clean collection."""

    unknown_entity_annotations: list[Annotation]
    unknown_id_qrels: list[Qrel]
    queries_without_entities: list[str]
    overlapping_annotations: list[tuple[Annotation, Annotation]]

    @property
    def is_clean(self) -> bool:
        return not (
            self.unknown_entity_annotations
            or self.unknown_id_qrels
            or self.queries_without_entities
            or self.overlapping_annotations
        )


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            yield lineno, line


def load_documents(path) -> dict[str, Document]:
    docs: dict[str, Document] = {}
    for lineno, line in _read_lines(path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(f"expected 'id<TAB>text', got {line!r}", line=lineno)
        doc_id, text = parts
        if doc_id in docs:
            raise DuplicateId(f"document id repeated: {doc_id}")
        text = normalize_text(text)
        if not text.strip():
            raise ParseError(f"empty text for document {doc_id}", line=lineno)
        docs[doc_id] = Document(doc_id, text)
    return docs


def load_queries(path) -> dict[str, Query]:
    queries: dict[str, Query] = {}
    for lineno, line in _read_lines(path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(f"expected 'id<TAB>text', got {line!r}", line=lineno)
        query_id, text = parts
        if query_id in queries:
            raise DuplicateId(f"query id repeated: {query_id}")
        queries[query_id] = Query(query_id, normalize_text(text), query_type_of(query_id))
    return queries


def load_qrels(path) -> list[Qrel]:
    qrels: list[Qrel] = []
    seen: set[tuple[str, str]] = set()
    for lineno, line in _read_lines(path):
        parts = line.split()
        if len(parts) != 4:
            raise ParseError(f"expected 'query_id 0 doc_id grade', got {line!r}", line=lineno)
        query_id, _, doc_id, grade_str = parts
        try:
            grade = int(grade_str)
        except ValueError:
            raise ParseError(f"grade not an integer: {grade_str!r}", line=lineno) from None
        if grade not in (0, 1, 2):
            raise ParseError(f"grade out of range {{0,1,2}}: {grade}", line=lineno)
        key = (query_id, doc_id)
        if key in seen:
            raise DuplicateId(f"qrel repeated for {key}")
        seen.add(key)
        qrels.append(Qrel(query_id, doc_id, grade))
    return qrels


def load_annotations(path, owner_texts: dict[str, str]) -> list[Annotation]:
    """Load annotations and check each span against its owner text.

    ``owner_texts`` maps every valid owner id (query or document) to its
    normalized text.
    """
    annotations: list[Annotation] = []
    for lineno, line in _read_lines(path):
        parts = line.split("\t")
        if len(parts) != 5:
            raise ParseError(
                f"expected 'owner<TAB>start<TAB>end<TAB>mention<TAB>entity', got {line!r}",
                line=lineno,
            )
        owner_id, start_str, end_str, mention, entity_id = parts
        try:
            start, end = int(start_str), int(end_str)
        except ValueError:
            raise ParseError(f"offsets not integers: {start_str!r}, {end_str!r}", line=lineno) from None
        if owner_id not in owner_texts:
            raise ParseError(f"unknown annotation owner: {owner_id}", line=lineno)
        text = owner_texts[owner_id]
        if not (0 <= start < end <= len(text)):
            raise ParseError(
                f"span [{start},{end}) out of bounds for owner {owner_id} (len {len(text)})",
                line=lineno,
            )
        mention = normalize_text(mention)
        if text[start:end].casefold() != mention.casefold():
            raise ParseError(
                f"mention {mention!r} does not match text span {text[start:end]!r}",
                line=lineno,
            )
        annotations.append(Annotation(owner_id, start, end, mention, entity_id))
    return annotations


def load_folds(path, query_ids: set[str]) -> list[FoldSpec]:
    """Load fold assignments and check the test sets partition ``query_ids``."""
    train: dict[int, set[str]] = {}
    test: dict[int, set[str]] = {}
    for lineno, line in _read_lines(path):
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"expected 'fold<TAB>query<TAB>train|test', got {line!r}", line=lineno)
        fold_str, query_id, role = parts
        try:
            fold_id = int(fold_str)
        except ValueError:
            raise ParseError(f"fold id not an integer: {fold_str!r}", line=lineno) from None
        if not 0 <= fold_id <= 4:
            raise ParseError(f"fold id out of range 0..4: {fold_id}", line=lineno)
        if role not in ("train", "test"):
            raise ParseError(f"role must be train or test, got {role!r}", line=lineno)
        if query_id not in query_ids:
            raise ParseError(f"fold references unknown query: {query_id}", line=lineno)
        bucket = train if role == "train" else test
        members = bucket.setdefault(fold_id, set())
        if query_id in members:
            raise DuplicateId(f"query {query_id} listed twice in fold {fold_id} {role}")
        members.add(query_id)

    folds = []
    covered: set[str] = set()
    for fold_id in sorted(set(train) | set(test)):
        tr = train.get(fold_id, set())
        te = test.get(fold_id, set())
        if tr & te:
            raise ParseError(f"fold {fold_id} has queries in both train and test: {sorted(tr & te)}")
        if covered & te:
            raise ParseError(f"fold test sets overlap on: {sorted(covered & te)}")
        covered |= te
        folds.append(FoldSpec(fold_id, frozenset(tr), frozenset(te)))
    if folds and covered != query_ids:
        missing = sorted(query_ids - covered)
        raise ParseError(f"fold test sets do not cover all queries; missing: {missing}")
    return folds


def load_collection(doc_path, query_path, qrel_path, annotation_path, fold_path) -> Collection:
    """Load and cross-check the full collection from its five files."""
    docs = load_documents(doc_path)
    queries = load_queries(query_path)
    qrels = load_qrels(qrel_path)
    owner_texts = {d.doc_id: d.text for d in docs.values()}
    owner_texts.update({q.query_id: q.text for q in queries.values()})
    annotations = load_annotations(annotation_path, owner_texts)
    folds = load_folds(fold_path, set(queries))
    return Collection(docs, queries, qrels, annotations, folds)


def load_graph(path) -> KnowledgeGraph:
    """Load the sectioned graph file, rejecting dangling link endpoints."""
    entities: list[str] = []
    entity_set: set[str] = set()
    links: list[tuple[str, str]] = []
    link_set: set[tuple[str, str]] = set()
    anchors: list[tuple[str, tuple[str, ...]]] = []
    section = None
    for lineno, line in _read_lines(path):
        if line.startswith("#"):
            section = line.strip()
            if section not in ("#entities", "#links", "#anchors"):
                raise ParseError(f"unknown section {section!r}", line=lineno)
            continue
        if section == "#entities":
            entity_id = line.strip()
            if entity_id in entity_set:
                raise DuplicateId(f"entity repeated: {entity_id}")
            entity_set.add(entity_id)
            entities.append(entity_id)
        elif section == "#links":
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(f"expected 'src<TAB>dst', got {line!r}", line=lineno)
            src, dst = parts
            for endpoint in (src, dst):
                if endpoint not in entity_set:
                    raise DanglingLink(endpoint)
            if (src, dst) in link_set:
                raise DuplicateId(f"link repeated: {(src, dst)}")
            link_set.add((src, dst))
            links.append((src, dst))
        elif section == "#anchors":
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(f"expected 'entity<TAB>words', got {line!r}", line=lineno)
            entity_id, words = parts
            if entity_id not in entity_set:
                raise DanglingLink(entity_id)
            anchors.append((entity_id, tuple(normalize_text(words).split())))
        else:
            raise ParseError(f"content before any section header: {line!r}", line=lineno)
    return KnowledgeGraph(entities, links, anchors)


def validate(collection: Collection, graph: KnowledgeGraph) -> ValidationReport:
    """Report-only consistency check between a collection and a graph."""
    unknown_entity = [a for a in collection.annotations if a.entity_id not in graph]

    unknown_qrels = [
        q
        for q in collection.qrels
        if q.query_id not in collection.queries or q.doc_id not in collection.docs
    ]

    annotated_queries = {a.owner_id for a in collection.annotations}
    without_entities = [qid for qid in collection.queries if qid not in annotated_queries]

    by_owner: dict[str, list[Annotation]] = {}
    for a in collection.annotations:
        by_owner.setdefault(a.owner_id, []).append(a)
    overlapping = []
    for anns in by_owner.values():
        for i, a in enumerate(anns):
            for b in anns[i + 1 :]:
                if a.overlaps(b):
                    overlapping.append((a, b))

    return ValidationReport(unknown_entity, unknown_qrels, without_entities, overlapping)


def save_documents(docs: dict[str, Document], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs.values():
            fh.write(f"{doc.doc_id}\t{doc.text}\n")


def save_queries(queries: dict[str, Query], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for query in queries.values():
            fh.write(f"{query.query_id}\t{query.text}\n")


def save_qrels(qrels: list[Qrel], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in qrels:
            fh.write(f"{q.query_id} 0 {q.doc_id} {q.grade}\n")


def save_annotations(annotations: list[Annotation], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a in annotations:
            fh.write(f"{a.owner_id}\t{a.char_start}\t{a.char_end}\t{a.mention}\t{a.entity_id}\n")


def save_folds(folds: list[FoldSpec], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for fold in folds:
            for qid in sorted(fold.train_query_ids):
                fh.write(f"{fold.fold_id}\t{qid}\ttrain\n")
            for qid in sorted(fold.test_query_ids):
                fh.write(f"{fold.fold_id}\t{qid}\ttest\n")


def save_graph(graph: KnowledgeGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("#entities\n")
        for entity_id in graph.entities:
            fh.write(f"{entity_id}\n")
        fh.write("#links\n")
        for src, dst in graph.links:
            fh.write(f"{src}\t{dst}\n")
        fh.write("#anchors\n")
        for entity_id, words in graph.anchors:
            fh.write(f"{entity_id}\t{' '.join(words)}\n")
