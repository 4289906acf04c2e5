"""Word-piece tokenization with entity-token extension.

The vocabulary is learned from the working corpus with greedy
highest-frequency pair merges, seeded with every character form observed in
the corpus so tokenization is total. Continuation pieces carry a ``##``
prefix and never begin a word. Entity tokens are synthetic vocabulary items
``ENTITY/<entity_id>`` appended after the regular pieces.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field

from .corpus import Annotation, normalize_text
from .errors import OverlapUnresolved, ParseError, TargetTooSmall

PAD, UNK, CLS, SEP, SLASH = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "/"
SPECIALS = (PAD, UNK, CLS, SEP, SLASH)
ENTITY_PREFIX = "ENTITY/"


class TokenKind(enum.Enum):
    WORD_PIECE = "WordPiece"
    ENTITY = "Entity"
    SPECIAL = "Special"


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    id: int
    surface: str


class MentionCategory(enum.IntEnum):
    """How the tokenizer fragments an entity mention.

    Integer values order the categories by severity, so the most
    complicated mention of a query is simply the ``max``.
    """

    NO_ENTITY = 0
    ONE_TOKEN = 1
    MULTI_NO_CONT = 2
    ONE_CONT = 3
    MULTI_CONT = 4

    @property
    def label(self) -> str:
        return _CATEGORY_LABELS[self]


_CATEGORY_LABELS = {
    MentionCategory.NO_ENTITY: "NoEntity",
    MentionCategory.ONE_TOKEN: "OneToken",
    MentionCategory.MULTI_NO_CONT: "MultiNoCont",
    MentionCategory.ONE_CONT: "OneCont",
    MentionCategory.MULTI_CONT: "MultiCont",
}


def split_words(text: str) -> list[str]:
    """Split on whitespace; every punctuation mark becomes its own word."""
    words = []
    current = []
    for ch in text:
        if ch.isspace():
            if current:
                words.append("".join(current))
                current = []
        elif not ch.isalnum():
            if current:
                words.append("".join(current))
                current = []
            words.append(ch)
        else:
            current.append(ch)
    if current:
        words.append("".join(current))
    return words


def _split_words_with_spans(text: str) -> list[tuple[str, int, int]]:
    """Like :func:`split_words` but with (word, start, end) char offsets."""
    words = []
    start = None
    for i, ch in enumerate(text):
        if ch.isspace():
            if start is not None:
                words.append((text[start:i], start, i))
                start = None
        elif not ch.isalnum():
            if start is not None:
                words.append((text[start:i], start, i))
                start = None
            words.append((ch, i, i + 1))
        else:
            if start is None:
                start = i
    if start is not None:
        words.append((text[start:], start, len(text)))
    return words


class Vocabulary:
    """Ordered word pieces plus entity tokens, with fixed special ids.

    Id layout: specials first (``[PAD]``, ``[UNK]``, ``[CLS]``, ``[SEP]``,
    ``/``), then pieces, then entity tokens. Immutable after construction.
    """

    def __init__(self, pieces: list[str], entity_tokens: list[str] = ()):
        seen = set(SPECIALS)
        for piece in pieces:
            if piece in seen:
                raise ParseError(f"duplicate or reserved piece: {piece!r}")
            seen.add(piece)
        self.pieces = list(pieces)
        self.entity_tokens: list[str] = []
        self._piece_ids = {p: i for i, p in enumerate(SPECIALS)}
        for piece in self.pieces:
            self._piece_ids[piece] = len(self._piece_ids)
        self._entity_ids: dict[str, int] = {}
        for token in entity_tokens:
            self._add_entity(token)

    def _add_entity(self, token: str) -> None:
        if not token.startswith(ENTITY_PREFIX):
            raise ParseError(f"entity token must start with {ENTITY_PREFIX!r}: {token!r}")
        if token in self._entity_ids or token in self._piece_ids:
            raise ParseError(f"duplicate entity token: {token!r}")
        self._entity_ids[token] = self.n_native + len(self.entity_tokens)
        self.entity_tokens.append(token)

    @property
    def n_native(self) -> int:
        """Number of non-entity tokens (specials + pieces)."""
        return len(SPECIALS) + len(self.pieces)

    def __len__(self) -> int:
        return self.n_native + len(self.entity_tokens)

    def lookup(self, piece: str) -> int | None:
        return self._piece_ids.get(piece)

    def special_token(self, name: str) -> Token:
        return Token(TokenKind.SPECIAL, self._piece_ids[name], name)

    def piece_token(self, piece: str) -> Token:
        pid = self._piece_ids[piece]
        kind = TokenKind.SPECIAL if piece in SPECIALS else TokenKind.WORD_PIECE
        return Token(kind, pid, piece)

    def entity_token(self, entity_id: str) -> Token | None:
        token = ENTITY_PREFIX + entity_id
        tid = self._entity_ids.get(token)
        if tid is None:
            return None
        return Token(TokenKind.ENTITY, tid, token)

    def entity_id_of(self, token_id: int) -> str:
        return self.entity_tokens[token_id - self.n_native][len(ENTITY_PREFIX) :]

    def surface_of(self, token_id: int) -> str:
        if token_id < len(SPECIALS):
            return SPECIALS[token_id]
        if token_id < self.n_native:
            return self.pieces[token_id - len(SPECIALS)]
        return self.entity_tokens[token_id - self.n_native]

    def with_entities(self, entity_ids) -> "Vocabulary":
        """New vocabulary with the given entity ids registered, in order."""
        return Vocabulary(self.pieces, [ENTITY_PREFIX + e for e in entity_ids])

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for piece in SPECIALS:
                fh.write(piece + "\n")
            for piece in self.pieces:
                fh.write(piece + "\n")
            fh.write("#entities\n")
            for token in self.entity_tokens:
                fh.write(token + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        pieces: list[str] = []
        entities: list[str] = []
        in_entities = False
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.rstrip("\n")
                if not line:
                    continue
                if line == "#entities":
                    in_entities = True
                    continue
                if in_entities:
                    entities.append(line)
                    continue
                if lineno <= len(SPECIALS):
                    if line != SPECIALS[lineno - 1]:
                        raise ParseError(
                            f"expected special {SPECIALS[lineno - 1]!r}, got {line!r}",
                            line=lineno,
                        )
                    continue
                pieces.append(line)
        return cls(pieces, entities)


def build_vocab(corpus, target_size: int, min_pair_freq: int = 2) -> Vocabulary:
    """Learn a word-piece vocabulary by greedy pair merging.

    ``corpus`` is an iterable of texts. Seed pieces are all character forms
    observed in the corpus (bare at word start, ``##``-prefixed inside a
    word), which guarantees tokenization totality. Merging stops at
    ``target_size`` total pieces (specials included) or when no adjacent
    pair occurs at least ``min_pair_freq`` times.
    """
    word_freq: Counter[str] = Counter()
    for text in corpus:
        for word in split_words(normalize_text(text)):
            word_freq[word] += 1

    words = {
        word: [word[0]] + ["##" + ch for ch in word[1:]]
        for word in word_freq
    }
    seed: dict[str, None] = {}
    for symbols in words.values():
        for symbol in symbols:
            if symbol not in SPECIALS:
                seed[symbol] = None

    needed = len(SPECIALS) + len(seed)
    if target_size < needed:
        raise TargetTooSmall(
            f"target_size {target_size} below the {needed} pieces required for totality"
        )

    pieces = dict(seed)
    while len(SPECIALS) + len(pieces) < target_size:
        pair_freq: Counter[tuple[str, str]] = Counter()
        for word, symbols in words.items():
            freq = word_freq[word]
            for a, b in zip(symbols, symbols[1:]):
                pair_freq[(a, b)] += freq
        if not pair_freq:
            break
        # Deterministic pick: highest frequency, ties by lexicographic pair.
        best, best_freq = min(
            pair_freq.items(), key=lambda item: (-item[1], item[0])
        )
        if best_freq < min_pair_freq:
            break
        merged = best[0] + best[1][2:]
        if merged in SPECIALS:
            break
        pieces[merged] = None
        for word, symbols in words.items():
            out = []
            i = 0
            while i < len(symbols):
                if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == best:
                    out.append(merged)
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            words[word] = out

    return Vocabulary(list(pieces))


def _wordpiece_word(word: str, vocab: Vocabulary) -> list[Token]:
    tokens = []
    i = 0
    while i < len(word):
        end = len(word)
        match = None
        while end > i:
            candidate = word[i:end]
            if i > 0:
                candidate = "##" + candidate
            if vocab.lookup(candidate) is not None:
                match = candidate
                break
            end -= 1
        if match is None:
            tokens.append(vocab.special_token(UNK))
            i += 1
        else:
            tokens.append(vocab.piece_token(match))
            i = end
    return tokens


def wordpiece_tokenize(text: str, vocab: Vocabulary) -> list[Token]:
    """Greedy longest-match-first tokenization; total over any input."""
    tokens = []
    for word in split_words(normalize_text(text)):
        tokens.extend(_wordpiece_word(word, vocab))
    return tokens


def resolve_annotations(annotations: list[Annotation]) -> list[Annotation]:
    """Reduce annotations to pairwise-disjoint spans.

    Containment keeps the outer (most complete) mention; identical spans
    keep the first in file order. Partial overlap is unresolvable.
    """
    kept: list[Annotation] = []
    for ann in annotations:
        replaced = False
        drop = False
        for i, other in enumerate(kept):
            if not ann.overlaps(other):
                continue
            if other.contains(ann):
                drop = True
                break
            if ann.contains(other):
                kept[i] = ann
                replaced = True
                break
            raise OverlapUnresolved(
                f"annotations [{other.char_start},{other.char_end}) and "
                f"[{ann.char_start},{ann.char_end}) on {ann.owner_id} partially overlap"
            )
        if not drop and not replaced:
            kept.append(ann)
    # Deduplicate in case a replacement collided with another copy.
    unique: list[Annotation] = []
    for ann in kept:
        if ann not in unique:
            unique.append(ann)
    return sorted(unique, key=lambda a: (a.char_start, a.char_end))


def annotate_tokens(
    text: str,
    annotations: list[Annotation],
    vocab: Vocabulary,
    known_entities=None,
) -> list[Token]:
    """Tokenize ``text`` and append ``/ ENTITY/<id>`` after each mention.

    ``known_entities``, when given, is the set of entity ids that have an
    embedding at apply time; annotations outside it are skipped, as are
    entities never registered in the vocabulary.
    """
    text = normalize_text(text)
    resolved = resolve_annotations(annotations)

    words = _split_words_with_spans(text)
    inserts: dict[int, list[Token]] = {}
    for ann in resolved:
        if known_entities is not None and ann.entity_id not in known_entities:
            continue
        entity = vocab.entity_token(ann.entity_id)
        if entity is None:
            continue
        last_word = None
        for idx, (_, start, end) in enumerate(words):
            if start < ann.char_end and ann.char_start < end:
                last_word = idx
        if last_word is None:
            continue
        inserts.setdefault(last_word, []).extend([vocab.special_token(SLASH), entity])

    tokens: list[Token] = []
    for idx, (word, _, _) in enumerate(words):
        tokens.extend(_wordpiece_word(word, vocab))
        tokens.extend(inserts.get(idx, ()))
    return tokens


def categorize_mention(mention: str, vocab: Vocabulary) -> MentionCategory:
    """Classify a mention by how the tokenizer fragments it."""
    pieces = wordpiece_tokenize(mention, vocab)
    continuations = sum(1 for t in pieces if t.surface.startswith("##"))
    if len(pieces) == 1:
        return MentionCategory.ONE_TOKEN
    if continuations == 0:
        return MentionCategory.MULTI_NO_CONT
    if continuations == 1:
        return MentionCategory.ONE_CONT
    return MentionCategory.MULTI_CONT


def categorize_query(annotations: list[Annotation], vocab: Vocabulary) -> MentionCategory:
    """Most severe mention category over a query's annotations."""
    if not annotations:
        return MentionCategory.NO_ENTITY
    return max(categorize_mention(a.mention, vocab) for a in annotations)


@dataclass(frozen=True)
class InputLimits:
    max_total: int = 512
    max_query: int = 64


@dataclass
class ModelInput:
    """Encoder-ready sequence: ``[CLS] query [SEP] document [SEP]``.

    ``segment_ids`` are 0 through the first ``[SEP]`` and 1 after.
    """

    token_ids: list[int]
    segment_ids: list[int]
    tokens: list[Token] = field(repr=False, default_factory=list)

    def __len__(self) -> int:
        return len(self.token_ids)


def build_input(
    query_tokens: list[Token],
    doc_tokens: list[Token],
    vocab: Vocabulary,
    limits: InputLimits = InputLimits(),
) -> ModelInput:
    """Assemble and truncate the query/document pair.

    The query is cut to ``max_query`` tokens first, then the document tail
    is dropped so the whole sequence fits ``max_total``. Entity tokens
    consume budget like any other token.
    """
    query = query_tokens[: limits.max_query]
    doc_budget = max(0, limits.max_total - len(query) - 3)
    doc = doc_tokens[:doc_budget]

    cls_tok = vocab.special_token(CLS)
    sep_tok = vocab.special_token(SEP)
    tokens = [cls_tok, *query, sep_tok, *doc, sep_tok]
    boundary = len(query) + 2
    segments = [0] * boundary + [1] * (len(tokens) - boundary)
    return ModelInput([t.id for t in tokens], segments, tokens)
