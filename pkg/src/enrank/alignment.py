"""Linear map from the joint embedding space into the encoder token space.

The map W minimizes the summed squared distance between W times the joint
vector and the native encoder vector over the shared word vocabulary, with
optional ridge regularization:

    min_W  sum_x ||W a_x - b_x||^2  +  ridge * ||W||_F^2

solved in closed form through the normal equations. Entity tokens are then
embedded as W times their joint vector, while native word pieces keep their
encoder rows untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import JointEmbeddingTable
from .errors import EmptyIntersection, MissingEmbedding, ParseError, SingularDesign
from .tokenizer import Token, TokenKind


@dataclass
class AlignmentMatrix:
    """Fitted map, encoder-space rows by joint-space columns."""

    matrix: np.ndarray
    ridge: float
    fitted_on: int

    def save(self, path) -> None:
        rows, cols = self.matrix.shape
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{rows}\t{cols}\n")
            for row in self.matrix:
                fh.write(" ".join(repr(v) for v in row) + "\n")

    @classmethod
    def load(cls, path) -> "AlignmentMatrix":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n").split("\t")
            if len(header) != 2:
                raise ParseError("expected 'rows<TAB>cols' header", line=1)
            rows, cols = (int(x) for x in header)
            values = [float(v) for v in fh.read().split()]
        if len(values) != rows * cols:
            raise ParseError(f"expected {rows * cols} values, found {len(values)}")
        matrix = np.array(values).reshape(rows, cols)
        return cls(matrix, ridge=0.0, fitted_on=0)


def shared_pairs(
    table: JointEmbeddingTable, token_vectors: dict[str, np.ndarray]
) -> list[tuple[np.ndarray, np.ndarray]]:
    """(joint vector, encoder vector) for every shared word surface.

    Surfaces are matched exactly after case folding; each shared word
    contributes one pair regardless of corpus frequency. Sorted by surface
    so the fit never depends on input ordering.
    """
    folded_tokens = {}
    for surface, vec in token_vectors.items():
        folded_tokens.setdefault(surface.casefold(), vec)
    pairs = {}
    for word in table.word_keys:
        folded = word.casefold()
        if folded in folded_tokens and folded not in pairs:
            pairs[folded] = (table.word_vector(word), folded_tokens[folded])
    return [pairs[key] for key in sorted(pairs)]


def fit_alignment(
    table: JointEmbeddingTable,
    token_vectors: dict[str, np.ndarray],
    ridge: float | None = None,
) -> AlignmentMatrix:
    """Fit W over the shared vocabulary via the normal equations.

    ``ridge=None`` selects the default ``1e-6 * n_shared``, which keeps
    near-singular small intersections solvable; pass ``0.0`` for the exact
    unregularized minimizer (raises ``SingularDesign`` when the Gram matrix
    is rank-deficient).
    """
    pairs = shared_pairs(table, token_vectors)
    if not pairs:
        raise EmptyIntersection("no shared words between table and encoder vocabulary")

    joint = np.stack([a for a, _ in pairs], axis=1)
    native = np.stack([b for _, b in pairs], axis=1)
    n_shared = len(pairs)
    if ridge is None:
        ridge = 1e-6 * n_shared

    d_joint = joint.shape[0]
    gram = joint @ joint.T + ridge * np.eye(d_joint)
    if ridge == 0.0 and np.linalg.matrix_rank(gram) < d_joint:
        raise SingularDesign(
            f"Gram matrix rank-deficient for {n_shared} shared words in {d_joint}-D"
        )
    matrix = np.linalg.solve(gram, joint @ native.T).T
    return AlignmentMatrix(matrix, ridge=float(ridge), fitted_on=n_shared)


def map_token(
    token: Token,
    table: JointEmbeddingTable,
    alignment: AlignmentMatrix,
    token_table: np.ndarray,
) -> np.ndarray:
    """Embed a token into the encoder input space.

    Entity tokens go through the fitted map; everything else is the native
    encoder row, untouched.
    """
    if token.kind is TokenKind.ENTITY:
        entity_id = token.surface.split("/", 1)[1]
        if not table.has_entity(entity_id):
            raise MissingEmbedding(entity_id)
        return alignment.matrix @ table.entity_vector(entity_id)
    return token_table[token.id]


def residual(alignment: AlignmentMatrix, pairs) -> float:
    """Objective value sum ||W a - b||^2 over (a, b) pairs."""
    if len(pairs) == 0:
        raise ValueError("pairs must be non-empty")
    total = 0.0
    for a, b in pairs:
        diff = alignment.matrix @ a - b
        total += float(diff @ diff)
    return total
