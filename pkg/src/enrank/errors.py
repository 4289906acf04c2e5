"""Exception types raised across the package."""


class EnrankError(Exception):
    """Base class for all package-specific errors."""


class ParseError(EnrankError):
    """A data file row is malformed. Carries the 1-based line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateId(EnrankError):
    """A key that must be unique appeared more than once."""


class DanglingLink(EnrankError):
    """A graph link or anchor references an undeclared entity."""

    def __init__(self, entity_id):
        self.entity_id = entity_id
        super().__init__(f"undeclared entity: {entity_id}")


class OverlapUnresolved(EnrankError):
    """Two annotations overlap and neither contains the other."""


class TargetTooSmall(EnrankError):
    """Requested vocabulary size cannot hold the mandatory pieces."""


class EmptyCorpus(EnrankError):
    """Embedding training was given no usable text."""


class UnknownKey(EnrankError):
    """Lookup of a word or entity key that is not in the table."""


class EmptyIntersection(EnrankError):
    """No shared vocabulary between the two embedding spaces."""


class SingularDesign(EnrankError):
    """Unregularized least squares with a rank-deficient Gram matrix."""


class MissingEmbedding(EnrankError):
    """An entity token has no vector in the joint embedding table."""

    def __init__(self, entity_id):
        self.entity_id = entity_id
        super().__init__(f"no embedding for entity: {entity_id}")


class NonFiniteLoss(EnrankError):
    """Training produced a NaN or infinite loss."""


class UnknownDoc(EnrankError):
    """Scoring was asked for a document absent from the index."""


class MissingDocText(EnrankError):
    """Re-ranking hit a candidate whose text is not in the collection."""

    def __init__(self, doc_id):
        self.doc_id = doc_id
        super().__init__(f"no text for document: {doc_id}")


class LengthMismatch(EnrankError):
    """Paired score lists differ in length or are too short."""
