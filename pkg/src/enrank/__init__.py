"""Entity-enriched transformer re-ranking over a BM25 first stage."""

__version__ = "0.1.0"
