"""Python access to the zengram lexicon, matcher and model inspection tools."""

from ._core import (
    AnalysisError,
    Checkpoint,
    CheckpointError,
    Lexicon,
    LexiconError,
    Matcher,
    association_weights,
    build_lexicon,
    neighbors,
    pmi,
    run_cli,
    segment,
)

__all__ = [
    "AnalysisError",
    "Checkpoint",
    "CheckpointError",
    "Lexicon",
    "LexiconError",
    "Matcher",
    "association_weights",
    "build_lexicon",
    "neighbors",
    "pmi",
    "run_cli",
    "segment",
]
