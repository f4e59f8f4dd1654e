"""Hierarchical RL engine for (aspect, opinion, sentiment) triplet extraction."""

__version__ = "0.1.0"

from .core import (
    BioTag,
    EpisodeTrace,
    OverlapClass,
    Sentence,
    SentimentLabel,
    Span,
    SubtaskTrace,
    Triplet,
    bio_labels_for,
    decode_span,
    triplet_overlap_class,
)

__all__ = [
    "BioTag",
    "EpisodeTrace",
    "OverlapClass",
    "Sentence",
    "SentimentLabel",
    "Span",
    "SubtaskTrace",
    "Triplet",
    "bio_labels_for",
    "decode_span",
    "triplet_overlap_class",
    "__version__",
]
