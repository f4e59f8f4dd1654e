"""Shared domain vocabulary: sentiment labels, BIO tags, spans, triplets, traces.

Every type here is an immutable value; instances can be shared freely across
threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Optional, Sequence


class SentimentLabel(Enum):
    """High-level option labels; NONE marks positions with no sentiment."""

    NONE = "none"
    POSITIVE = "positive"
    NEGATIVE = "negative"
    NEUTRAL = "neutral"

    def __str__(self) -> str:
        return self.value


# Valid triplet polarities, in option-index order (NONE is option index 0).
POLARITIES = (SentimentLabel.POSITIVE, SentimentLabel.NEGATIVE, SentimentLabel.NEUTRAL)

OPTION_ORDER = (SentimentLabel.NONE,) + POLARITIES
OPTION_INDEX = {label: i for i, label in enumerate(OPTION_ORDER)}


class BioTag(Enum):
    B = "B"
    I = "I"
    O = "O"

    def __str__(self) -> str:
        return self.value


TAG_ORDER = (BioTag.B, BioTag.I, BioTag.O)
TAG_INDEX = {tag: i for i, tag in enumerate(TAG_ORDER)}


class OverlapClass(Enum):
    NO_OVERLAP = "no_overlap"
    OVERLAP = "overlap"


@dataclass(frozen=True, order=True)
class Span:
    """Inclusive token-index range [start, end]."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if not (0 <= self.start <= self.end):
            raise ValueError(f"invalid span [{self.start}, {self.end}]")

    def __len__(self) -> int:
        return self.end - self.start + 1

    def within(self, length: int) -> bool:
        return self.end < length

    def intersects(self, other: "Span") -> bool:
        return self.start <= other.end and other.start <= self.end

    def positions(self) -> range:
        return range(self.start, self.end + 1)


@dataclass(frozen=True)
class Triplet:
    """An (aspect span, opinion span, polarity) extraction target."""

    aspect: Span
    opinion: Span
    sentiment: SentimentLabel

    def __post_init__(self) -> None:
        if self.sentiment not in POLARITIES:
            raise ValueError(f"triplet sentiment must be a polarity, got {self.sentiment}")


@dataclass(frozen=True)
class Sentence:
    """A tokenized sentence with POS-tag ids and (possibly empty) gold triplets."""

    id: str
    tokens: tuple[str, ...]
    pos_tags: tuple[int, ...]
    gold: tuple[Triplet, ...] = ()

    def __init__(
        self,
        id: str,
        tokens: Sequence[str],
        pos_tags: Sequence[int],
        gold: Sequence[Triplet] = (),
    ) -> None:
        object.__setattr__(self, "id", id)
        object.__setattr__(self, "tokens", tuple(tokens))
        object.__setattr__(self, "pos_tags", tuple(pos_tags))
        object.__setattr__(self, "gold", tuple(gold))
        if len(self.tokens) < 1:
            raise ValueError(f"sentence {id!r} has no tokens")
        if len(self.pos_tags) != len(self.tokens):
            raise ValueError(
                f"sentence {id!r}: {len(self.pos_tags)} pos tags for {len(self.tokens)} tokens"
            )
        for t in self.gold:
            if not (t.aspect.within(len(self.tokens)) and t.opinion.within(len(self.tokens))):
                raise ValueError(f"sentence {id!r}: gold span outside [0, {len(self.tokens)})")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class SubtaskTrace:
    """One low-level tagging pass: a full B/I/O sequence for one span kind."""

    kind: str  # "opinion" | "aspect"
    anchor: int
    sentiment: SentimentLabel
    actions: tuple[tuple[BioTag, float], ...]  # (tag, log-prob) per token
    rewards: tuple[float, ...]
    final_reward: float
    decoded: Optional[Span]


@dataclass(frozen=True)
class EpisodeTrace:
    """A complete hierarchical rollout over one sentence."""

    options: tuple[tuple[int, SentimentLabel, float], ...]  # (position, option, log-prob)
    subtasks: tuple[SubtaskTrace, ...]
    high_rewards: tuple[float, ...]
    high_final_reward: float
    predicted: tuple[Triplet, ...]

    def total_reward(self) -> float:
        total = sum(self.high_rewards) + self.high_final_reward
        for sub in self.subtasks:
            total += sum(sub.rewards) + sub.final_reward
        return total


def decode_span(tags: Sequence[BioTag]) -> Optional[Span]:
    """Decode a B/I/O sequence into its single span, or None if malformed.

    A sequence is well-formed iff it contains exactly one B and every I
    directly continues a B run, i.e. it matches O* B I* O*.
    """
    if not tags:
        raise ValueError("decode_span: empty tag sequence")
    start = None
    end = None
    for i, tag in enumerate(tags):
        if tag is BioTag.B:
            if start is not None:
                return None  # second B
            start = end = i
        elif tag is BioTag.I:
            if end != i - 1:
                return None  # I without a live run to continue
            end = i
    if start is None:
        return None
    return Span(start, end)


def bio_labels_for(span: Span, length: int) -> list[BioTag]:
    """Gold B/I/O labels for a span: B on its first token, I on the rest."""
    if not span.within(length):
        raise ValueError(f"span [{span.start}, {span.end}] outside sequence of length {length}")
    tags = [BioTag.O] * length
    tags[span.start] = BioTag.B
    for i in range(span.start + 1, span.end + 1):
        tags[i] = BioTag.I
    return tags


def _default_overlap_pair(a: Triplet, b: Triplet) -> bool:
    return (
        a.aspect == b.aspect
        or a.opinion == b.opinion
        or a.aspect.intersects(b.opinion)
        or b.aspect.intersects(a.opinion)
    )


def triplet_overlap_class(
    gold: Iterable[Triplet],
    pair_predicate: Callable[[Triplet, Triplet], bool] = _default_overlap_pair,
) -> OverlapClass:
    """Classify a gold set: OVERLAP iff some pair of triplets shares or crosses spans.

    The default pair rule: identical aspect spans, identical opinion spans, or
    the aspect span of one intersecting the opinion span of the other.
    """
    triplets = list(gold)
    for i in range(len(triplets)):
        for j in range(i + 1, len(triplets)):
            if pair_predicate(triplets[i], triplets[j]):
                return OverlapClass.OVERLAP
    return OverlapClass.NO_OVERLAP
