"""Corpus ingestion and generation.

Three external formats:
  (a) hash-separated review lines: "<tokens>####[([aspect idx], [opinion idx], 'POS')]"
  (b) canonical JSON-lines: {"id", "tokens", "pos", "triplets"}
  (c) POS sidecar: one line of space-separated tags per sentence

plus a deterministic synthetic-corpus generator for desk-scale training tests.
"""

from __future__ import annotations

import ast
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import POLARITIES, Sentence, SentimentLabel, Span, Triplet

UNIVERSAL_TAGS = (
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM",
    "PART", "PRON", "PROPN", "PUNCT", "SCONJ", "SYM", "VERB", "X",
)
TAG_TO_ID = {tag: i for i, tag in enumerate(UNIVERSAL_TAGS)}

POLARITY_CODES = {"POS": SentimentLabel.POSITIVE, "NEG": SentimentLabel.NEGATIVE, "NEU": SentimentLabel.NEUTRAL}
CODE_OF_POLARITY = {v: k for k, v in POLARITY_CODES.items()}


class ParseError(ValueError):
    """Malformed corpus content; the message carries the offending line number."""


# ---------------------------------------------------------------------------
# POS provisioning

_LEXICON = {
    "the": "DET", "a": "DET", "an": "DET", "this": "DET", "that": "DET",
    "these": "DET", "those": "DET", "some": "DET", "any": "DET", "no": "DET",
    "i": "PRON", "you": "PRON", "he": "PRON", "she": "PRON", "it": "PRON",
    "we": "PRON", "they": "PRON", "them": "PRON", "me": "PRON", "him": "PRON",
    "her": "PRON", "us": "PRON", "my": "PRON", "your": "PRON", "its": "PRON",
    "our": "PRON", "their": "PRON", "who": "PRON", "what": "PRON",
    "of": "ADP", "in": "ADP", "on": "ADP", "at": "ADP", "by": "ADP",
    "for": "ADP", "with": "ADP", "from": "ADP", "to": "ADP", "out": "ADP",
    "about": "ADP", "over": "ADP", "under": "ADP", "into": "ADP",
    "and": "CCONJ", "or": "CCONJ", "but": "CCONJ", "nor": "CCONJ", "yet": "CCONJ",
    "if": "SCONJ", "because": "SCONJ", "while": "SCONJ", "although": "SCONJ",
    "though": "SCONJ", "when": "SCONJ", "since": "SCONJ",
    "is": "AUX", "are": "AUX", "was": "AUX", "were": "AUX", "be": "AUX",
    "been": "AUX", "being": "AUX", "am": "AUX", "do": "AUX", "does": "AUX",
    "did": "AUX", "have": "AUX", "has": "AUX", "had": "AUX", "will": "AUX",
    "would": "AUX", "can": "AUX", "could": "AUX", "should": "AUX", "may": "AUX",
    "might": "AUX", "must": "AUX",
    "not": "PART", "n't": "PART", "'s": "PART",
    "very": "ADV", "too": "ADV", "so": "ADV", "also": "ADV", "just": "ADV",
    "here": "ADV", "there": "ADV", "never": "ADV", "always": "ADV",
    "quite": "ADV", "rather": "ADV", "somewhat": "ADV",
    "good": "ADJ", "great": "ADJ", "bad": "ADJ", "excellent": "ADJ",
    "nice": "ADJ", "best": "ADJ", "worst": "ADJ", "better": "ADJ",
    "worse": "ADJ", "fine": "ADJ", "okay": "ADJ", "cheap": "ADJ",
    "expensive": "ADJ", "fresh": "ADJ", "friendly": "ADJ", "tasty": "ADJ",
    "oh": "INTJ", "wow": "INTJ", "yes": "INTJ",
    "$": "SYM", "%": "SYM", "+": "SYM", "=": "SYM",
}


def heuristic_pos(tokens: Sequence[str]) -> list[int]:
    """Deterministic rule cascade standing in for a real tagger.

    Order: lexicon lookup, punctuation, digits, mid-sentence capitalization,
    suffix rules (-ly adverb, -ing/-ed verb, plural -s noun), default noun.
    """
    ids = []
    for i, token in enumerate(tokens):
        lower = token.lower()
        if lower in _LEXICON:
            tag = _LEXICON[lower]
        elif not any(ch.isalnum() for ch in token):
            tag = "PUNCT"
        elif token.replace(".", "", 1).replace(",", "").isdigit():
            tag = "NUM"
        elif i > 0 and token[0].isupper():
            tag = "PROPN"
        elif lower.endswith("ly"):
            tag = "ADV"
        elif lower.endswith("ing") or lower.endswith("ed"):
            tag = "VERB"
        elif lower.endswith("s") and not lower.endswith("ss"):
            tag = "NOUN"
        else:
            tag = "NOUN"
        ids.append(TAG_TO_ID[tag])
    return ids


class PosProvider:
    """POS tags from a sidecar file when available, else the heuristic cascade."""

    def __init__(self, sidecar_lines: Optional[list[list[int]]] = None) -> None:
        self._sidecar = sidecar_lines

    @classmethod
    def heuristic(cls) -> "PosProvider":
        return cls(None)

    @classmethod
    def sidecar(cls, path: str) -> "PosProvider":
        lines: list[list[int]] = []
        with open(path, "r", encoding="utf-8") as fh:
            for raw in fh:
                tags = raw.split()
                lines.append([TAG_TO_ID.get(t, TAG_TO_ID["X"]) for t in tags])
        return cls(lines)

    def tags_for(self, sentence_index: int, tokens: Sequence[str]) -> list[int]:
        if self._sidecar is None:
            return heuristic_pos(tokens)
        if sentence_index >= len(self._sidecar):
            raise ParseError(f"line {sentence_index + 1}: sidecar has no POS tags for this sentence")
        tags = self._sidecar[sentence_index]
        if len(tags) != len(tokens):
            raise ParseError(
                f"line {sentence_index + 1}: sidecar has {len(tags)} tags for {len(tokens)} tokens"
            )
        return list(tags)


# ---------------------------------------------------------------------------
# Hash-separated importer


def _span_from_indexes(indexes, line_no: int, n_tokens: int, what: str) -> Span:
    if not isinstance(indexes, (list, tuple)) or not indexes:
        raise ParseError(f"line {line_no}: {what} index list must be nonempty")
    idx = list(indexes)
    if any(not isinstance(i, int) for i in idx):
        raise ParseError(f"line {line_no}: {what} indexes must be integers")
    for a, b in zip(idx, idx[1:]):
        if b != a + 1:
            raise ParseError(f"line {line_no}: {what} indexes {idx} are not a contiguous run")
    if idx[0] < 0 or idx[-1] >= n_tokens:
        raise ParseError(f"line {line_no}: {what} indexes {idx} outside [0, {n_tokens})")
    return Span(idx[0], idx[-1])


def parse_line(raw: str, line_no: int, pos_provider: PosProvider) -> Sentence:
    if "####" not in raw:
        raise ParseError(f"line {line_no}: missing '####' separator")
    text, _, annotation = raw.partition("####")
    tokens = text.split()
    if not tokens:
        raise ParseError(f"line {line_no}: empty sentence")
    try:
        payload = ast.literal_eval(annotation.strip())
    except (ValueError, SyntaxError) as exc:
        raise ParseError(f"line {line_no}: unparsable annotation: {exc}") from exc
    if not isinstance(payload, (list, tuple)):
        raise ParseError(f"line {line_no}: annotation must be a list of triplets")
    triplets = []
    for item in payload:
        if not isinstance(item, (list, tuple)) or len(item) != 3:
            raise ParseError(f"line {line_no}: each triplet needs (aspect, opinion, polarity)")
        aspect_idx, opinion_idx, code = item
        if code not in POLARITY_CODES:
            raise ParseError(f"line {line_no}: unknown polarity code {code!r}")
        triplets.append(
            Triplet(
                aspect=_span_from_indexes(aspect_idx, line_no, len(tokens), "aspect"),
                opinion=_span_from_indexes(opinion_idx, line_no, len(tokens), "opinion"),
                sentiment=POLARITY_CODES[code],
            )
        )
    return Sentence(
        id=str(line_no),
        tokens=tokens,
        pos_tags=pos_provider.tags_for(line_no - 1, tokens),
        gold=triplets,
    )


def parse_corpus(path: str, pos_provider: Optional[PosProvider] = None) -> list[Sentence]:
    """Parse a hash-separated corpus file; ids are 1-based line numbers."""
    provider = pos_provider or PosProvider.heuristic()
    sentences = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            sentences.append(parse_line(raw, line_no, provider))
    return sentences


def serialize_line(sentence: Sentence) -> str:
    triplets = [
        (
            list(t.aspect.positions()),
            list(t.opinion.positions()),
            CODE_OF_POLARITY[t.sentiment],
        )
        for t in sentence.gold
    ]
    return f"{' '.join(sentence.tokens)}####{triplets!r}"


def serialize_corpus(path: str, sentences: Sequence[Sentence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sentences:
            fh.write(serialize_line(s))
            fh.write("\n")


# ---------------------------------------------------------------------------
# Canonical JSON-lines format


def sentence_to_dict(sentence: Sentence, triplets: Optional[Sequence[Triplet]] = None) -> dict:
    items = sentence.gold if triplets is None else triplets
    return {
        "id": sentence.id,
        "tokens": list(sentence.tokens),
        "pos": [UNIVERSAL_TAGS[i] for i in sentence.pos_tags],
        "triplets": [
            {
                "aspect": [t.aspect.start, t.aspect.end],
                "opinion": [t.opinion.start, t.opinion.end],
                "sentiment": t.sentiment.value,
            }
            for t in items
        ],
    }


def sentence_from_dict(obj: dict, line_no: int = 0) -> Sentence:
    try:
        tokens = obj["tokens"]
        if "pos" in obj and obj["pos"] is not None:
            pos = [TAG_TO_ID.get(t, TAG_TO_ID["X"]) for t in obj["pos"]]
        else:
            pos = heuristic_pos(tokens)
        triplets = []
        for t in obj.get("triplets", []):
            sentiment = SentimentLabel(t["sentiment"])
            if sentiment not in POLARITIES:
                raise ParseError(f"line {line_no}: triplet sentiment cannot be 'none'")
            triplets.append(
                Triplet(
                    aspect=Span(int(t["aspect"][0]), int(t["aspect"][1])),
                    opinion=Span(int(t["opinion"][0]), int(t["opinion"][1])),
                    sentiment=sentiment,
                )
            )
        return Sentence(str(obj.get("id", line_no)), tokens, pos, triplets)
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"line {line_no}: bad canonical record: {exc}") from exc


def read_jsonl(path: str) -> list[Sentence]:
    sentences = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {line_no}: invalid JSON: {exc}") from exc
            sentences.append(sentence_from_dict(obj, line_no))
    return sentences


def write_jsonl(path: str, sentences: Sequence[Sentence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sentences:
            fh.write(json.dumps(sentence_to_dict(s), ensure_ascii=False))
            fh.write("\n")


def load_corpus(path: str, pos_provider: Optional[PosProvider] = None) -> list[Sentence]:
    """Dispatch on extension: .jsonl is canonical, anything else hash-separated."""
    if path.endswith(".jsonl"):
        return read_jsonl(path)
    return parse_corpus(path, pos_provider)


# ---------------------------------------------------------------------------
# Synthetic corpus


@dataclass
class SynthSpec:
    max_triplets: int = 3
    overlap_rate: float = 0.3
    multi_rate: float = 0.45
    modifier_rate: float = 0.35
    two_token_aspect_rate: float = 0.2
    noise_rate: float = 0.0  # probability of flipping a gold sentiment


ASPECT_WORDS = (
    "battery", "screen", "keyboard", "pizza", "soup", "service", "staff",
    "price", "menu", "design", "speaker", "camera", "salad", "dessert",
    "coffee", "wine", "bread", "sauce", "laptop", "charger", "trackpad",
    "display", "burger", "pasta", "steak", "sushi", "decor", "music",
    "location", "portion", "waiter", "chef", "interface", "software",
    "warranty", "cooling", "fan", "case", "table", "patio",
)
POSITIVE_WORDS = (
    "great", "excellent", "amazing", "fantastic", "tasty", "lovely",
    "friendly", "fast", "crisp", "solid", "delicious", "wonderful",
    "superb", "reliable", "bright", "fresh", "generous", "cozy",
    "helpful", "smooth",
)
NEGATIVE_WORDS = (
    "awful", "terrible", "slow", "noisy", "bland", "rude", "pricey",
    "overpriced", "dim", "flimsy", "stale", "greasy", "laggy", "buggy",
    "cramped", "soggy", "weak", "broken", "dirty", "annoying",
)
NEUTRAL_WORDS = (
    "average", "okay", "standard", "typical", "ordinary", "plain",
    "acceptable", "moderate", "basic", "fair",
)
MODIFIER_WORDS = ("very", "slightly", "really", "quite", "rather", "somewhat")

_OPINION_CLASSES = (
    (POSITIVE_WORDS, SentimentLabel.POSITIVE),
    (NEGATIVE_WORDS, SentimentLabel.NEGATIVE),
    (NEUTRAL_WORDS, SentimentLabel.NEUTRAL),
)


class _Builder:
    """Accumulates tokens and gold spans for one synthetic sentence."""

    def __init__(self) -> None:
        self.tokens: list[str] = []
        self.gold: list[Triplet] = []

    def add(self, *tokens: str) -> Span:
        start = len(self.tokens)
        self.tokens.extend(tokens)
        return Span(start, len(self.tokens) - 1)


def _sample_opinion(rng: np.random.Generator) -> tuple[str, SentimentLabel]:
    words, sentiment = _OPINION_CLASSES[int(rng.integers(len(_OPINION_CLASSES)))]
    return str(rng.choice(words)), sentiment


def _add_clause(builder: _Builder, rng: np.random.Generator, spec: SynthSpec, lead: str) -> None:
    """Append '<lead> the A is [mod] O' with one gold triplet."""
    if lead:
        builder.add(lead)
    builder.add("the")
    if rng.random() < spec.two_token_aspect_rate:
        a, b = rng.choice(ASPECT_WORDS, size=2, replace=False)
        aspect = builder.add(str(a), str(b))
    else:
        aspect = builder.add(str(rng.choice(ASPECT_WORDS)))
    builder.add("is")
    opinion_word, sentiment = _sample_opinion(rng)
    if rng.random() < spec.modifier_rate:
        opinion = builder.add(str(rng.choice(MODIFIER_WORDS)), opinion_word)
    else:
        opinion = builder.add(opinion_word)
    builder.gold.append(Triplet(aspect=aspect, opinion=opinion, sentiment=sentiment))


def _add_shared_aspect_clause(builder: _Builder, rng: np.random.Generator, spec: SynthSpec) -> None:
    """Append 'the A is O1 but [mod] O2': two triplets sharing one aspect span."""
    builder.add("the")
    aspect = builder.add(str(rng.choice(ASPECT_WORDS)))
    builder.add("is")
    first_word, first_sent = _sample_opinion(rng)
    first = builder.add(first_word)
    builder.add("but")
    second_word, second_sent = _sample_opinion(rng)
    if rng.random() < spec.modifier_rate:
        second = builder.add(str(rng.choice(MODIFIER_WORDS)), second_word)
    else:
        second = builder.add(second_word)
    builder.gold.append(Triplet(aspect=aspect, opinion=first, sentiment=first_sent))
    builder.gold.append(Triplet(aspect=aspect, opinion=second, sentiment=second_sent))


def generate_synthetic_corpus(
    seed: int, n_sentences: int, spec: Optional[SynthSpec] = None
) -> list[Sentence]:
    """Template-generated review sentences with a deterministic gold set.

    Label noise draws from its own stream, so corpora generated with and
    without noise share identical tokens and spans.
    """
    if n_sentences < 1:
        raise ValueError("n_sentences must be >= 1")
    spec = spec or SynthSpec()
    structure_seed, noise_seed = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(structure_seed)
    noise_rng = np.random.default_rng(noise_seed)
    sentences = []
    for i in range(n_sentences):
        builder = _Builder()
        if rng.random() < spec.overlap_rate:
            _add_shared_aspect_clause(builder, rng, spec)
            if spec.max_triplets >= 3 and rng.random() < spec.multi_rate:
                _add_clause(builder, rng, spec, lead="and")
        else:
            _add_clause(builder, rng, spec, lead="")
            n_extra = 0
            if spec.max_triplets >= 2 and rng.random() < spec.multi_rate:
                n_extra = 1
                if spec.max_triplets >= 3 and rng.random() < spec.multi_rate:
                    n_extra = 2
            for _ in range(n_extra):
                _add_clause(builder, rng, spec, lead="and")
        builder.add(".")

        gold = builder.gold
        if spec.noise_rate > 0.0:
            noisy = []
            for t in gold:
                if noise_rng.random() < spec.noise_rate:
                    others = [p for p in POLARITIES if p is not t.sentiment]
                    flipped = others[int(noise_rng.integers(len(others)))]
                    noisy.append(Triplet(t.aspect, t.opinion, flipped))
                else:
                    noisy.append(t)
            gold = noisy

        tokens = builder.tokens
        sentences.append(
            Sentence(
                id=f"syn-{i:05d}",
                tokens=tokens,
                pos_tags=heuristic_pos(tokens),
                gold=gold,
            )
        )
    return sentences
