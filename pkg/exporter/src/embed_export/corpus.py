"""Minimal corpus reading for the engine's two corpus file formats.

The exporter only needs tokens, sentence ids, and gold spans; it deliberately
re-implements the formats rather than importing the engine, so the two tools
stay coupled through files alone.
"""

from __future__ import annotations

import ast
import json
from dataclasses import dataclass, field

SENTIMENTS = ("positive", "negative", "neutral")
POLARITY_CODES = {"POS": "positive", "NEG": "negative", "NEU": "neutral"}


@dataclass
class GoldTriplet:
    aspect: tuple[int, int]
    opinion: tuple[int, int]
    sentiment: str


@dataclass
class CorpusSentence:
    id: str
    tokens: list[str]
    gold: list[GoldTriplet] = field(default_factory=list)


class CorpusError(ValueError):
    pass


def _read_hash_line(raw: str, line_no: int) -> CorpusSentence:
    if "####" not in raw:
        raise CorpusError(f"line {line_no}: missing '####' separator")
    text, _, annotation = raw.partition("####")
    tokens = text.split()
    if not tokens:
        raise CorpusError(f"line {line_no}: empty sentence")
    try:
        payload = ast.literal_eval(annotation.strip())
    except (ValueError, SyntaxError) as exc:
        raise CorpusError(f"line {line_no}: unparsable annotation: {exc}") from exc
    gold = []
    for item in payload:
        aspect_idx, opinion_idx, code = item
        if code not in POLARITY_CODES:
            raise CorpusError(f"line {line_no}: unknown polarity code {code!r}")
        gold.append(
            GoldTriplet(
                aspect=(min(aspect_idx), max(aspect_idx)),
                opinion=(min(opinion_idx), max(opinion_idx)),
                sentiment=POLARITY_CODES[code],
            )
        )
    return CorpusSentence(str(line_no), tokens, gold)


def _read_jsonl_line(raw: str, line_no: int) -> CorpusSentence:
    obj = json.loads(raw)
    gold = []
    for t in obj.get("triplets", []):
        if t["sentiment"] not in SENTIMENTS:
            raise CorpusError(f"line {line_no}: bad sentiment {t['sentiment']!r}")
        gold.append(
            GoldTriplet(
                aspect=(int(t["aspect"][0]), int(t["aspect"][1])),
                opinion=(int(t["opinion"][0]), int(t["opinion"][1])),
                sentiment=t["sentiment"],
            )
        )
    return CorpusSentence(str(obj.get("id", line_no)), list(obj["tokens"]), gold)


def read_corpus(path: str) -> list[CorpusSentence]:
    """Read a corpus file; .jsonl is the canonical format, else hash-separated."""
    reader = _read_jsonl_line if path.endswith(".jsonl") else _read_hash_line
    sentences = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if raw:
                sentences.append(reader(raw, line_no))
    return sentences


def gold_anchors(sentence: CorpusSentence) -> list[tuple[int, GoldTriplet]]:
    """Anchor each gold triplet at its opinion span's last token.

    Mirrors the engine's teacher-forcing rule: on collision the later triplet
    falls back to the nearest free position, preferring its own opinion span.
    """
    taken: set[int] = set()
    out = []
    for tri in sentence.gold:
        preferred = tri.opinion[1]
        span = list(range(tri.opinion[0], tri.opinion[1] + 1))
        in_span = sorted(span, key=lambda p: (abs(p - preferred), p))
        everywhere = sorted(range(len(sentence.tokens)), key=lambda p: (abs(p - preferred), p))
        for pos in in_span + [p for p in everywhere if p not in in_span]:
            if pos not in taken:
                taken.add(pos)
                out.append((pos, tri))
                break
    return out


def read_anchor_file(path: str) -> list[tuple[str, int, str]]:
    """Extra anchors to materialize: lines of "sentence_id anchor sentiment"."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw or raw.startswith("#"):
                continue
            parts = raw.split()
            if len(parts) != 3 or parts[2] not in SENTIMENTS:
                raise CorpusError(f"line {line_no}: expected 'sentence_id anchor sentiment'")
            out.append((parts[0], int(parts[1]), parts[2]))
    return out
