"""Per-token contextual vectors for the three query kinds.

Two sources stand behind one interface: a small trainable encoder (learned
embeddings mixed by a bidirectional recurrent pass) and a read-only cache of
precomputed vectors loaded from disk. Cached vectors are constants; trainable
vectors live on the tape and receive gradients.

Cache wire format (little-endian):
    header:  magic b"HRLE", version u32, dim u32, count u64, fingerprint 32 bytes
    record:  key_len u32, key utf-8 ("sentence_id|kind|sentiment|anchor"),
             J u32, (J+1) * dim float32 (token vectors then summary vector)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .config import ModelConfig
from .core import POLARITIES, Sentence, SentimentLabel
from .numerics import (
    InputLike,
    Param,
    Tape,
    Tensor,
    add_n,
    affine_cat,
    concat,
    embedding_sum,
    linear,
    scale,
    tanh,
)

CACHE_MAGIC = b"HRLE"
CACHE_VERSION = 1

KIND_HIGH = "high"
KIND_OPINION = "opinion"
KIND_ASPECT = "aspect"
_KIND_INDEX = {KIND_HIGH: 0, KIND_OPINION: 1, KIND_ASPECT: 2}


class CacheError(RuntimeError):
    """Unreadable or inconsistent encoding-cache files."""


class MissingEncodingError(KeyError):
    """A precomputed lookup had no entry for the requested key."""

    def __init__(self, key: str) -> None:
        super().__init__(key)
        self.key = key

    def __str__(self) -> str:
        return f"no cached encoding for key {self.key!r}"


@dataclass(frozen=True)
class QueryKind:
    """What the encoder is being asked about: the scan itself, or one subtask."""

    kind: str
    sentiment: SentimentLabel = SentimentLabel.NONE
    anchor: int = -1

    def __post_init__(self) -> None:
        if self.kind not in _KIND_INDEX:
            raise ValueError(f"unknown query kind {self.kind!r}")
        if self.kind != KIND_HIGH:
            if self.sentiment not in POLARITIES:
                raise ValueError(f"{self.kind} query needs a polarity, got {self.sentiment}")
            if self.anchor < 0:
                raise ValueError(f"{self.kind} query needs a non-negative anchor")

    @classmethod
    def high_level(cls) -> "QueryKind":
        return cls(KIND_HIGH)

    @classmethod
    def opinion_for(cls, sentiment: SentimentLabel, anchor: int) -> "QueryKind":
        return cls(KIND_OPINION, sentiment, anchor)

    @classmethod
    def aspect_for(cls, sentiment: SentimentLabel, anchor: int) -> "QueryKind":
        return cls(KIND_ASPECT, sentiment, anchor)

    def cache_key(self, sentence_id: str) -> str:
        return f"{sentence_id}|{self.kind}|{self.sentiment.value}|{self.anchor}"


@dataclass
class SentenceEncoding:
    """J token vectors plus one sentence-summary vector."""

    token_vectors: list[InputLike]
    summary: InputLike

    def __len__(self) -> int:
        return len(self.token_vectors)


# ---------------------------------------------------------------------------
# Word vocabulary (trainable encoder only)


class Vocab:
    """Token-to-row mapping for the word embedding table; row 0 is <unk>."""

    UNK = "<unk>"

    def __init__(self, tokens: Sequence[str]) -> None:
        self.tokens = (self.UNK,) + tuple(tokens)
        self._index = {tok: i for i, tok in enumerate(self.tokens)}

    @classmethod
    def build(cls, sentences: Sequence[Sentence]) -> "Vocab":
        seen = sorted({tok for s in sentences for tok in s.tokens})
        return cls(seen)

    def __len__(self) -> int:
        return len(self.tokens)

    def index(self, token: str) -> int:
        return self._index.get(token, 0)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(list(self.tokens[1:]), fh, ensure_ascii=False)

    @classmethod
    def load(cls, path: str) -> "Vocab":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))


# ---------------------------------------------------------------------------
# Encoding cache


class EncodingCache:
    """Read-only map (sentence id, query) -> encoding, shareable across threads."""

    def __init__(self, dim: int, fingerprint: bytes, entries: dict[str, tuple[np.ndarray, np.ndarray]]):
        self.dim = dim
        self.fingerprint = fingerprint
        self._entries = entries

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def keys(self):
        return self._entries.keys()

    def lookup(self, key: str) -> SentenceEncoding:
        try:
            tokens, summary = self._entries[key]
        except KeyError:
            raise MissingEncodingError(key) from None
        vectors = [tokens[j].astype(np.float64) for j in range(tokens.shape[0])]
        return SentenceEncoding(vectors, summary.astype(np.float64))


def save_cache(
    path: str,
    dim: int,
    fingerprint: bytes,
    entries: dict[str, tuple[np.ndarray, np.ndarray]],
) -> None:
    """Write a cache file; entries map key -> (J x dim tokens, dim summary)."""
    if len(fingerprint) != 32:
        raise CacheError(f"fingerprint must be 32 bytes, got {len(fingerprint)}")
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<IIQ", CACHE_VERSION, dim, len(entries)))
        fh.write(fingerprint)
        for key, (tokens, summary) in entries.items():
            tok = np.asarray(tokens, dtype="<f4")
            summ = np.asarray(summary, dtype="<f4")
            if tok.ndim != 2 or tok.shape[1] != dim or summ.shape != (dim,):
                raise CacheError(f"entry {key!r} does not match declared dim {dim}")
            encoded = key.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", tok.shape[0]))
            fh.write(tok.tobytes())
            fh.write(summ.tobytes())


def load_cache(path: str) -> EncodingCache:
    """Load and fully validate a cache file; truncation fails closed."""
    with open(path, "rb") as fh:
        def need(n: int, what: str) -> bytes:
            buf = fh.read(n)
            if len(buf) != n:
                raise CacheError(f"truncated cache while reading {what} at offset {fh.tell()}")
            return buf

        magic = need(4, "magic")
        if magic != CACHE_MAGIC:
            raise CacheError(f"bad cache magic {magic!r}")
        version, dim, count = struct.unpack("<IIQ", need(16, "header"))
        if version != CACHE_VERSION:
            raise CacheError(f"unsupported cache version {version}")
        if dim <= 0:
            raise CacheError(f"non-positive cache dim {dim}")
        fingerprint = need(32, "fingerprint")
        entries: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for _ in range(count):
            (key_len,) = struct.unpack("<I", need(4, "key length"))
            key = need(key_len, "key").decode("utf-8")
            (length,) = struct.unpack("<I", need(4, "token count"))
            raw = need(4 * dim * (length + 1), f"vectors of {key!r}")
            mat = np.frombuffer(raw, dtype="<f4").reshape(length + 1, dim)
            entries[key] = (mat[:length].copy(), mat[length].copy())
        if fh.read(1):
            raise CacheError("trailing bytes after the last cache record")
    return EncodingCache(dim, fingerprint, entries)


# ---------------------------------------------------------------------------
# Trainable encoder


class TrainableEncoder:
    """Learned embeddings mixed by one forward and one backward recurrent pass.

    Per token: word embedding + query-kind embedding (+ sentiment embedding and
    an is-anchor flag embedding for subtask queries), then h_fw/h_bw recurrences
    whose outputs are concatenated. The summary vector is one affine layer over
    the mean of the mixed token vectors.
    """

    def __init__(self, params: dict[str, Param], vocab: Vocab, cfg: ModelConfig) -> None:
        self.params = params
        self.vocab = vocab
        self.cfg = cfg

    @property
    def dim(self) -> int:
        return self.cfg.d_h

    @staticmethod
    def param_shapes(cfg: ModelConfig, vocab_size: int) -> dict[str, tuple[int, ...]]:
        d = cfg.d_h
        half = d // 2
        return {
            "enc.word": (vocab_size, d),
            "enc.kind": (3, d),
            "enc.sent": (3, d),
            "enc.anchor": (1, d),
            "enc.fw.W": (half, d + half),  # left-to-right pass over [x_t; h_{t-1}]
            "enc.fw.b": (half,),
            "enc.bw.W": (half, d + half),
            "enc.bw.b": (half,),
            "enc.sum.W": (d, d),
            "enc.sum.b": (d,),
        }

    def encode(self, tape: Optional[Tape], sentence: Sentence, query: QueryKind) -> SentenceEncoding:
        p = self.params
        inputs: list[Tensor] = []
        kind_idx = _KIND_INDEX[query.kind]
        for j, token in enumerate(sentence.tokens):
            lookups = [
                (p["enc.word"], self.vocab.index(token)),
                (p["enc.kind"], kind_idx),
            ]
            if query.kind != KIND_HIGH:
                lookups.append((p["enc.sent"], POLARITIES.index(query.sentiment)))
                if j == query.anchor:
                    lookups.append((p["enc.anchor"], 0))
            inputs.append(embedding_sum(tape, lookups))

        half = self.cfg.d_h // 2
        zero = np.zeros(half)
        fw: list[Tensor] = []
        h: InputLike = zero
        for x in inputs:
            h = tanh(tape, affine_cat(tape, p["enc.fw.W"], [x, h], p["enc.fw.b"]))
            fw.append(h)
        bw: list[Tensor] = [None] * len(inputs)  # type: ignore[list-item]
        h = zero
        for j in range(len(inputs) - 1, -1, -1):
            h = tanh(tape, affine_cat(tape, p["enc.bw.W"], [inputs[j], h], p["enc.bw.b"]))
            bw[j] = h

        mixed = [concat(tape, [fw[j], bw[j]]) for j in range(len(inputs))]
        mean = scale(tape, add_n(tape, mixed), 1.0 / len(inputs))
        summary = linear(tape, p["enc.sum.W"], mean, p["enc.sum.b"])
        return SentenceEncoding(list(mixed), summary)


class Encoder:
    """Facade choosing between the trainable encoder and a precomputed cache."""

    def __init__(
        self,
        trainable: Optional[TrainableEncoder] = None,
        cache: Optional[EncodingCache] = None,
        cache_fallback: bool = False,
    ) -> None:
        if trainable is None and cache is None:
            raise ValueError("encoder needs a trainable backend, a cache, or both")
        self.trainable = trainable
        self.cache = cache
        self.cache_fallback = cache_fallback

    @property
    def dim(self) -> int:
        return self.cache.dim if self.cache is not None else self.trainable.dim

    def encode(self, tape: Optional[Tape], sentence: Sentence, query: QueryKind) -> SentenceEncoding:
        if self.cache is not None:
            key = query.cache_key(sentence.id)
            try:
                return self.cache.lookup(key)
            except MissingEncodingError:
                if not (self.cache_fallback and self.trainable is not None):
                    raise
        return self.trainable.encode(tape, sentence, query)
