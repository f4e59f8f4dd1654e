"""The engine's encoding-cache wire format (write side, plus a verifying reader).

Little-endian layout:
    header:  magic b"HRLE", version u32, dim u32, count u64, fingerprint 32 bytes
    record:  key_len u32, key utf-8 ("sentence_id|kind|sentiment|anchor"),
             J u32, (J+1) * dim float32 (token vectors then summary vector)
"""

from __future__ import annotations

import struct

import numpy as np

CACHE_MAGIC = b"HRLE"
CACHE_VERSION = 1


class CacheWriteError(RuntimeError):
    pass


def cache_key(sentence_id: str, kind: str, sentiment: str, anchor: int) -> str:
    return f"{sentence_id}|{kind}|{sentiment}|{anchor}"


def write_cache(path: str, dim: int, fingerprint: bytes,
                records: list[tuple[str, np.ndarray, np.ndarray]]) -> None:
    """Write records of (key, J x dim token matrix, dim summary vector)."""
    if len(fingerprint) != 32:
        raise CacheWriteError(f"fingerprint must be 32 bytes, got {len(fingerprint)}")
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<IIQ", CACHE_VERSION, dim, len(records)))
        fh.write(fingerprint)
        for key, tokens, summary in records:
            tok = np.ascontiguousarray(tokens, dtype="<f4")
            summ = np.ascontiguousarray(summary, dtype="<f4")
            if tok.ndim != 2 or tok.shape[1] != dim or summ.shape != (dim,):
                raise CacheWriteError(f"record {key!r} does not match declared dim {dim}")
            encoded = key.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", tok.shape[0]))
            fh.write(tok.tobytes())
            fh.write(summ.tobytes())


def read_cache(path: str) -> tuple[int, bytes, dict[str, tuple[np.ndarray, np.ndarray]]]:
    """Re-read a written cache (self-check and tests)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CACHE_MAGIC:
            raise CacheWriteError(f"bad magic {magic!r}")
        version, dim, count = struct.unpack("<IIQ", fh.read(16))
        if version != CACHE_VERSION:
            raise CacheWriteError(f"unsupported version {version}")
        fingerprint = fh.read(32)
        records = {}
        for _ in range(count):
            (key_len,) = struct.unpack("<I", fh.read(4))
            key = fh.read(key_len).decode("utf-8")
            (length,) = struct.unpack("<I", fh.read(4))
            mat = np.frombuffer(fh.read(4 * dim * (length + 1)), dtype="<f4")
            mat = mat.reshape(length + 1, dim)
            records[key] = (mat[:length].copy(), mat[length].copy())
    return dim, fingerprint, records
