"""Minimal dense numeric core: reverse-mode autodiff on a linear tape, Adam, checkpoints.

All training math runs in 64-bit floats (gradient checks need the headroom);
32-bit storage only appears in cache files. A Tape together with the Params it
touches forms one single-threaded training context. Frozen parameters can be
read from any number of threads when no tape is recording.
"""

from __future__ import annotations

import hashlib
import os
import struct
from typing import Callable, Optional, Sequence, Union

import numpy as np

_CHECK_FINITE = os.environ.get("HRLT_CHECK_FINITE", "") == "1"

CHECKPOINT_MAGIC = b"HRLC"
CHECKPOINT_VERSION = 1


class NumericError(RuntimeError):
    """Non-finite values, drained tapes, or shape mismatches."""


class CheckpointError(RuntimeError):
    """Unreadable, truncated, or mismatched checkpoint files."""


class Tensor:
    """A dense 64-bit array with a lazily allocated gradient slot."""

    __slots__ = ("data", "grad")

    def __init__(self, data) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"


class Param:
    """A learnable tensor with its gradient and Adam state."""

    __slots__ = ("name", "value", "grad", "adam_m", "adam_v", "step_count")

    def __init__(self, value, name: str = "") -> None:
        v = np.array(value, dtype=np.float64)
        self.name = name
        self.value = Tensor(v)
        self.grad = Tensor(np.zeros_like(v))
        self.adam_m = Tensor(np.zeros_like(v))
        self.adam_v = Tensor(np.zeros_like(v))
        self.step_count = 0

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.data.shape

    def zero_grad(self) -> None:
        self.grad.data[...] = 0.0

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape})"


InputLike = Union[Tensor, np.ndarray]


def _data(x: InputLike) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else x


def _accum(x: InputLike, g: np.ndarray, fresh: bool = False) -> None:
    """Add g into x's gradient slot; plain arrays are constants and get none.

    fresh=True marks g as exclusively owned by the caller, so it may be
    adopted without copying.
    """
    if isinstance(x, Tensor):
        if x.grad is None:
            x.grad = g if fresh else g.copy()
        else:
            x.grad += g


class Tape:
    """Ordered record of backward closures; drained by a single backward pass."""

    __slots__ = ("_steps", "_drained")

    def __init__(self) -> None:
        self._steps: list[Callable[[], None]] = []
        self._drained = False

    def record(self, step: Callable[[], None]) -> None:
        self._steps.append(step)

    def __len__(self) -> int:
        return len(self._steps)


def backward(tape: Tape, loss: Tensor, loss_grad: float = 1.0) -> None:
    """Run the tape in reverse, accumulating d(loss)/dp into every reachable Param.

    The tape is drained afterwards; a second backward raises.
    """
    if tape._drained:
        raise NumericError("backward called on a drained tape")
    if not tape._steps:
        raise NumericError("backward called on an empty tape")
    if not np.all(np.isfinite(loss.data)):
        raise NumericError("backward: loss is not finite")
    loss.grad = np.full(loss.data.shape, float(loss_grad))
    for step in reversed(tape._steps):
        step()
    tape._steps.clear()
    tape._drained = True


def _maybe_check(name: str, arr: np.ndarray) -> None:
    if _CHECK_FINITE and not np.all(np.isfinite(arr)):
        raise NumericError(f"{name}: non-finite output")


def linear(tape: Optional[Tape], weight: Param, x: InputLike, bias: Optional[Param] = None) -> Tensor:
    """W @ x (+ b) for a 2-D weight and 1-D input."""
    xd = _data(x)
    wd = weight.value.data
    if wd.ndim != 2 or xd.ndim != 1 or wd.shape[1] != xd.shape[0]:
        raise NumericError(f"linear: cannot apply {wd.shape} to {xd.shape}")
    y = wd @ xd
    if bias is not None:
        y = y + bias.value.data
    _maybe_check("linear", y)
    out = Tensor(y)
    if tape is not None:
        def _back() -> None:
            g = out.grad
            if g is None:
                return
            weight.grad.data += g[:, None] * xd
            if bias is not None:
                bias.grad.data += g
            _accum(x, wd.T @ g, fresh=True)
        tape.record(_back)
    return out


def concat(tape: Optional[Tape], parts: Sequence[InputLike]) -> Tensor:
    datas = [_data(p) for p in parts]
    out = Tensor(np.concatenate(datas))
    if tape is not None:
        sizes = [d.shape[0] for d in datas]
        def _back() -> None:
            g = out.grad
            if g is None:
                return
            offset = 0
            for p, n in zip(parts, sizes):
                _accum(p, g[offset:offset + n])
                offset += n
        tape.record(_back)
    return out


def affine_cat(
    tape: Optional[Tape],
    weight: Param,
    parts: Sequence[InputLike],
    bias: Optional[Param] = None,
) -> Tensor:
    """W @ concat(parts) (+ b), fused into one tape record.

    Equivalent to linear(weight, concat(parts), bias); the fusion avoids
    materializing the concatenated gradient in the hot rollout loop.
    """
    datas = [_data(p) for p in parts]
    x = np.concatenate(datas)
    wd = weight.value.data
    if wd.ndim != 2 or wd.shape[1] != x.shape[0]:
        raise NumericError(f"affine_cat: cannot apply {wd.shape} to {x.shape}")
    y = wd @ x
    if bias is not None:
        y = y + bias.value.data
    _maybe_check("affine_cat", y)
    out = Tensor(y)
    if tape is not None:
        sizes = [d.shape[0] for d in datas]
        def _back() -> None:
            g = out.grad
            if g is None:
                return
            weight.grad.data += g[:, None] * x
            if bias is not None:
                bias.grad.data += g
            offset = 0
            for p, n in zip(parts, sizes):
                if isinstance(p, Tensor):
                    _accum(p, wd[:, offset:offset + n].T @ g, fresh=True)
                offset += n
        tape.record(_back)
    return out


def embedding_sum(tape: Optional[Tape], lookups: Sequence[tuple[Param, int]]) -> Tensor:
    """Sum of embedding rows, fused; backward scatters into each row."""
    total: Optional[np.ndarray] = None
    for table, idx in lookups:
        rows = table.value.data
        if not 0 <= idx < rows.shape[0]:
            raise NumericError(f"embedding index {idx} out of range for {rows.shape[0]} rows")
        total = rows[idx].copy() if total is None else total + rows[idx]
    out = Tensor(total)
    if tape is not None:
        def _back() -> None:
            g = out.grad
            if g is None:
                return
            for table, idx in lookups:
                table.grad.data[idx] += g
        tape.record(_back)
    return out


def add_n(tape: Optional[Tape], parts: Sequence[InputLike]) -> Tensor:
    """Elementwise sum of same-shape vectors."""
    datas = [_data(p) for p in parts]
    total = datas[0].copy()
    for d in datas[1:]:
        total += d
    out = Tensor(total)
    if tape is not None:
        def _back() -> None:
            g = out.grad
            if g is None:
                return
            for p in parts:
                _accum(p, g)
        tape.record(_back)
    return out


def scale(tape: Optional[Tape], x: InputLike, c: float) -> Tensor:
    out = Tensor(_data(x) * c)
    if tape is not None:
        def _back() -> None:
            g = out.grad
            if g is None:
                return
            _accum(x, g * c, fresh=True)
        tape.record(_back)
    return out


def tanh(tape: Optional[Tape], x: InputLike) -> Tensor:
    y = np.tanh(_data(x))
    out = Tensor(y)
    if tape is not None:
        def _back() -> None:
            g = out.grad
            if g is None:
                return
            _accum(x, (1.0 - y * y) * g, fresh=True)
        tape.record(_back)
    return out


def relu(tape: Optional[Tape], x: InputLike) -> Tensor:
    xd = _data(x)
    out = Tensor(np.maximum(xd, 0.0))
    if tape is not None:
        def _back() -> None:
            g = out.grad
            if g is None:
                return
            _accum(x, g * (xd > 0.0), fresh=True)
        tape.record(_back)
    return out


ACTIVATIONS = {"tanh": tanh, "relu": relu}


def dropout(
    tape: Optional[Tape],
    x: InputLike,
    rate: float,
    rng: Optional[np.random.Generator] = None,
    training: bool = False,
) -> Tensor:
    """Inverted dropout: train-time mask scaled by 1/(1-rate); eval is a no-op."""
    if not 0.0 <= rate < 1.0:
        raise NumericError(f"dropout rate {rate} outside [0, 1)")
    if not training or rate == 0.0:
        return x if isinstance(x, Tensor) else Tensor(x)
    if rng is None:
        raise NumericError("dropout in training mode needs the run RNG")
    xd = _data(x)
    mask = (rng.random(xd.shape) >= rate) / (1.0 - rate)
    out = Tensor(xd * mask)
    if tape is not None:
        def _back() -> None:
            g = out.grad
            if g is None:
                return
            _accum(x, g * mask, fresh=True)
        tape.record(_back)
    return out


def mlp_forward(
    tape: Optional[Tape],
    layers: Sequence[tuple[Param, Optional[Param]]],
    x: InputLike,
    activation: str = "tanh",
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Stack of affine -> activation -> (inverted dropout when training) layers."""
    act = ACTIVATIONS[activation]
    h: InputLike = x
    for weight, bias in layers:
        h = linear(tape, weight, h, bias)
        h = act(tape, h)
        h = dropout(tape, h, dropout_rate, rng=rng, training=training)
    return h if isinstance(h, Tensor) else Tensor(h)


def softmax(tape: Optional[Tape], x: InputLike) -> Tensor:
    """Max-subtracted stable softmax over a 1-D vector."""
    xd = _data(x)
    if xd.ndim != 1 or xd.size == 0:
        raise NumericError(f"softmax needs a nonempty 1-D input, got shape {xd.shape}")
    if not np.all(np.isfinite(xd)):
        raise NumericError("softmax: non-finite input")
    z = xd - xd.max()
    e = np.exp(z)
    p = e / e.sum()
    out = Tensor(p)
    if tape is not None:
        def _back() -> None:
            g = out.grad
            if g is None:
                return
            _accum(x, p * (g - float(g @ p)), fresh=True)
        tape.record(_back)
    return out


def log_softmax(tape: Optional[Tape], x: InputLike) -> Tensor:
    xd = _data(x)
    if xd.ndim != 1 or xd.size == 0:
        raise NumericError(f"log_softmax needs a nonempty 1-D input, got shape {xd.shape}")
    if not np.all(np.isfinite(xd)):
        raise NumericError("log_softmax: non-finite input")
    z = xd - xd.max()
    lse = np.log(np.exp(z).sum())
    y = z - lse
    out = Tensor(y)
    if tape is not None:
        p = np.exp(y)
        def _back() -> None:
            g = out.grad
            if g is None:
                return
            _accum(x, g - p * g.sum(), fresh=True)
        tape.record(_back)
    return out


def pick(tape: Optional[Tape], x: InputLike, index: int) -> Tensor:
    """Select one component of a vector as a 0-d scalar."""
    xd = _data(x)
    if not 0 <= index < xd.shape[0]:
        raise NumericError(f"pick index {index} out of range for shape {xd.shape}")
    out = Tensor(xd[index])
    if tape is not None:
        def _back() -> None:
            g = out.grad
            if g is None:
                return
            if isinstance(x, Tensor):
                if x.grad is None:
                    x.grad = np.zeros_like(xd)
                x.grad[index] += g
        tape.record(_back)
    return out


def sum_scalars(tape: Optional[Tape], terms: Sequence[InputLike]) -> Tensor:
    """Sum of 0-d scalars into one 0-d scalar."""
    total = 0.0
    for t in terms:
        total += float(_data(t))
    out = Tensor(total)
    if tape is not None:
        def _back() -> None:
            g = out.grad
            if g is None:
                return
            for t in terms:
                _accum(t, np.asarray(g))
        tape.record(_back)
    return out


def weighted_sum(tape: Optional[Tape], terms: Sequence[InputLike], weights: Sequence[float]) -> Tensor:
    """Sum of constant-weighted 0-d scalars into one 0-d scalar."""
    if len(terms) != len(weights):
        raise NumericError("weighted_sum: terms and weights differ in length")
    total = 0.0
    for t, w in zip(terms, weights):
        total += float(_data(t)) * w
    out = Tensor(total)
    if tape is not None:
        def _back() -> None:
            g = out.grad
            if g is None:
                return
            for t, w in zip(terms, weights):
                _accum(t, np.asarray(g * w))
        tape.record(_back)
    return out


def embedding_lookup(tape: Optional[Tape], table: Param, index: int) -> Tensor:
    """Row of an embedding table; backward scatters into that row only."""
    rows = table.value.data
    if not 0 <= index < rows.shape[0]:
        raise NumericError(f"embedding index {index} out of range for {rows.shape[0]} rows")
    out = Tensor(rows[index].copy())
    if tape is not None:
        def _back() -> None:
            g = out.grad
            if g is None:
                return
            table.grad.data[index] += g
        tape.record(_back)
    return out


# ---------------------------------------------------------------------------
# Optimizer


def global_grad_norm(params: Sequence[Param]) -> float:
    total = 0.0
    for p in params:
        g = p.grad.data
        total += float(g.ravel() @ g.ravel())
    return float(np.sqrt(total))


def clip_gradients(params: Sequence[Param], max_norm: Optional[float]) -> float:
    """Scale all gradients so their global norm is at most max_norm.

    Disabled when max_norm is None or not positive. Returns the pre-clip norm.
    """
    norm = global_grad_norm(params)
    if max_norm is None or max_norm <= 0.0:
        return norm
    if norm > max_norm:
        factor = max_norm / norm
        for p in params:
            p.grad.data *= factor
    return norm


def adam_step(
    params: Sequence[Param],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update; gradients are zeroed after a successful step."""
    for p in params:
        if not np.all(np.isfinite(p.grad.data)):
            raise NumericError(f"adam_step: non-finite gradient in {p.name!r}")
    for p in params:
        g = p.grad.data
        t = p.step_count + 1
        m = p.adam_m.data
        v = p.adam_v.data
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.value.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.step_count = t
        p.zero_grad()


# ---------------------------------------------------------------------------
# Parameter initialization


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], limit: float = 0.1) -> np.ndarray:
    return rng.uniform(-limit, limit, size=shape)


def xavier_init(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    fan_out, fan_in = shape
    limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# Checkpoint container
#
# Little-endian layout:
#   magic    4 bytes  b"HRLC"
#   version  u32      (currently 1)
#   seed     u64      run RNG seed
#   confhash 32 bytes sha256 of the model config section
#   count    u32      number of parameter records
# then per record:
#   name_len u16, name utf-8
#   ndim     u8, dims u32 * ndim
#   step     u64
#   value    f64 * prod(dims)   (row-major)
#   adam_m   f64 * prod(dims)
#   adam_v   f64 * prod(dims)


def save_checkpoint(path: str, params: dict[str, Param], seed: int, config_hash: bytes) -> None:
    if len(config_hash) != 32:
        raise CheckpointError(f"config hash must be 32 bytes, got {len(config_hash)}")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, seed))
        fh.write(config_hash)
        fh.write(struct.pack("<I", len(params)))
        for name, p in params.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            dims = p.shape
            fh.write(struct.pack("<B", len(dims)))
            fh.write(struct.pack(f"<{len(dims)}I", *dims))
            fh.write(struct.pack("<Q", p.step_count))
            fh.write(p.value.data.astype("<f8").tobytes())
            fh.write(p.adam_m.data.astype("<f8").tobytes())
            fh.write(p.adam_v.data.astype("<f8").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what} at offset {fh.tell()}")
    return buf


def load_checkpoint(path: str) -> tuple[dict[str, Param], int, bytes]:
    """Load a checkpoint; returns (params by name, seed, config hash)."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad checkpoint magic {magic!r}")
        version, seed = struct.unpack("<IQ", _read_exact(fh, 12, "header"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        config_hash = _read_exact(fh, 32, "config hash")
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "count"))
        params: dict[str, Param] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "ndim"))
            dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "dims"))
            (step,) = struct.unpack("<Q", _read_exact(fh, 8, "step count"))
            size = int(np.prod(dims)) if dims else 1
            blobs = []
            for part in ("value", "adam_m", "adam_v"):
                raw = _read_exact(fh, 8 * size, f"{name} {part}")
                blobs.append(np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64))
            p = Param(blobs[0], name=name)
            p.adam_m.data[...] = blobs[1]
            p.adam_v.data[...] = blobs[2]
            p.step_count = step
            params[name] = p
        if fh.read(1):
            raise CheckpointError("trailing bytes after the last checkpoint record")
    return params, seed, config_hash


def fingerprint_bytes(text: str) -> bytes:
    return hashlib.sha256(text.encode("utf-8")).digest()
