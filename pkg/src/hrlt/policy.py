"""Stochastic policies: the option head and the option-conditioned tag heads.

All learnable tensors for the whole engine are built and named here so the
optimizer, checkpoints, and both policy levels share one registry.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .config import ModelConfig
from .core import OPTION_ORDER, POLARITIES, BioTag, SentimentLabel, TAG_ORDER
from .encoder import TrainableEncoder
from .numerics import (
    NumericError,
    Param,
    Tape,
    Tensor,
    concat,
    linear,
    log_softmax,
    pick,
    uniform_init,
    xavier_init,
)

N_OPTIONS = 4  # none + three polarities
N_ACTIONS = 3  # B, I, O
N_POS_TAGS = 17  # universal tagset size (see data module)

SUBTASK_KINDS = ("opinion", "aspect")


class Distribution:
    """A categorical distribution with its log-probability graph node."""

    __slots__ = ("log_probs", "probs")

    def __init__(self, log_probs: Tensor) -> None:
        self.log_probs = log_probs
        self.probs = np.exp(log_probs.data)

    def sample(self, rng: np.random.Generator) -> int:
        r = rng.random() * self.probs.sum()
        acc = 0.0
        for i, p in enumerate(self.probs):
            acc += p
            if r <= acc:
                return i
        return len(self.probs) - 1

    def argmax(self) -> int:
        return int(np.argmax(self.probs))

    def log_prob(self, tape: Optional[Tape], index: int) -> Tensor:
        return pick(tape, self.log_probs, index)


class PolicyParams:
    """Registry of every learnable tensor, keyed by stable checkpoint names.

    Embeddings start uniform in [-0.1, 0.1], weight matrices Xavier-uniform,
    biases zero. In cache-encoder mode the enc.* block is omitted and the
    state layers adapt to the cache's declared width.
    """

    def __init__(
        self,
        cfg: ModelConfig,
        vocab_size: int,
        rng: np.random.Generator,
        enc_dim: Optional[int] = None,
        params: Optional[dict[str, Param]] = None,
    ) -> None:
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.enc_dim = enc_dim if enc_dim is not None else cfg.d_h
        self.with_encoder = cfg.cache_path is None or cfg.cache_fallback
        if params is not None:
            self.params = params
        else:
            self.params = self._init_params(rng)

    def _init_params(self, rng: np.random.Generator) -> dict[str, Param]:
        cfg = self.cfg
        d_h = self.enc_dim
        shapes: dict[str, tuple[int, ...]] = {}
        if self.with_encoder:
            shapes.update(TrainableEncoder.param_shapes(cfg, self.vocab_size))
        shapes.update(
            {
                "emb.pos": (N_POS_TAGS, cfg.d_pos),
                "emb.sent": (N_OPTIONS, cfg.d_emb),  # row 0 = no sentiment yet
                "emb.tag": (N_ACTIONS + 1, cfg.d_emb),  # row 3 = before-first-tag
                "high.state.W": (cfg.d_s, d_h + cfg.d_pos + cfg.d_emb + cfg.d_s),
                "high.state.b": (cfg.d_s,),
                "high.pi": (N_OPTIONS, cfg.d_s),
                "ctx.W": (cfg.d_s, cfg.d_s),
                "low.init.W": (cfg.d_s, cfg.d_s),
                "low.state.W": (cfg.d_s, d_h + cfg.d_pos + cfg.d_emb + cfg.d_s + cfg.d_s + d_h),
                "low.state.b": (cfg.d_s,),
            }
        )
        if cfg.low_policy_shared:
            for kind in SUBTASK_KINDS:
                shapes[f"low.pi.{kind}"] = (N_ACTIONS, cfg.d_s + cfg.d_emb)
        else:
            for kind in SUBTASK_KINDS:
                for sent in POLARITIES:
                    shapes[f"low.pi.{kind}.{sent.value}"] = (N_ACTIONS, cfg.d_s)

        params: dict[str, Param] = {}
        for name, shape in shapes.items():
            if name.endswith(".b") or name.endswith("state.b") or name.endswith("sum.b"):
                values = np.zeros(shape)
            elif name.startswith("emb.") or name in ("enc.word", "enc.kind", "enc.sent", "enc.anchor"):
                values = uniform_init(rng, shape)
            else:
                values = xavier_init(rng, shape)  # 2-D weights
            params[name] = Param(values, name=name)
        return params

    def __getitem__(self, name: str) -> Param:
        return self.params[name]

    def param_list(self) -> list[Param]:
        return list(self.params.values())

    def clone_values(self) -> dict[str, np.ndarray]:
        return {name: p.value.data.copy() for name, p in self.params.items()}

    def restore_values(self, snapshot: dict[str, np.ndarray]) -> None:
        for name, values in snapshot.items():
            self.params[name].value.data[...] = values

    @classmethod
    def from_params(
        cls, cfg: ModelConfig, params: dict[str, Param], enc_dim: Optional[int] = None
    ) -> "PolicyParams":
        vocab_size = params["enc.word"].shape[0] if "enc.word" in params else 0
        return cls(cfg, vocab_size, rng=None, enc_dim=enc_dim, params=params)  # type: ignore[arg-type]


def high_policy(tape: Optional[Tape], pp: PolicyParams, state) -> Distribution:
    """Distribution over the four options given the current high-level state."""
    logits = linear(tape, pp["high.pi"], state)
    return Distribution(log_softmax(tape, logits))


def low_policy(
    tape: Optional[Tape],
    pp: PolicyParams,
    state,
    kind: str,
    sentiment: SentimentLabel,
) -> Distribution:
    """Distribution over B/I/O for one subtask, conditioned on the launching option."""
    if sentiment not in POLARITIES:
        raise NumericError(f"low_policy needs a polarity, got {sentiment}")
    if kind not in SUBTASK_KINDS:
        raise NumericError(f"unknown subtask kind {kind!r}")
    if pp.cfg.low_policy_shared:
        sent_row = pp["emb.sent"].value.data[1 + POLARITIES.index(sentiment)]
        feats = concat(tape, [state, sent_row])
        logits = linear(tape, pp[f"low.pi.{kind}"], feats)
    else:
        logits = linear(tape, pp[f"low.pi.{kind}.{sentiment.value}"], state)
    return Distribution(log_softmax(tape, logits))


def tag_of_index(index: int) -> BioTag:
    return TAG_ORDER[index]


def option_of_index(index: int) -> SentimentLabel:
    return OPTION_ORDER[index]
