"""The hierarchical decision process: states, rewards, gold alignment, rollouts.

An episode scans the sentence left to right. Each position emits an option
(a sentiment label or none); a non-none option launches an opinion tagging
subtask over the whole sentence, then an aspect tagging subtask initialized
from the opinion subtask's final state. Decoded span pairs become predicted
triplets and the scan resumes.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import (
    BioTag,
    EpisodeTrace,
    OPTION_INDEX,
    POLARITIES,
    Sentence,
    SentimentLabel,
    Span,
    SubtaskTrace,
    TAG_INDEX,
    Triplet,
    bio_labels_for,
    decode_span,
)
from .encoder import Encoder, QueryKind
from .numerics import (
    ACTIVATIONS,
    InputLike,
    Tape,
    Tensor,
    affine_cat,
    dropout,
    embedding_lookup,
    linear,
)
from .policy import (
    Distribution,
    PolicyParams,
    SUBTASK_KINDS,
    high_policy,
    low_policy,
    option_of_index,
    tag_of_index,
)

MODE_SAMPLE = "sample"
MODE_GREEDY = "greedy"
MODE_TEACHER = "teacher_forced"
MODE_SCRIPTED = "scripted"  # replay an explicit decision sequence (analysis tooling)
MODES = (MODE_SAMPLE, MODE_GREEDY, MODE_TEACHER, MODE_SCRIPTED)

WRONG_TAG_REWARD = -0.5
MALFORMED_SPAN_PENALTY = -1.0


# ---------------------------------------------------------------------------
# Gold alignment


class GoldAlignment:
    """Maps anchor positions to gold triplets and tracks per-episode consumption.

    The preferred anchor of a triplet is the last (or first, per config) token
    of its opinion span. When two triplets prefer the same position, the later
    one falls back to the nearest free position, staying inside its opinion
    span when possible, so every triplet keeps a distinct anchor whenever the
    sentence is long enough.
    """

    def __init__(self, sentence: Sentence, anchor_mode: str = "opinion_end") -> None:
        self.sentence = sentence
        self.triplets = sentence.gold
        self.consumed = [False] * len(self.triplets)
        self.anchor_of: dict[int, int] = {}
        taken: set[int] = set()
        for idx, tri in enumerate(self.triplets):
            preferred = tri.opinion.end if anchor_mode == "opinion_end" else tri.opinion.start
            in_span = sorted(tri.opinion.positions(), key=lambda p: (abs(p - preferred), p))
            everywhere = sorted(range(len(sentence)), key=lambda p: (abs(p - preferred), p))
            for pos in in_span + [p for p in everywhere if p not in in_span]:
                if pos not in taken:
                    taken.add(pos)
                    self.anchor_of[pos] = idx
                    break

    def reset(self) -> None:
        for i in range(len(self.consumed)):
            self.consumed[i] = False

    def has_unconsumed(self, sentiment: SentimentLabel) -> bool:
        return any(
            not self.consumed[i] and t.sentiment is sentiment
            for i, t in enumerate(self.triplets)
        )

    def align(self, anchor: int, sentiment: SentimentLabel) -> Optional[Triplet]:
        """Consume and return the nearest matching unconsumed triplet, if any.

        Nearest by opinion-span end; ties go to the leftmost span.
        """
        best: Optional[int] = None
        best_key: Optional[tuple] = None
        for i, t in enumerate(self.triplets):
            if self.consumed[i] or t.sentiment is not sentiment:
                continue
            key = (abs(t.opinion.end - anchor), t.opinion.end, t.opinion.start, i)
            if best_key is None or key < best_key:
                best, best_key = i, key
        if best is None:
            return None
        self.consumed[best] = True
        return self.triplets[best]

    def forced_option(self, position: int) -> SentimentLabel:
        idx = self.anchor_of.get(position)
        return self.triplets[idx].sentiment if idx is not None else SentimentLabel.NONE

    def take_forced(self, position: int) -> Triplet:
        idx = self.anchor_of[position]
        self.consumed[idx] = True
        return self.triplets[idx]

    def gold_sentiments(self) -> list[SentimentLabel]:
        return [t.sentiment for t in self.triplets]


def align_gold(
    alignment: GoldAlignment, anchor: int, sentiment: SentimentLabel
) -> Optional[Triplet]:
    if sentiment not in POLARITIES:
        raise ValueError(f"align_gold needs a polarity, got {sentiment}")
    return alignment.align(anchor, sentiment)


# ---------------------------------------------------------------------------
# Rewards


def high_reward(option: SentimentLabel, alignment: GoldAlignment, position: int) -> float:
    """+1 when the option's class is still open in the gold set, 0 for none, else -1."""
    if option is SentimentLabel.NONE:
        return 0.0
    return 1.0 if alignment.has_unconsumed(option) else -1.0


def high_final_reward(
    predicted: Iterable[SentimentLabel],
    gold: Iterable[SentimentLabel],
    beta: float = 1.0,
) -> float:
    """F_beta between the predicted and gold sentiment-class multisets.

    Both empty counts as a perfect 1.0 (correctly extracting nothing); an
    empty prediction against nonempty gold is 0.0.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    pred = Counter(predicted)
    ref = Counter(gold)
    n_pred = sum(pred.values())
    n_gold = sum(ref.values())
    if n_pred == 0 and n_gold == 0:
        return 1.0
    tp = sum(min(count, ref[label]) for label, count in pred.items())
    if tp == 0:
        return 0.0
    precision = tp / n_pred
    recall = tp / n_gold
    b2 = beta * beta
    return (1.0 + b2) * precision * recall / (b2 * precision + recall)


def low_reward(action: BioTag, gold_tag: BioTag, lambdas: Sequence[float]) -> float:
    """Per-step tagging reward: the gold tag's lambda on a hit, -0.5 otherwise.

    lambdas are (lambda_B, lambda_I, lambda_O), all >= 0.
    """
    lam_b, lam_i, lam_o = lambdas
    if lam_b < 0 or lam_i < 0 or lam_o < 0:
        raise ValueError("tag reward weights must be >= 0")
    if action is not gold_tag:
        return WRONG_TAG_REWARD
    return {BioTag.B: lam_b, BioTag.I: lam_i, BioTag.O: lam_o}[gold_tag]


def low_final_reward(
    actions: Sequence[BioTag], gold: Sequence[BioTag], decoded: Optional[Span]
) -> float:
    """+1 for a perfect tag sequence, -1 otherwise, and -1 more when malformed."""
    if len(actions) != len(gold):
        raise ValueError("action and gold sequences differ in length")
    reward = 1.0 if list(actions) == list(gold) else -1.0
    if decoded is None:
        reward += MALFORMED_SPAN_PENALTY
    return reward


def gate_low_rewards(option_correct: bool, rewards: Sequence[float]) -> list[float]:
    """Zero out a subtask's reward stream when its launching option was wrong."""
    if option_correct:
        return list(rewards)
    return [0.0] * len(rewards)


# ---------------------------------------------------------------------------
# State assembly


def high_state_step(
    tape: Optional[Tape],
    pp: PolicyParams,
    h_t: InputLike,
    p_t: InputLike,
    v_c: InputLike,
    prev_state: InputLike,
    training: bool = False,
    dropout_rate: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    pre = affine_cat(tape, pp["high.state.W"], [h_t, p_t, v_c, prev_state], pp["high.state.b"])
    state = ACTIVATIONS[pp.cfg.activation](tape, pre)
    return dropout(tape, state, dropout_rate, rng=rng, training=training)


def context_vector(tape: Optional[Tape], pp: PolicyParams, anchor_state: InputLike) -> Tensor:
    return linear(tape, pp["ctx.W"], anchor_state)


def opinion_init_state(tape: Optional[Tape], pp: PolicyParams, anchor_state: InputLike) -> Tensor:
    return linear(tape, pp["low.init.W"], anchor_state)


def low_state_step(
    tape: Optional[Tape],
    pp: PolicyParams,
    h_t: InputLike,
    p_t: InputLike,
    v_tag: InputLike,
    prev_state: InputLike,
    v_ctx: InputLike,
    h_summary: InputLike,
    training: bool = False,
    dropout_rate: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    pre = affine_cat(
        tape,
        pp["low.state.W"],
        [h_t, p_t, v_tag, prev_state, v_ctx, h_summary],
        pp["low.state.b"],
    )
    state = ACTIVATIONS[pp.cfg.activation](tape, pre)
    return dropout(tape, state, dropout_rate, rng=rng, training=training)


# ---------------------------------------------------------------------------
# Episode rollout


@dataclass
class Rollout:
    """An EpisodeTrace plus (when taped) the log-probability graph nodes."""

    trace: EpisodeTrace
    option_nodes: Optional[list[Tensor]] = None
    subtask_nodes: Optional[list[list[Tensor]]] = None


@dataclass
class EpisodeScript:
    """An explicit decision sequence for replaying one exact trajectory."""

    options: Sequence[int]  # option index per position
    actions: Sequence[Sequence[int]]  # tag indices per launched subtask, launch order


def _choose(dist: Distribution, mode: str, forced: Optional[int], rng) -> int:
    if mode in (MODE_TEACHER, MODE_SCRIPTED):
        return forced  # type: ignore[return-value]
    if mode == MODE_GREEDY:
        return dist.argmax()
    return dist.sample(rng)


def _memo_encode(tape, encoder, sentence, query, memo):
    if memo is None:
        return encoder.encode(tape, sentence, query)
    key = query.cache_key(sentence.id)
    enc = memo.get(key)
    if enc is None:
        enc = encoder.encode(tape, sentence, query)
        memo[key] = enc
    return enc


def run_episode(
    sentence: Sentence,
    pp: PolicyParams,
    encoder: Encoder,
    mode: str = MODE_GREEDY,
    rng: Optional[np.random.Generator] = None,
    tape: Optional[Tape] = None,
    training: bool = False,
    dropout_rate: float = 0.0,
    lambdas: Sequence[float] = (1.0, 0.7, 0.1),
    beta: float = 1.0,
    use_gold: bool = True,
    script: Optional[EpisodeScript] = None,
    encoding_memo: Optional[dict] = None,
) -> Rollout:
    """Run one full hierarchical episode over a sentence.

    With use_gold, rewards follow the gold alignment (teacher forcing requires
    it); without, every reward is zero and the rollout is inference-only.
    Identical seeds and parameters give identical rollouts.

    encoding_memo shares encoder subgraphs between episodes recorded on the
    same tape (the encoder forward never depends on sampled decisions); it
    must not outlive the tape or a parameter update.
    """
    if mode not in MODES:
        raise ValueError(f"unknown rollout mode {mode!r}")
    if mode == MODE_SAMPLE and rng is None:
        raise ValueError("sample mode needs an RNG")
    if mode == MODE_SCRIPTED and script is None:
        raise ValueError("scripted mode needs a script")
    alignment = GoldAlignment(sentence, pp.cfg.anchor_mode) if use_gold else None
    if mode == MODE_TEACHER and alignment is None:
        raise ValueError("teacher forcing needs gold triplets")

    length = len(sentence)
    enc_high = _memo_encode(tape, encoder, sentence, QueryKind.high_level(), encoding_memo)
    if encoding_memo is not None and "pos_embs" in encoding_memo:
        pos_embs = encoding_memo["pos_embs"]
    else:
        pos_embs = [
            embedding_lookup(tape, pp["emb.pos"], sentence.pos_tags[t]) for t in range(length)
        ]
        if encoding_memo is not None:
            encoding_memo["pos_embs"] = pos_embs

    options: list[tuple[int, SentimentLabel, float]] = []
    option_nodes: list[Tensor] = []
    high_rewards: list[float] = []
    subtasks: list[SubtaskTrace] = []
    subtask_nodes: list[list[Tensor]] = []
    predicted: list[Triplet] = []

    prev_state: InputLike = np.zeros(pp.cfg.d_s)
    latest_option = SentimentLabel.NONE
    script_cursor = 0

    for t in range(length):
        v_c = embedding_lookup(tape, pp["emb.sent"], OPTION_INDEX[latest_option])
        state = high_state_step(
            tape, pp, enc_high.token_vectors[t], pos_embs[t], v_c, prev_state,
            training=training, dropout_rate=dropout_rate, rng=rng,
        )
        dist = high_policy(tape, pp, state)
        if mode == MODE_TEACHER:
            forced: Optional[int] = OPTION_INDEX[alignment.forced_option(t)]
        elif mode == MODE_SCRIPTED:
            forced = script.options[t]
        else:
            forced = None
        choice = _choose(dist, mode, forced, rng)
        option = option_of_index(choice)
        options.append((t, option, float(dist.log_probs.data[choice])))
        if tape is not None:
            option_nodes.append(dist.log_prob(tape, choice))

        high_rewards.append(high_reward(option, alignment, t) if alignment else 0.0)

        if option is not SentimentLabel.NONE:
            if mode == MODE_TEACHER:
                aligned: Optional[Triplet] = alignment.take_forced(t)
            elif alignment is not None:
                aligned = alignment.align(t, option)
            else:
                aligned = None
            option_correct = aligned is not None

            v_ctx = context_vector(tape, pp, state)
            sub_state: InputLike = opinion_init_state(tape, pp, state)
            decoded_spans: dict[str, Optional[Span]] = {}
            for kind in SUBTASK_KINDS:
                gold_span = None
                if aligned is not None:
                    gold_span = aligned.opinion if kind == "opinion" else aligned.aspect
                scripted_tags = None
                if mode == MODE_SCRIPTED:
                    scripted_tags = script.actions[script_cursor]
                    script_cursor += 1
                sub_trace, nodes, sub_state = _run_subtask(
                    sentence, pp, encoder, kind, t, option, sub_state, v_ctx,
                    pos_embs, mode, rng, tape, training, dropout_rate,
                    gold_span, lambdas, option_correct, scripted_tags,
                    encoding_memo,
                )
                subtasks.append(sub_trace)
                if tape is not None:
                    subtask_nodes.append(nodes)
                decoded_spans[kind] = sub_trace.decoded

            if decoded_spans["opinion"] is not None and decoded_spans["aspect"] is not None:
                triplet = Triplet(
                    aspect=decoded_spans["aspect"],
                    opinion=decoded_spans["opinion"],
                    sentiment=option,
                )
                if triplet not in predicted:
                    predicted.append(triplet)
            latest_option = option
        prev_state = state

    if alignment is not None:
        emitted = [opt for _, opt, _ in options if opt is not SentimentLabel.NONE]
        final = high_final_reward(emitted, alignment.gold_sentiments(), beta)
    else:
        final = 0.0

    trace = EpisodeTrace(
        options=tuple(options),
        subtasks=tuple(subtasks),
        high_rewards=tuple(high_rewards),
        high_final_reward=final,
        predicted=tuple(predicted),
    )
    return Rollout(
        trace,
        option_nodes if tape is not None else None,
        subtask_nodes if tape is not None else None,
    )


def _run_subtask(
    sentence: Sentence,
    pp: PolicyParams,
    encoder: Encoder,
    kind: str,
    anchor: int,
    sentiment: SentimentLabel,
    init_state: InputLike,
    v_ctx: InputLike,
    pos_embs: list[Tensor],
    mode: str,
    rng,
    tape: Optional[Tape],
    training: bool,
    dropout_rate: float,
    gold_span: Optional[Span],
    lambdas: Sequence[float],
    option_correct: bool,
    scripted_tags: Optional[Sequence[int]] = None,
    encoding_memo: Optional[dict] = None,
) -> tuple[SubtaskTrace, list[Tensor], Tensor]:
    length = len(sentence)
    query = (
        QueryKind.opinion_for(sentiment, anchor)
        if kind == "opinion"
        else QueryKind.aspect_for(sentiment, anchor)
    )
    enc = _memo_encode(tape, encoder, sentence, query, encoding_memo)
    gold_tags = bio_labels_for(gold_span, length) if gold_span is not None else None

    actions: list[tuple[BioTag, float]] = []
    nodes: list[Tensor] = []
    rewards: list[float] = []
    prev_state = init_state
    prev_tag_row = 3  # learned before-first-tag row
    state = None
    for k in range(length):
        v_tag = embedding_lookup(tape, pp["emb.tag"], prev_tag_row)
        state = low_state_step(
            tape, pp, enc.token_vectors[k], pos_embs[k], v_tag, prev_state, v_ctx, enc.summary,
            training=training, dropout_rate=dropout_rate, rng=rng,
        )
        dist = low_policy(tape, pp, state, kind, sentiment)
        forced = None
        if mode == MODE_TEACHER:
            if gold_tags is None:
                raise ValueError("teacher forcing a subtask without an aligned gold span")
            forced = TAG_INDEX[gold_tags[k]]
        elif mode == MODE_SCRIPTED:
            forced = scripted_tags[k]
        choice = _choose(dist, mode, forced, rng)
        tag = tag_of_index(choice)
        actions.append((tag, float(dist.log_probs.data[choice])))
        if tape is not None:
            nodes.append(dist.log_prob(tape, choice))
        rewards.append(low_reward(tag, gold_tags[k], lambdas) if gold_tags is not None else 0.0)
        prev_state = state
        prev_tag_row = choice

    tag_seq = [tag for tag, _ in actions]
    decoded = decode_span(tag_seq)
    final = low_final_reward(tag_seq, gold_tags, decoded) if gold_tags is not None else 0.0

    gated = gate_low_rewards(option_correct, rewards)
    gated_final = final if option_correct else 0.0

    trace = SubtaskTrace(
        kind=kind,
        anchor=anchor,
        sentiment=sentiment,
        actions=tuple(actions),
        rewards=tuple(gated),
        final_reward=gated_final,
        decoded=decoded,
    )
    return trace, nodes, state


# ---------------------------------------------------------------------------
# Trace dumps (debugging aid)


def trace_to_dict(sentence: Sentence, trace: EpisodeTrace) -> dict:
    return {
        "id": sentence.id,
        "tokens": list(sentence.tokens),
        "options": [
            {"t": t, "option": opt.value, "log_prob": lp} for t, opt, lp in trace.options
        ],
        "subtasks": [
            {
                "kind": sub.kind,
                "anchor": sub.anchor,
                "sentiment": sub.sentiment.value,
                "tags": [tag.value for tag, _ in sub.actions],
                "log_probs": [lp for _, lp in sub.actions],
                "rewards": list(sub.rewards),
                "final_reward": sub.final_reward,
                "decoded": [sub.decoded.start, sub.decoded.end] if sub.decoded else None,
            }
            for sub in trace.subtasks
        ],
        "high_rewards": list(trace.high_rewards),
        "high_final_reward": trace.high_final_reward,
        "predicted": [
            {
                "aspect": [p.aspect.start, p.aspect.end],
                "opinion": [p.opinion.start, p.opinion.end],
                "sentiment": p.sentiment.value,
            }
            for p in trace.predicted
        ],
    }


def dump_traces(path: str, items: Iterable[tuple[Sentence, EpisodeTrace]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sentence, trace in items:
            fh.write(json.dumps(trace_to_dict(sentence, trace), ensure_ascii=False))
            fh.write("\n")
