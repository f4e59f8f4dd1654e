"""Two-phase optimization: teacher-forced pre-training, then REINFORCE fine-tuning.

Pre-training minimizes the negative log-likelihood of gold options and gold
tags along forced trajectories. Fine-tuning samples several trajectories per
sentence, weights each decision's log-probability by its return minus a
baseline, and takes one clipped Adam step per minibatch. Model selection
tracks greedy-decoding dev F1 throughout.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import ModelConfig, TrainConfig, model_config_hash
from .core import EpisodeTrace, Sentence
from .encoder import Encoder, EncodingCache, TrainableEncoder, Vocab, load_cache
from .env import MODE_GREEDY, MODE_SAMPLE, MODE_TEACHER, Rollout, dump_traces, run_episode
from .metrics import PRF, corpus_score
from .numerics import (
    Param,
    Tape,
    adam_step,
    backward,
    clip_gradients,
    load_checkpoint,
    save_checkpoint,
    scale,
    weighted_sum,
)
from .policy import PolicyParams


@dataclass
class ReturnTable:
    """Per-decision returns: one per option, one list per launched subtask."""

    option_returns: list[float]
    subtask_returns: list[list[float]]


def _suffix_returns(rewards: Sequence[float], final: float, gamma: float) -> list[float]:
    out = [0.0] * len(rewards)
    running = final
    for k in range(len(rewards) - 1, -1, -1):
        running = rewards[k] + gamma * running
        out[k] = running
    return out


def compute_returns(trace: EpisodeTrace, gamma: float = 1.0) -> ReturnTable:
    """Suffix-sum returns with subtask totals credited to their launching step."""
    subtask_returns = []
    credited: dict[int, float] = {}
    for sub in trace.subtasks:
        returns = _suffix_returns(sub.rewards, sub.final_reward, gamma)
        subtask_returns.append(returns)
        total = returns[0] if returns else sub.final_reward
        credited[sub.anchor] = credited.get(sub.anchor, 0.0) + total
    rho = [r + credited.get(t, 0.0) for t, r in enumerate(trace.high_rewards)]
    option_returns = _suffix_returns(rho, trace.high_final_reward, gamma)
    return ReturnTable(option_returns, subtask_returns)


# ---------------------------------------------------------------------------
# Model assembly


@dataclass
class Model:
    """Everything a run needs: parameters, encoder facade, vocabulary."""

    pp: PolicyParams
    encoder: Encoder
    vocab: Optional[Vocab]
    cache: Optional[EncodingCache] = None


def build_model(
    mcfg: ModelConfig,
    train_sentences: Sequence[Sentence],
    seed: int,
    params: Optional[dict[str, Param]] = None,
    vocab: Optional[Vocab] = None,
) -> Model:
    """Construct parameters and encoder for either encoder mode."""
    cache = load_cache(mcfg.cache_path) if mcfg.cache_path is not None else None
    trainable_needed = cache is None or mcfg.cache_fallback
    if trainable_needed and vocab is None:
        vocab = Vocab.build(train_sentences)
    if cache is not None and mcfg.cache_fallback and cache.dim != mcfg.d_h:
        raise ValueError(
            f"cache dim {cache.dim} differs from model.d_h {mcfg.d_h}; "
            "fallback mode needs matching widths"
        )
    enc_dim = cache.dim if cache is not None else mcfg.d_h
    rng = np.random.default_rng(seed)
    if params is None:
        pp = PolicyParams(mcfg, len(vocab) if vocab else 0, rng, enc_dim=enc_dim)
    else:
        pp = PolicyParams.from_params(mcfg, params, enc_dim=enc_dim)
    trainable = TrainableEncoder(pp.params, vocab, mcfg) if trainable_needed else None
    encoder = Encoder(trainable=trainable, cache=cache, cache_fallback=mcfg.cache_fallback)
    return Model(pp, encoder, vocab, cache)


# ---------------------------------------------------------------------------
# Evaluation


def predict_sentences(
    sentences: Sequence[Sentence],
    model: Model,
    jobs: int = 1,
) -> list[EpisodeTrace]:
    """Greedy-decode every sentence with frozen parameters."""

    def one(sentence: Sentence) -> EpisodeTrace:
        return run_episode(
            sentence, model.pp, model.encoder, mode=MODE_GREEDY, use_gold=False
        ).trace

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, sentences))
    return [one(s) for s in sentences]


def evaluate(sentences: Sequence[Sentence], model: Model, jobs: int = 1) -> tuple[PRF, list[EpisodeTrace]]:
    traces = predict_sentences(sentences, model, jobs=jobs)
    score = corpus_score([(t.predicted, s.gold) for t, s in zip(traces, sentences)])
    return score, traces


def dump_traces_for(path: str, sentences: Sequence[Sentence], traces: Sequence[EpisodeTrace]) -> None:
    dump_traces(path, zip(sentences, traces))


# ---------------------------------------------------------------------------
# Pre-training (supervised NLL on forced trajectories)


def _batches(order: np.ndarray, size: int) -> list[np.ndarray]:
    return [order[i:i + size] for i in range(0, len(order), size)]


def pretrain_epoch(
    sentences: Sequence[Sentence],
    model: Model,
    tcfg: TrainConfig,
    rng: np.random.Generator,
    lr: Optional[float] = None,
) -> float:
    """One epoch of teacher-forced NLL minimization; returns mean sentence NLL.

    Sentences with an empty gold set are legal: every forced option is none.
    """
    lr = tcfg.pretrain_lr if lr is None else lr
    order = rng.permutation(len(sentences))
    total_nll = 0.0
    for batch in _batches(order, tcfg.batch_size):
        tape = Tape()
        nodes = []
        for idx in batch:
            rollout = run_episode(
                sentences[int(idx)], model.pp, model.encoder,
                mode=MODE_TEACHER, rng=rng, tape=tape,
                training=True, dropout_rate=tcfg.dropout,
                lambdas=tcfg.lambdas, beta=tcfg.beta,
            )
            nodes.extend(rollout.option_nodes)
            for sub_nodes in rollout.subtask_nodes:
                nodes.extend(sub_nodes)
            total_nll += -_trace_log_prob(rollout)
        loss = weighted_sum(tape, nodes, [-1.0 / len(batch)] * len(nodes))
        backward(tape, loss)
        clip_gradients(model.pp.param_list(), tcfg.clip_norm)
        adam_step(model.pp.param_list(), lr)
    return total_nll / len(sentences)


def _trace_log_prob(rollout: Rollout) -> float:
    total = sum(lp for _, _, lp in rollout.trace.options)
    for sub in rollout.trace.subtasks:
        total += sum(lp for _, lp in sub.actions)
    return total


# ---------------------------------------------------------------------------
# REINFORCE fine-tuning


def _slot_advantages(
    rollouts: Sequence[Rollout],
    tables: Sequence[ReturnTable],
    baseline: str,
) -> list[tuple[list[float], list[list[float]]]]:
    """Per-decision advantages; the mean baseline averages matched decision slots.

    Option decisions align across trajectories by position. Subtask decisions
    align by (anchor, kind, step); slots sampled by a single trajectory keep a
    zero advantage under the mean baseline.
    """
    if baseline == "none":
        return [(t.option_returns, t.subtask_returns) for t in tables]

    option_slots: dict[int, list[float]] = {}
    sub_slots: dict[tuple, list[float]] = {}
    for rollout, table in zip(rollouts, tables):
        for t, g in enumerate(table.option_returns):
            option_slots.setdefault(t, []).append(g)
        for sub, returns in zip(rollout.trace.subtasks, table.subtask_returns):
            for k, g in enumerate(returns):
                sub_slots.setdefault((sub.anchor, sub.kind, k), []).append(g)

    def advantage(g: float, slot: list[float]) -> float:
        if min(slot) == max(slot):
            return 0.0  # identical trajectories cancel exactly
        return g - sum(slot) / len(slot)

    out = []
    for rollout, table in zip(rollouts, tables):
        opt_adv = [advantage(g, option_slots[t]) for t, g in enumerate(table.option_returns)]
        sub_adv = []
        for sub, returns in zip(rollout.trace.subtasks, table.subtask_returns):
            sub_adv.append(
                [advantage(g, sub_slots[(sub.anchor, sub.kind, k)]) for k, g in enumerate(returns)]
            )
        out.append((opt_adv, sub_adv))
    return out


def reinforce_step(
    batch: Sequence[Sentence],
    model: Model,
    tcfg: TrainConfig,
    rng: np.random.Generator,
) -> dict[str, float]:
    """Sample trajectories for one minibatch and take one clipped Adam step."""
    tape = Tape()
    terms = []
    weights = []
    reward_sum = 0.0
    n_traj = 0
    for sentence in batch:
        memo: dict = {}  # one tape, one parameter state: encodings shareable
        rollouts = [
            run_episode(
                sentence, model.pp, model.encoder,
                mode=MODE_SAMPLE, rng=rng, tape=tape,
                training=True, dropout_rate=tcfg.dropout,
                lambdas=tcfg.lambdas, beta=tcfg.beta,
                encoding_memo=memo,
            )
            for _ in range(tcfg.trajectories_per_example)
        ]
        tables = [compute_returns(r.trace, tcfg.gamma) for r in rollouts]
        advantages = _slot_advantages(rollouts, tables, tcfg.baseline)
        for rollout, (opt_adv, sub_adv) in zip(rollouts, advantages):
            reward_sum += rollout.trace.total_reward()
            n_traj += 1
            for node, adv in zip(rollout.option_nodes, opt_adv):
                terms.append(node)
                weights.append(adv)
            for nodes, advs in zip(rollout.subtask_nodes, sub_adv):
                for node, adv in zip(nodes, advs):
                    terms.append(node)
                    weights.append(adv)
    surrogate = weighted_sum(tape, terms, weights)
    loss = scale(tape, surrogate, -1.0 / len(batch))
    loss_value = loss.item()
    backward(tape, loss)
    clip_gradients(model.pp.param_list(), tcfg.clip_norm)
    adam_step(model.pp.param_list(), tcfg.finetune_lr)
    return {"loss": loss_value, "mean_reward": reward_sum / max(n_traj, 1)}


# ---------------------------------------------------------------------------
# Full schedule


@dataclass
class TrainResult:
    best_dev_f1: float
    best_checkpoint: str
    pretrain_checkpoint: Optional[str]
    metrics_path: str
    rows: list[dict] = field(default_factory=list)


def _metric_row(phase: str, epoch: int, loss, mean_reward, dev: PRF, wallclock: float) -> dict:
    return {
        "phase": phase,
        "epoch": epoch,
        "loss": "" if loss is None else f"{loss:.10g}",
        "mean_reward": "" if mean_reward is None else f"{mean_reward:.10g}",
        "dev_p": f"{dev.precision:.10g}",
        "dev_r": f"{dev.recall:.10g}",
        "dev_f1": f"{dev.f1:.10g}",
        "wallclock": f"{wallclock:.3f}",
    }


METRIC_COLUMNS = ("phase", "epoch", "loss", "mean_reward", "dev_p", "dev_r", "dev_f1", "wallclock")


def write_metrics(path: str, rows: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(METRIC_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(str(row[c]) for c in METRIC_COLUMNS) + "\n")


def train(
    train_set: Sequence[Sentence],
    dev_set: Sequence[Sentence],
    mcfg: ModelConfig,
    tcfg: TrainConfig,
    out_dir: str,
    no_rl: bool = False,
    init_params: Optional[dict[str, Param]] = None,
    init_vocab: Optional[Vocab] = None,
    skip_pretrain: bool = False,
    jobs: int = 1,
) -> TrainResult:
    """Run the two-phase schedule and keep the best dev-F1 checkpoint.

    no_rl replaces the fine-tuning phase with more supervised epochs at the
    fine-tuning learning rate. skip_pretrain resumes straight into phase two
    (used with init_params from a saved checkpoint).
    """
    os.makedirs(out_dir, exist_ok=True)
    model = build_model(mcfg, train_set, tcfg.seed, params=init_params, vocab=init_vocab)
    rng = np.random.default_rng(tcfg.seed)
    confhash = model_config_hash(mcfg)

    rows: list[dict] = []
    start = time.perf_counter()
    dev_score, _ = evaluate(dev_set, model, jobs=jobs)
    rows.append(_metric_row("init", 0, None, None, dev_score, time.perf_counter() - start))

    best_f1 = dev_score.f1
    best_values = model.pp.clone_values()

    pretrain_path: Optional[str] = None
    if not skip_pretrain:
        for epoch in range(1, tcfg.pretrain_epochs + 1):
            t0 = time.perf_counter()
            nll = pretrain_epoch(train_set, model, tcfg, rng)
            dev_score, _ = evaluate(dev_set, model, jobs=jobs)
            rows.append(_metric_row("pretrain", epoch, nll, None, dev_score, time.perf_counter() - t0))
            if dev_score.f1 > best_f1:
                best_f1 = dev_score.f1
                best_values = model.pp.clone_values()
        model.pp.restore_values(best_values)
        pretrain_path = os.path.join(out_dir, "pretrain_best.ckpt")
        save_checkpoint(pretrain_path, model.pp.params, tcfg.seed, confhash)
        if model.vocab is not None:
            model.vocab.save(os.path.join(out_dir, "vocab.json"))

    phase = "supervised" if no_rl else "finetune"
    for epoch in range(1, tcfg.finetune_epochs + 1):
        t0 = time.perf_counter()
        if no_rl:
            loss = pretrain_epoch(train_set, model, tcfg, rng, lr=tcfg.finetune_lr)
            mean_reward = None
        else:
            order = rng.permutation(len(train_set))
            losses = []
            mean_rewards = []
            for batch_idx in _batches(order, tcfg.batch_size):
                metrics = reinforce_step([train_set[int(i)] for i in batch_idx], model, tcfg, rng)
                losses.append(metrics["loss"])
                mean_rewards.append(metrics["mean_reward"])
            loss = float(np.mean(losses))
            mean_reward = float(np.mean(mean_rewards))
        dev_score, _ = evaluate(dev_set, model, jobs=jobs)
        rows.append(_metric_row(phase, epoch, loss, mean_reward, dev_score, time.perf_counter() - t0))
        if dev_score.f1 > best_f1:
            best_f1 = dev_score.f1
            best_values = model.pp.clone_values()

    model.pp.restore_values(best_values)
    best_path = os.path.join(out_dir, "best.ckpt")
    save_checkpoint(best_path, model.pp.params, tcfg.seed, confhash)
    if model.vocab is not None:
        model.vocab.save(os.path.join(out_dir, "vocab.json"))
    metrics_path = os.path.join(out_dir, "metrics.csv")
    write_metrics(metrics_path, rows)
    return TrainResult(best_f1, best_path, pretrain_path, metrics_path, rows)


def load_model(
    checkpoint_path: str,
    mcfg: ModelConfig,
    vocab_path: Optional[str] = None,
) -> tuple[Model, int, bytes]:
    """Rebuild a Model from a checkpoint plus its sibling vocabulary file."""
    params, seed, confhash = load_checkpoint(checkpoint_path)
    vocab = None
    if "enc.word" in params:
        if vocab_path is None:
            vocab_path = os.path.join(os.path.dirname(checkpoint_path) or ".", "vocab.json")
        vocab = Vocab.load(vocab_path)
        if len(vocab) != params["enc.word"].shape[0]:
            raise ValueError(
                f"vocab size {len(vocab)} does not match embedding rows "
                f"{params['enc.word'].shape[0]}"
            )
    model = build_model(mcfg, [], seed, params=params, vocab=vocab)
    return model, seed, confhash
