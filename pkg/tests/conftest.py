import re

import numpy as np
import pytest

from hrlt.config import ModelConfig, TrainConfig
from hrlt.core import Sentence, SentimentLabel, Span, Triplet
from hrlt.data import heuristic_pos
from hrlt.numerics import Tape, backward
from hrlt.trainer import Model, build_model


def make_sentence(text: str, triplets=(), sid: str = "s0") -> Sentence:
    tokens = text.split()
    return Sentence(sid, tokens, heuristic_pos(tokens), list(triplets))


@pytest.fixture
def review_sentence() -> Sentence:
    """A 17-token review with three triplets, two sharing an aspect span."""
    text = "The soup was tasty ; we had a lovely ( but rather overpriced ) dinner there ."
    return make_sentence(
        text,
        [
            Triplet(Span(1, 1), Span(3, 3), SentimentLabel.POSITIVE),
            Triplet(Span(14, 14), Span(8, 8), SentimentLabel.POSITIVE),
            Triplet(Span(14, 14), Span(11, 12), SentimentLabel.NEGATIVE),
        ],
        sid="review-1",
    )


def tiny_model_config(**kwargs) -> ModelConfig:
    defaults = dict(d_h=8, d_s=6, d_emb=4, d_pos=3)
    defaults.update(kwargs)
    return ModelConfig(**defaults)


def tiny_train_config(**kwargs) -> TrainConfig:
    defaults = dict(
        pretrain_epochs=2,
        pretrain_lr=1e-2,
        finetune_epochs=1,
        finetune_lr=1e-3,
        trajectories_per_example=2,
        batch_size=4,
        dropout=0.0,
        seed=0,
    )
    defaults.update(kwargs)
    return TrainConfig(**defaults)


def tiny_model(sentences, seed: int = 0, **cfg_kwargs) -> Model:
    return build_model(tiny_model_config(**cfg_kwargs), sentences, seed=seed)


def zero_params(model: Model) -> None:
    for p in model.pp.param_list():
        p.value.data[...] = 0.0


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


# ---------------------------------------------------------------------------
# Shared independent oracles


def regex_decode(tags):
    """BIO decode oracle: a sequence is valid iff it matches O* B I* O*."""
    text = "".join(t.value for t in tags)
    if not re.fullmatch(r"O*BI*O*", text):
        return None
    start = text.index("B")
    end = start
    while end + 1 < len(text) and text[end + 1] == "I":
        end += 1
    return Span(start, end)


def naive_score(predicted, gold):
    """Triplet-scoring oracle: explicit duplicate removal and pairwise scans."""
    pred, ref = [], []
    for p in predicted:
        if p not in pred:
            pred.append(p)
    for g in gold:
        if g not in ref:
            ref.append(g)
    tp = sum(1 for p in pred if any(p == g for g in ref))
    fp = len(pred) - tp
    fn = sum(1 for g in ref if not any(g == p for p in pred))
    return tp, fp, fn


FD_STEP = 1e-5
FD_REL_TOL = 1e-4


def central_difference(f, arr, i, h=FD_STEP):
    """Gradient oracle: symmetric finite difference on one parameter entry."""
    flat = arr.ravel()
    keep = flat[i]
    flat[i] = keep + h
    up = f()
    flat[i] = keep - h
    down = f()
    flat[i] = keep
    return (up - down) / (2.0 * h)


def assert_grads_match(f, params, tol=FD_REL_TOL):
    """Check every analytic Param gradient against central differences.

    f(tape) must rebuild the graph on the given tape and return the scalar
    loss node; f(None) evaluates the loss without recording.
    """
    tape = Tape()
    loss = f(tape)
    backward(tape, loss)
    analytic = {p.name: p.grad.data.copy() for p in params}
    for p in params:
        p.zero_grad()
    for p in params:
        for i in range(p.value.data.size):
            fd = central_difference(lambda: float(f(None).data), p.value.data, i)
            an = analytic[p.name].ravel()[i]
            denom = max(abs(an), abs(fd), 1e-6)
            assert abs(an - fd) / denom <= tol, (p.name, i, an, fd)
