import numpy as np
import pytest

from hrlt.core import SentimentLabel
from hrlt.numerics import NumericError, Tensor
from hrlt.policy import Distribution, PolicyParams, high_policy, low_policy

from conftest import make_sentence, tiny_model, tiny_model_config, zero_params

POS, NEG = SentimentLabel.POSITIVE, SentimentLabel.NEGATIVE


def _model():
    return tiny_model([make_sentence("the soup is hot")], seed=3)


class TestHighPolicy:
    def test_zero_weights_uniform(self):
        model = _model()
        zero_params(model)
        dist = high_policy(None, model.pp, np.ones(model.pp.cfg.d_s))
        assert np.allclose(dist.probs, 0.25, atol=1e-15)

    def test_argmax_matches_logits(self, rng):
        model = _model()
        state = rng.normal(size=model.pp.cfg.d_s)
        dist = high_policy(None, model.pp, state)
        logits = model.pp["high.pi"].value.data @ state
        assert dist.argmax() == int(np.argmax(logits))

    def test_hand_softmax_on_fixed_weights(self):
        cfg = tiny_model_config(d_s=2)
        model = tiny_model([make_sentence("a b")], seed=0, d_s=2)
        w = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 0.5]])
        model.pp["high.pi"].value.data[...] = w
        state = np.array([0.3, -0.7])
        dist = high_policy(None, model.pp, state)
        logits = w @ state
        expected = np.exp(logits - logits.max())
        expected /= expected.sum()
        assert np.allclose(dist.probs, expected, atol=1e-12)

    def test_distribution_valid(self, rng):
        model = _model()
        for _ in range(50):
            dist = high_policy(None, model.pp, rng.normal(size=model.pp.cfg.d_s) * 5)
            assert np.all(dist.probs >= 0)
            assert abs(dist.probs.sum() - 1.0) <= 1e-12
            assert np.all(np.isfinite(dist.log_probs.data))


class TestLowPolicy:
    def test_zero_weights_uniform(self):
        model = _model()
        zero_params(model)
        dist = low_policy(None, model.pp, np.ones(model.pp.cfg.d_s), "opinion", POS)
        assert np.allclose(dist.probs, 1.0 / 3.0, atol=1e-15)

    def test_rejects_none_sentiment(self):
        model = _model()
        with pytest.raises(NumericError):
            low_policy(None, model.pp, np.ones(model.pp.cfg.d_s), "opinion", SentimentLabel.NONE)

    def test_rejects_unknown_kind(self):
        model = _model()
        with pytest.raises(NumericError):
            low_policy(None, model.pp, np.ones(model.pp.cfg.d_s), "verb", POS)

    def test_option_conditioning_changes_distribution(self, rng):
        model = _model()
        state = rng.normal(size=model.pp.cfg.d_s)
        d_pos = low_policy(None, model.pp, state, "opinion", POS)
        d_neg = low_policy(None, model.pp, state, "opinion", NEG)
        assert not np.allclose(d_pos.probs, d_neg.probs)

    def test_kind_conditioning_changes_distribution(self, rng):
        model = _model()
        state = rng.normal(size=model.pp.cfg.d_s)
        d_op = low_policy(None, model.pp, state, "opinion", POS)
        d_as = low_policy(None, model.pp, state, "aspect", POS)
        assert not np.allclose(d_op.probs, d_as.probs)

    def test_shared_matrix_variant(self, rng):
        model = tiny_model([make_sentence("a b")], seed=0, low_policy_shared=True)
        assert "low.pi.opinion" in model.pp.params
        assert "low.pi.opinion.positive" not in model.pp.params
        state = rng.normal(size=model.pp.cfg.d_s)
        d_pos = low_policy(None, model.pp, state, "opinion", POS)
        d_neg = low_policy(None, model.pp, state, "opinion", NEG)
        assert abs(d_pos.probs.sum() - 1.0) <= 1e-12
        assert not np.allclose(d_pos.probs, d_neg.probs)


class TestSampling:
    def test_scaled_logits_sample_argmax(self, rng):
        dist = Distribution(Tensor(np.log(np.array([0.1, 0.8, 0.1])) * 1000))
        # renormalize: Distribution expects log-probs; huge scaling makes one mass point
        counts = [dist.sample(rng) for _ in range(200)]
        assert all(c == dist.argmax() for c in counts)

    def test_sample_replay(self):
        model = _model()
        state = np.ones(model.pp.cfg.d_s)
        dist = high_policy(None, model.pp, state)
        a = [dist.sample(np.random.default_rng(7)) for _ in range(20)]
        b = [dist.sample(np.random.default_rng(7)) for _ in range(20)]
        assert a == b

    def test_log_prob_of_sampled_action_finite(self, rng):
        model = _model()
        for _ in range(20):
            dist = high_policy(None, model.pp, rng.normal(size=model.pp.cfg.d_s) * 50)
            idx = dist.sample(rng)
            assert np.isfinite(dist.log_probs.data[idx])


class TestInit:
    def test_init_distributions(self):
        cfg = tiny_model_config()
        pp = PolicyParams(cfg, vocab_size=10, rng=np.random.default_rng(0))
        assert np.all(np.abs(pp["emb.sent"].value.data) <= 0.1)
        assert np.all(pp["high.state.b"].value.data == 0.0)
        w = pp["high.state.W"].value.data
        fan_in = w.shape[1]
        fan_out = w.shape[0]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        assert np.all(np.abs(w) <= limit + 1e-12)

    def test_param_names_stable(self):
        cfg = tiny_model_config()
        pp = PolicyParams(cfg, vocab_size=10, rng=np.random.default_rng(0))
        for name in (
            "enc.word", "emb.pos", "emb.sent", "emb.tag", "high.state.W",
            "high.pi", "ctx.W", "low.init.W", "low.state.W",
            "low.pi.opinion.positive", "low.pi.aspect.neutral",
        ):
            assert name in pp.params, name
