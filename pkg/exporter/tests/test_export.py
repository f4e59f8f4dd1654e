import os

import numpy as np
import pytest
import torch
from transformers import AutoModel, AutoTokenizer

from embed_export.cache import cache_key, read_cache
from embed_export.cli import main
from embed_export.corpus import CorpusSentence, GoldTriplet, gold_anchors, read_corpus
from embed_export.export import ExportJob, build_query, export, plan_records

from conftest import FIXTURE_SENTENCES, expected_record_count


@pytest.fixture(scope="module")
def exported(model_dir, corpus_path, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("cache") / "enc.cache")
    count = export(ExportJob(corpus_path=corpus_path, model_id=model_dir, output_path=out))
    return out, count


class TestPlanning:
    def test_record_counts_follow_gold_formula(self, exported):
        _, count = exported
        assert count == expected_record_count()

    def test_three_triplet_sentence_yields_seven_records(self):
        sentence = CorpusSentence(
            "s0",
            FIXTURE_SENTENCES[0]["tokens"],
            [
                GoldTriplet((1, 1), (3, 3), "positive"),
                GoldTriplet((14, 14), (8, 8), "positive"),
                GoldTriplet((14, 14), (11, 12), "negative"),
            ],
        )
        plan = plan_records(sentence, [])
        assert len(plan) == 7
        assert plan[0] == ("high", "none", -1)
        assert ("opinion", "negative", 12) in plan
        assert ("aspect", "negative", 12) in plan

    def test_zero_triplet_sentence_yields_one_record(self):
        plan = plan_records(CorpusSentence("x", ["nothing", "here"], []), [])
        assert plan == [("high", "none", -1)]

    def test_extra_anchor_list_adds_record_pairs(self):
        plan = plan_records(
            CorpusSentence("x", ["a", "b", "c"], []), [(1, "neutral"), (2, "positive")]
        )
        assert len(plan) == 1 + 2 * 2

    def test_anchor_collision_fallback(self):
        # two triplets share an opinion span: anchors must stay distinct
        sentence = CorpusSentence(
            "x",
            ["food", "and", "service", "were", "great", "."],
            [
                GoldTriplet((0, 0), (4, 4), "positive"),
                GoldTriplet((2, 2), (4, 4), "positive"),
            ],
        )
        anchors = [a for a, _ in gold_anchors(sentence)]
        assert len(anchors) == len(set(anchors)) == 2
        assert 4 in anchors

    def test_query_templates(self):
        assert "aspect spans and opinion spans" in build_query("high")
        q = build_query("opinion", "negative", "overpriced")
        assert "opinion span" in q and "negative" in q and "overpriced" in q
        q = build_query("aspect", "positive", "tasty")
        assert "aspect span" in q and "positive" in q


class TestCacheContents:
    def test_every_record_has_word_count_vectors(self, exported, corpus_path):
        path, _ = exported
        dim, _, records = read_cache(path)
        assert dim == 32
        by_id = {s["id"]: s for s in FIXTURE_SENTENCES}
        for key, (tokens, summary) in records.items():
            sentence_id = key.split("|")[0]
            assert tokens.shape == (len(by_id[sentence_id]["tokens"]), dim)
            assert summary.shape == (dim,)
            assert np.all(np.isfinite(tokens)) and np.all(np.isfinite(summary))

    def test_mean_pooling_matches_manual_subword_average(self, exported, model_dir):
        """Pooled word vectors are convex combinations: weights 1/k summing to 1."""
        path, _ = exported
        _, _, records = read_cache(path)
        words = FIXTURE_SENTENCES[0]["tokens"]
        key = cache_key("s0", "high", "none", -1)
        tokens, summary = records[key]

        tokenizer = AutoTokenizer.from_pretrained(model_dir)
        model = AutoModel.from_pretrained(model_dir)
        model.eval()
        from embed_export.export import HIGH_QUERY, split_query

        enc = tokenizer(split_query(HIGH_QUERY), words, is_split_into_words=True,
                        return_tensors="pt")
        with torch.no_grad():
            hidden = model(**enc).last_hidden_state[0].double().numpy()
        groups = {}
        for pos, (seq, word) in enumerate(zip(enc.sequence_ids(0), enc.word_ids(0))):
            if seq == 1 and word is not None:
                groups.setdefault(word, []).append(pos)

        split_words = [w for w, positions in groups.items() if len(positions) > 1]
        assert split_words, "fixture must exercise multi-subword words"
        for word, positions in groups.items():
            weights = np.full(len(positions), 1.0 / len(positions))
            assert abs(weights.sum() - 1.0) <= 1e-6
            manual = (hidden[positions] * weights[:, None]).sum(axis=0)
            assert np.max(np.abs(tokens[word] - manual)) <= 1e-6, word
        assert np.max(np.abs(summary - hidden[0])) <= 1e-6

    def test_first_pooling_takes_first_subword(self, model_dir, corpus_path, tmp_path):
        out = str(tmp_path / "first.cache")
        export(ExportJob(corpus_path=corpus_path, model_id=model_dir,
                         output_path=out, pooling="first"))
        _, _, records = read_cache(out)
        words = FIXTURE_SENTENCES[0]["tokens"]
        tokens, _ = records[cache_key("s0", "high", "none", -1)]

        tokenizer = AutoTokenizer.from_pretrained(model_dir)
        model = AutoModel.from_pretrained(model_dir)
        model.eval()
        from embed_export.export import HIGH_QUERY, split_query

        enc = tokenizer(split_query(HIGH_QUERY), words, is_split_into_words=True,
                        return_tensors="pt")
        with torch.no_grad():
            hidden = model(**enc).last_hidden_state[0].double().numpy()
        groups = {}
        for pos, (seq, word) in enumerate(zip(enc.sequence_ids(0), enc.word_ids(0))):
            if seq == 1 and word is not None:
                groups.setdefault(word, []).append(pos)
        for word, positions in groups.items():
            assert np.max(np.abs(tokens[word] - hidden[positions[0]])) <= 1e-6

    def test_reexport_is_byte_identical(self, model_dir, corpus_path, tmp_path):
        a = str(tmp_path / "a.cache")
        b = str(tmp_path / "b.cache")
        export(ExportJob(corpus_path=corpus_path, model_id=model_dir, output_path=a))
        export(ExportJob(corpus_path=corpus_path, model_id=model_dir, output_path=b))
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_anchors_file(self, model_dir, corpus_path, tmp_path):
        anchors = str(tmp_path / "anchors.txt")
        with open(anchors, "w") as fh:
            fh.write("s1 0 neutral\n")
            fh.write("s8 2 positive\n")
        out = str(tmp_path / "extra.cache")
        count = export(ExportJob(corpus_path=corpus_path, model_id=model_dir,
                                 output_path=out, anchors_path=anchors))
        assert count == expected_record_count() + 4
        _, _, records = read_cache(out)
        assert cache_key("s1", "opinion", "neutral", 0) in records
        assert cache_key("s8", "aspect", "positive", 2) in records


class TestPrimaryEngineIntegration:
    """The exported file is consumed by the engine through the cache format alone."""

    def test_cache_loads_in_engine_with_dim_consistency(self, exported):
        from hrlt.encoder import load_cache

        path, count = exported
        cache = load_cache(path)
        assert cache.dim == 32
        assert len(cache) == count
        enc = cache.lookup(cache_key("s0", "high", "none", -1))
        assert len(enc.token_vectors) == len(FIXTURE_SENTENCES[0]["tokens"])

    def test_engine_runs_cache_backed_episode(self, exported, corpus_path):
        from hrlt.config import ModelConfig
        from hrlt.data import read_jsonl
        from hrlt.env import MODE_TEACHER, run_episode
        from hrlt.trainer import build_model

        path, _ = exported
        sentences = read_jsonl(corpus_path)
        mcfg = ModelConfig(d_h=32, d_s=16, d_emb=8, d_pos=4, encoder=f"cache:{path}")
        model = build_model(mcfg, sentences, seed=0)
        for sentence in sentences:
            trace = run_episode(sentence, model.pp, model.encoder, mode=MODE_TEACHER).trace
            assert trace.high_final_reward == 1.0
            assert all(sub.final_reward == 1.0 for sub in trace.subtasks)


class TestCli:
    def test_cli_export(self, model_dir, corpus_path, tmp_path, capsys):
        out = str(tmp_path / "cli.cache")
        assert main(["--corpus", corpus_path, "--model", model_dir, "--out", out]) == 0
        assert f"wrote {expected_record_count()} records" in capsys.readouterr().out
        assert os.path.exists(out)

    def test_cli_missing_corpus(self, model_dir, tmp_path, capsys):
        code = main(["--corpus", str(tmp_path / "nope.jsonl"),
                     "--model", model_dir, "--out", str(tmp_path / "x.cache")])
        assert code == 1
        assert "nope.jsonl" in capsys.readouterr().err


def test_corpus_reader_hash_format(tmp_path):
    path = str(tmp_path / "corpus.txt")
    with open(path, "w") as fh:
        fh.write("It is great .####[([0], [2], 'POS')]\n")
    sentences = read_corpus(path)
    assert sentences[0].tokens == ["It", "is", "great", "."]
    assert sentences[0].gold[0].sentiment == "positive"
    assert sentences[0].gold[0].opinion == (2, 2)
