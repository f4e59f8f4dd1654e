import numpy as np
import pytest

from hrlt.core import OverlapClass, SentimentLabel, Span, Triplet, triplet_overlap_class
from hrlt.data import generate_synthetic_corpus
from hrlt.metrics import PRF, corpus_score, partitioned_report, score_triplets

from conftest import make_sentence, naive_score

POS, NEG, NEU = SentimentLabel.POSITIVE, SentimentLabel.NEGATIVE, SentimentLabel.NEUTRAL


def t(a0, a1, o0, o1, s):
    return Triplet(Span(a0, a1), Span(o0, o1), s)


def random_triplets(rng, n):
    out = []
    for _ in range(n):
        a = int(rng.integers(0, 4))
        o = int(rng.integers(0, 4))
        out.append(
            t(a, a + int(rng.integers(0, 2)), o, o + int(rng.integers(0, 2)),
              [POS, NEG, NEU][int(rng.integers(0, 3))])
        )
    return out


class TestScoreTriplets:
    def test_exact_match_is_perfect(self, review_sentence):
        s = score_triplets(review_sentence.gold, review_sentence.gold)
        assert (s.precision, s.recall, s.f1) == (1.0, 1.0, 1.0)

    def test_direct_formula(self):
        gold = [t(0, 0, 1, 1, POS), t(2, 2, 3, 3, NEG), t(4, 4, 5, 5, NEU)]
        pred = [gold[0], t(6, 6, 7, 7, POS)]
        s = score_triplets(pred, gold)
        assert s.precision == 0.5
        assert s.recall == pytest.approx(1 / 3)
        assert s.f1 == pytest.approx(0.4)

    def test_duplicates_collapse(self):
        gold = [t(0, 0, 1, 1, POS)]
        pred = [gold[0], gold[0], gold[0]]
        s = score_triplets(pred, gold)
        assert (s.tp, s.fp, s.fn) == (1, 0, 0)

    def test_sentiment_must_match(self):
        gold = [t(0, 0, 1, 1, POS)]
        pred = [t(0, 0, 1, 1, NEG)]
        s = score_triplets(pred, gold)
        assert (s.tp, s.fp, s.fn) == (0, 1, 1)

    def test_matches_naive_oracle_on_10k_instances(self):
        rng = np.random.default_rng(77)
        for _ in range(10_000):
            pred = random_triplets(rng, int(rng.integers(0, 5)))
            gold = random_triplets(rng, int(rng.integers(0, 5)))
            s = score_triplets(pred, gold)
            assert (s.tp, s.fp, s.fn) == naive_score(pred, gold)

    def test_precision_recall_symmetry(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            pred = random_triplets(rng, int(rng.integers(0, 4)))
            gold = random_triplets(rng, int(rng.integers(0, 4)))
            assert score_triplets(pred, gold).precision == score_triplets(gold, pred).recall

    def test_empty_vs_empty_is_one(self):
        s = score_triplets([], [])
        assert (s.precision, s.recall, s.f1) == (1.0, 1.0, 1.0)


class TestCorpusScore:
    def test_micro_equals_concatenated_bag(self):
        rng = np.random.default_rng(11)
        pairs = []
        for i in range(30):
            # distinct offsets keep sentences disjoint so concatenation is faithful
            off = 10 * i
            pred = [t(p.aspect.start + off, p.aspect.end + off,
                      p.opinion.start + off, p.opinion.end + off, p.sentiment)
                    for p in random_triplets(rng, int(rng.integers(0, 4)))]
            gold = [t(p.aspect.start + off, p.aspect.end + off,
                      p.opinion.start + off, p.opinion.end + off, p.sentiment)
                    for p in random_triplets(rng, int(rng.integers(0, 4)))]
            pairs.append((pred, gold))
        micro = corpus_score(pairs)
        bag = score_triplets(
            [p for pred, _ in pairs for p in pred],
            [g for _, gold in pairs for g in gold],
        )
        assert (micro.tp, micro.fp, micro.fn) == (bag.tp, bag.fp, bag.fn)

    def test_empty_sentences_contribute_nothing(self):
        pairs = [([], []), ([t(0, 0, 1, 1, POS)], [t(0, 0, 1, 1, POS)])]
        s = corpus_score(pairs)
        assert (s.tp, s.fp, s.fn) == (1, 0, 0)


class TestPRF:
    def test_f1_formula_invariant(self):
        s = PRF.from_counts(3, 1, 2)
        assert s.f1 == pytest.approx(2 * s.precision * s.recall / (s.precision + s.recall))

    def test_zero_precision_recall(self):
        s = PRF.from_counts(0, 5, 5)
        assert (s.precision, s.recall, s.f1) == (0.0, 0.0, 0.0)


class TestPartitionedReport:
    def _predict_all_correct(self, sentences):
        return [list(s.gold) for s in sentences]

    def test_single_only_corpus_has_na_multiple(self):
        sents = [
            make_sentence("a b c", [t(0, 0, 1, 1, POS)], sid="1"),
            make_sentence("d e f", [t(1, 1, 2, 2, NEG)], sid="2"),
        ]
        report = partitioned_report(sents, self._predict_all_correct(sents))
        assert report.row("multiple").score is None
        assert report.row("multiple").n_sentences == 0
        assert report.row("single").score.f1 == 1.0
        assert "n/a" in report.to_text()

    def test_partition_counts_recombine(self):
        corpus = generate_synthetic_corpus(5, 40)
        rng = np.random.default_rng(0)
        preds = []
        for s in corpus:
            kept = [g for g in s.gold if rng.random() > 0.3]
            extra = random_triplets(rng, 1) if rng.random() < 0.4 else []
            extra = [e for e in extra if e.aspect.within(len(s)) and e.opinion.within(len(s))]
            preds.append(kept + extra)
        report = partitioned_report(corpus, preds)
        overall = report.row("overall").score
        single = report.row("single").score
        multiple = report.row("multiple").score
        pooled = (
            (single.tp if single else 0) + (multiple.tp if multiple else 0),
            (single.fp if single else 0) + (multiple.fp if multiple else 0),
            (single.fn if single else 0) + (multiple.fn if multiple else 0),
        )
        assert pooled == (overall.tp, overall.fp, overall.fn)
        no_ov = report.row("no_overlap").score
        ov = report.row("overlap").score
        pooled2 = (
            (no_ov.tp if no_ov else 0) + (ov.tp if ov else 0),
            (no_ov.fp if no_ov else 0) + (ov.fp if ov else 0),
            (no_ov.fn if no_ov else 0) + (ov.fn if ov else 0),
        )
        assert pooled2 == (overall.tp, overall.fp, overall.fn)

    def test_constructed_per_partition_accuracy(self):
        single = make_sentence("a b c d", [t(0, 0, 1, 1, POS)], sid="s")
        multi = make_sentence(
            "a b c d e f",
            [t(0, 0, 1, 1, POS), t(2, 2, 3, 3, NEG)],
            sid="m",
        )
        # single predicted perfectly; multi predicted half right
        preds = [[t(0, 0, 1, 1, POS)], [t(0, 0, 1, 1, POS), t(4, 4, 5, 5, NEU)]]
        report = partitioned_report([single, multi], preds)
        assert report.row("single").score.f1 == 1.0
        m = report.row("multiple").score
        assert m.precision == 0.5 and m.recall == 0.5

    def test_overlap_partition_uses_core_classifier(self):
        shared = make_sentence(
            "a b c d e",
            [t(0, 0, 1, 1, POS), t(0, 0, 3, 3, NEG)],
            sid="ov",
        )
        assert triplet_overlap_class(shared.gold) is OverlapClass.OVERLAP
        report = partitioned_report([shared], [list(shared.gold)])
        assert report.row("overlap").n_sentences == 1
        assert report.row("no_overlap").n_sentences == 0

    def test_csv_and_json_shapes(self):
        sents = [make_sentence("a b c", [t(0, 0, 1, 1, POS)], sid="1")]
        report = partitioned_report(sents, [list(sents[0].gold)])
        csv = report.to_csv()
        assert csv.startswith("partition,")
        assert len(csv.strip().splitlines()) == 6
        payload = report.to_json()
        assert payload["single"]["f1"] == 1.0
        assert payload["multiple"] is None
