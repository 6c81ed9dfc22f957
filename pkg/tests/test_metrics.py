import numpy as np
import pytest

from specsaliency import metrics
from specsaliency.engine import SaliencyBundle
from specsaliency.errors import DomainError
from specsaliency.metrics import (
    EvalCurve,
    auc,
    bleu,
    corpus_wer,
    curve_to_csv,
    curve_xs,
    deletion_curve,
    levenshtein,
    size_curve,
    tokenize_13a,
    wer,
)
from specsaliency.oracle import ToyOracle
from tests.test_oracle import band_spec


def bundle_with_sentence(utt_id, sentence):
    from specsaliency.oracle import BOS_ID, EOS_ID, TokenSequence

    return SaliencyBundle(
        utt_id=utt_id,
        tokens=TokenSequence(ids=[BOS_ID, EOS_ID], surface=["<s>", "</s>"]),
        spec_maps=[np.zeros_like(sentence)],
        token_maps=[np.zeros(1)],
        sentence=np.asarray(sentence, dtype=float),
        stage="minmaxed",
    )


class TestWer:
    def test_identity(self):
        assert wer("a b c".split(), "a b c".split()) == 0.0

    def test_one_substitution(self):
        assert wer("a x c".split(), "a b c".split()) == pytest.approx(33.33, abs=0.01)

    def test_cap_at_100(self):
        hyp = ["w"] * 50
        ref = ["a", "b", "c"]
        assert wer(hyp, ref) == 100.0

    def test_empty_reference(self):
        with pytest.raises(DomainError):
            wer(["a"], [])

    def test_levenshtein_cases(self):
        assert levenshtein([], ["a"]) == 1
        assert levenshtein(["a", "b"], ["b", "a"]) == 2
        assert levenshtein("kitten", "sitting") == 3

    def test_corpus_wer_caps_per_utterance(self):
        hyps = [["w"] * 50, "a b c".split()]
        refs = [["a", "b", "c"], "a b c".split()]
        # capped edits: min(50-ish, 3) = 3 over 6 reference words
        assert corpus_wer(hyps, refs) == pytest.approx(50.0)


class TestTokenize13a:
    def test_punctuation_split(self):
        assert tokenize_13a("Hello, world!") == ["Hello", ",", "world", "!"]

    def test_decimal_numbers_kept(self):
        assert tokenize_13a("pi is 3.14") == ["pi", "is", "3.14"]

    def test_trailing_period_split(self):
        assert tokenize_13a("the end.") == ["the", "end", "."]


class TestBleu:
    def test_identity_is_100(self):
        corpus = ["the cat sat on the mat", "a quick brown fox"]
        assert bleu(corpus, corpus) == pytest.approx(100.0)

    def test_no_shared_fourgram_is_zero(self):
        hyp = ["a b c d e"]
        ref = ["a b c x e f"]
        assert bleu(hyp, ref) == 0.0

    def test_hand_case_short_hypothesis(self):
        # precisions 3/3, 2/2, 1/1; no 4-grams in a 3-word corpus (vacuous);
        # brevity penalty exp(1 - 4/3)
        got = bleu(["the cat sat"], ["the cat sat down"])
        want = 100.0 * np.exp(1.0 - 4.0 / 3.0)
        assert got == pytest.approx(want, abs=1e-6)
        assert got == pytest.approx(71.65313, abs=1e-4)

    def test_empty_corpus(self):
        with pytest.raises(DomainError):
            bleu([], [])

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            bleu(["a"], ["a", "b"])


class TestAuc:
    def test_triangle(self):
        assert auc([(0.0, 0.0), (1.0, 1.0)]) == pytest.approx(0.5)

    def test_constant(self):
        xs = np.linspace(0, 1, 11)
        assert auc([(x, 4.2) for x in xs]) == pytest.approx(4.2)

    def test_hat(self):
        assert auc([(0.0, 0.0), (0.5, 1.0), (1.0, 0.0)]) == pytest.approx(0.5)

    def test_unsorted_rejected(self):
        with pytest.raises(DomainError):
            auc([(0.0, 0.0), (0.5, 1.0), (0.5, 0.0)])

    def test_too_few_points(self):
        with pytest.raises(DomainError):
            auc([(0.0, 1.0)])


class TestSizeCurve:
    def test_all_zero_map(self):
        curve = size_curve([bundle_with_sentence("u", np.zeros((10, 10)))])
        assert all(y == 0.0 for _, y in curve.points)
        assert curve.auc == pytest.approx(0.0)

    def test_uniform_values(self):
        vals = np.linspace(0.0, 1.0, 10000).reshape(100, 100)
        curve = size_curve([bundle_with_sentence("u", vals)])
        for t, y in curve.points:
            assert y == pytest.approx(1.0 - t, abs=0.01)
        assert curve.auc == pytest.approx(0.5, abs=0.01)

    def test_binary_map(self):
        vals = np.zeros(1000)
        vals[:300] = 1.0
        curve = size_curve([bundle_with_sentence("u", vals.reshape(20, 50))])
        for t, y in curve.points:
            if t < 1.0:
                assert y == pytest.approx(0.3)
            else:
                assert y == 0.0
        assert curve.auc == pytest.approx(0.3, abs=0.01)

    def test_monotone_non_increasing(self):
        rng = np.random.default_rng(0)
        curve = size_curve(
            [bundle_with_sentence("u", rng.random((30, 30)))]
        )
        ys = [y for _, y in curve.points]
        assert all(b <= a for a, b in zip(ys, ys[1:]))

    def test_21_points(self):
        curve = size_curve([bundle_with_sentence("u", np.zeros((5, 5)))])
        assert len(curve.points) == 21
        assert [x for x, _ in curve.points] == curve_xs()


class TestDeletionCurve:
    def setup_corpus(self, letters_list, seed=0):
        orc = ToyOracle()
        corpus = []
        bundles = {}
        rng = np.random.default_rng(seed)
        for i, letters in enumerate(letters_list):
            x = band_spec(letters)
            y = orc.decode(x)
            ref = " ".join(y.words())
            utt_id = f"u{i}"
            corpus.append((utt_id, x, ref))
            bundles[utt_id] = bundle_with_sentence(
                utt_id, rng.random(x.frames.shape)
            )
        return orc, corpus, bundles

    def test_endpoints(self):
        orc, corpus, bundles = self.setup_corpus([["A", "B"], ["C", "D"]])
        curve = deletion_curve(orc, corpus, bundles, task_metric="wer")
        assert len(curve.points) == 21
        # x = 0: unperturbed decode matches the gold references exactly
        assert curve.points[0] == (0.0, 0.0)
        # x = 1: the fully zeroed input
        zero_hyps = []
        refs = []
        for utt_id, x, ref in corpus:
            zeroed = type(x)(frames=np.zeros_like(x.frames))
            zero_hyps.append(orc.decode(zeroed).words())
            refs.append(ref.split())
        want = corpus_wer(zero_hyps, refs)
        assert curve.points[-1][1] == pytest.approx(want)

    def test_missing_bundle_raises(self):
        orc, corpus, bundles = self.setup_corpus([["A", "B"]])
        del bundles["u0"]
        with pytest.raises(DomainError):
            deletion_curve(orc, corpus, bundles)

    def test_tie_break_is_deterministic(self):
        orc, corpus, _ = self.setup_corpus([["A", "B"]])
        x = corpus[0][1]
        flat = np.zeros(x.frames.size)
        order = metrics.saliency_order(flat.reshape(x.frames.shape))
        assert np.array_equal(order, np.arange(x.frames.size))


class TestCurveOutputs:
    def test_csv(self):
        curve = EvalCurve(points=[(0.0, 1.0), (1.0, 2.0)], auc=1.5)
        text = curve_to_csv(curve)
        assert text.splitlines()[0] == "x,y"
        assert text.splitlines()[1] == "0.0,1.0"

    def test_json(self):
        curve = EvalCurve(points=[(0.0, 1.0), (1.0, 2.0)], auc=1.5)
        blob = metrics.curve_to_json(curve, "size")
        import json

        data = json.loads(blob)
        assert data["metric"] == "size"
        assert data["auc"] == 1.5
        assert data["points"] == [[0.0, 1.0], [1.0, 2.0]]
