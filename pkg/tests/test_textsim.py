"""BLEU, METEOR and the prior similarity, checked against independent scorers."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amfmn.data import fixture_entries
from amfmn.text import tokenize
from amfmn.textsim import bleu, meteor, prior_similarity
from oracles import bleu_oracle, meteor_oracle, prior_oracle

words = st.sampled_from("a the red port river two white grid square near on of".split())
sentences = st.lists(words, min_size=1, max_size=9)


class TestBleu:
    def test_identity(self):
        c = "a red roof near the port".split()
        assert bleu(c, [c]) == 1.0

    def test_disjoint(self):
        assert bleu("a b c".split(), ["x y z".split()]) == 0.0

    def test_short_candidate(self):
        got = bleu("the cat sat".split(), ["the cat sat down".split()])
        assert got == pytest.approx(math.exp(1 - 4 / 3), abs=1e-15)
        # frozen from the independent scorer
        assert got == pytest.approx(0.7165313105737893, abs=1e-15)

    def test_clipping(self):
        # four "the" may only claim the single "the" of the reference: p1 = 1/4,
        # smoothed higher orders 1/(3+1), 1/(2+1), 1/(1+1), no brevity penalty
        c = ["the"] * 4
        assert bleu(c, [["the", "cat"]]) == pytest.approx((1 / 96) ** 0.25, abs=1e-15)
        assert bleu(c, [["the", "cat"]]) == pytest.approx(bleu_oracle(c, [["the", "cat"]]), abs=1e-15)

    def test_empty_candidate(self):
        assert bleu([], [["a"]]) == 0.0

    @settings(max_examples=200)
    @given(sentences, st.lists(sentences, min_size=1, max_size=5))
    def test_matches_oracle(self, cand, refs):
        assert bleu(cand, refs) == pytest.approx(bleu_oracle(cand, refs), rel=1e-12, abs=1e-15)

    @given(sentences, st.lists(sentences, min_size=1, max_size=5))
    def test_unit_interval(self, cand, refs):
        assert 0.0 <= bleu(cand, refs) <= 1.0


class TestMeteor:
    def test_disjoint(self):
        assert meteor("a b".split(), "c d".split()) == 0.0

    def test_identical_four_tokens(self):
        s = "two white storage tanks".split()
        assert meteor(s, s) == pytest.approx(1 - 1 / 128, abs=1e-15)

    def test_single_shared_token(self):
        # P = 1/2, R = 1/3, F = 10/29, one chunk of one match halves it
        assert meteor("x a".split(), "a y z".split()) == pytest.approx(0.5 * 10 / 29, abs=1e-15)

    def test_reordering_costs_chunks(self):
        assert meteor("b a".split(), "a b".split()) < meteor("a b".split(), "a b".split())

    @settings(max_examples=200)
    @given(sentences, sentences)
    def test_matches_oracle(self, cand, ref):
        assert meteor(cand, ref) == pytest.approx(meteor_oracle(cand, ref), rel=1e-12, abs=1e-15)


class TestPriorSimilarity:
    def test_self_reference(self):
        refs = [tokenize(s) for s in ("a red square", "a red square near a river", "port", "two tanks", "grid")]
        assert prior_similarity(refs[1], refs) == 1.0

    def test_disjoint(self):
        assert prior_similarity("x y".split(), [["a"], ["b", "c"]]) == 0.0

    def test_fixture_pair(self):
        records = fixture_entries(7, 64, planted=False)
        text = tokenize(records[0][0].sentences[0])
        refs = [tokenize(s) for s in records[1][0].sentences]
        # frozen from the independent scorer
        assert prior_similarity(text, refs) == pytest.approx(0.36736043597249574, rel=1e-12)
        assert prior_similarity(text, refs) == pytest.approx(prior_oracle(text, refs), rel=1e-12)

    def test_weight_bounds(self):
        with pytest.raises(ValueError):
            prior_similarity(["a"], [["a"]], w_bleu=1.5)

    def test_needs_references(self):
        with pytest.raises(ValueError):
            prior_similarity(["a"], [])

    @settings(max_examples=100)
    @given(sentences, st.lists(sentences, min_size=2, max_size=5), st.randoms(use_true_random=False))
    def test_reference_order_irrelevant(self, text, refs, rnd):
        shuffled = list(refs)
        rnd.shuffle(shuffled)
        assert prior_similarity(text, refs) == prior_similarity(text, shuffled)

    @given(sentences, st.lists(sentences, min_size=1, max_size=5), st.floats(0, 1))
    def test_unit_interval(self, text, refs, w):
        assert 0.0 <= prior_similarity(text, refs, w) <= 1.0
