"""String-similarity exemplar model tests."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from figforge import baselines as bl


def oracle_levenshtein(a, b):
    """Recursive memoized reference implementation."""
    from functools import lru_cache

    @lru_cache(maxsize=None)
    def rec(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(
            rec(i - 1, j) + 1,
            rec(i, j - 1) + 1,
            rec(i - 1, j - 1) + (a[i - 1] != b[j - 1]),
        )

    return rec(len(a), len(b))


class TestLevenshtein:
    def test_known_pairs(self):
        assert bl.levenshtein("kitten", "sitting") == 3
        assert bl.levenshtein("", "abc") == 3
        assert bl.levenshtein("abc", "abc") == 0

    def test_orientation_example_from_oracle(self):
        # the "180" vs "0" orientation distance, computed by the textbook DP
        d = oracle_levenshtein("180", "0")
        assert d == 2
        assert bl.levenshtein("180", "0") == d

    @settings(max_examples=120, deadline=None)
    @given(st.text(alphabet="abc", max_size=8), st.text(alphabet="abc", max_size=8))
    def test_matches_oracle(self, a, b):
        assert bl.levenshtein(a, b) == oracle_levenshtein(a, b)

    @settings(max_examples=80, deadline=None)
    @given(
        st.text(alphabet="ab", max_size=6),
        st.text(alphabet="ab", max_size=6),
        st.text(alphabet="ab", max_size=6),
    )
    def test_triangle_inequality(self, a, b, c):
        assert bl.levenshtein(a, c) <= bl.levenshtein(a, b) + bl.levenshtein(b, c)


class TestGcmDistance:
    def test_identical_strings_zero(self):
        w = bl.GcmWeights(2.0, 3.0, 4.0)
        assert bl.gcm_distance("(p1p2)+1+180", "(p1p2)+1+180", w) == 0.0

    def test_orientation_substring_only(self):
        # only substring 3 differs; d("180","0") = 2 per the DP oracle
        w = bl.GcmWeights(w1=5.0, w2=7.0, w3=3.0)
        d = bl.gcm_distance("(p1p2)+1+180", "(p1p2)+1+0", w)
        assert d == pytest.approx(3.0 * 2)

    def test_part_substring_primitive_level(self):
        # p1p2 vs p1p4 is one substitution at primitive-id granularity
        w = bl.GcmWeights(w1=1.0, w2=0.0, w3=0.0)
        assert bl.gcm_distance("(p1p2)+1+0", "(p1p4)+1+0", w) == pytest.approx(1.0)

    def test_symmetry(self):
        w = bl.GcmWeights(1.3, 0.7, 2.1)
        a, b = "(p1p2)+3+90", "(p2p2p4)+1.2:4+180"
        assert bl.gcm_distance(a, b, w) == pytest.approx(bl.gcm_distance(b, a, w))

    def test_format_error(self):
        with pytest.raises(bl.FormatError):
            bl.gcm_distance("p1p2+1+0", "(p1p2)+1+0", bl.GcmWeights())

    def test_negative_weights_rejected(self):
        with pytest.raises(bl.FormatError):
            bl.GcmWeights(-1.0, 0.0, 0.0)


class TestGcmClassify:
    def test_exemplar_scores_one(self):
        w = bl.GcmWeights(1.0, 1.0, 1.0)
        exemplars = ["(p1p2)+1+0"]
        items = ["(p1p2)+1+0", "(p1p2)+1+90", "(p1p4)+2+0", "(p2)++0"]
        # oracle: direct computation says the exemplar has max similarity
        sims = [bl.gcm_similarity(t, exemplars, w) for t in items]
        assert max(sims) == sims[0]
        assert bl.gcm_classify(items[0], exemplars, w, items) == pytest.approx(1.0)

    def test_all_equal_distances_all_one(self):
        w = bl.GcmWeights(0.0, 0.0, 0.0)
        exemplars = ["(p1p2)+1+0"]
        items = ["(p1p2)+1+90", "(p1p4)+2+0"]
        for t in items:
            assert bl.gcm_classify(t, exemplars, w, items) == pytest.approx(1.0)

    def test_monotone_in_distance(self):
        exemplars = ["(p1p2)+1+0"]
        items = ["(p1p2)+1+0", "(p1p2)+1+90", "(p1p2)+1+180"]
        w = bl.GcmWeights(1.0, 1.0, 1.0)
        s_near = bl.gcm_classify("(p1p2)+1+90", exemplars, w, items)
        w_heavier = bl.GcmWeights(1.0, 1.0, 5.0)
        s_far = bl.gcm_classify("(p1p2)+1+90", exemplars, w_heavier, items)
        assert s_far <= s_near


class TestGcmGenerative:
    def test_uniform_at_zero_weights(self, universe2):
        model = bl.GcmGenerative(universe2, ["(p2)++0"], bl.GcmWeights(0, 0, 0))
        p = model.probs()
        assert np.allclose(p, 1.0 / len(universe2), atol=1e-12)

    def test_normalization(self, universe2):
        exemplars = [universe2.tokens[0].string, universe2.tokens[10].string]
        model = bl.GcmGenerative(universe2, exemplars, bl.GcmWeights(1.0, 0.5, 0.25))
        assert math.fsum(model.probs()) == pytest.approx(1.0, abs=1e-9)

    def test_exemplars_get_top_probability_with_large_weights(self, universe2):
        exemplar = universe2.tokens[37].string
        model = bl.GcmGenerative(universe2, [exemplar], bl.GcmWeights(6.0, 6.0, 6.0))
        # oracle: argmax scan over the universe
        probs = model.probs()
        assert int(np.argmax(probs)) == 37
