import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rankcot.errors import InputError
from rankcot.evaluation import (
    FixedEmbedder,
    HashingEmbedder,
    accuracy,
    hit_rate,
    lcs_length,
    length_stats,
    rouge_l,
    similarity,
    string_em,
)
from rankcot.types import RefinementOutput

CASE_STUDY_RANKCOT = ("Australia is an island continent located in the Southern Hemisphere, "
                      "in the region of Oceania.")
CASE_STUDY_SUMMARY = ("Southern Hemisphere, between the Indian Ocean and the Pacific Ocean.")
CASE_STUDY_COT = ("According to the passages, Australia is: 1. An island continent located in the Southern "
                  "Hemisphere. ... So, Australia's location in the world is in the Southern Hemisphere, "
                  "in the region of Oceania.")


def dp_lcs_table(a, b):
    """Textbook (len(a)+1) x (len(b)+1) LCS table."""
    t = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                t[i][j] = t[i - 1][j - 1] + 1
            else:
                t[i][j] = max(t[i - 1][j], t[i][j - 1])
    return t[len(a)][len(b)]


class TestAccuracy:
    def test_case_study_correct(self):
        assert accuracy(CASE_STUDY_RANKCOT, ["Oceania"])

    def test_case_study_incorrect(self):
        assert not accuracy(CASE_STUDY_SUMMARY, ["Oceania"])

    def test_verbatim(self):
        assert accuracy("Canberra", ["Canberra"])

    @given(st.text(max_size=30), st.text(min_size=1, max_size=10))
    def test_accuracy_equals_single_set_string_em(self, text, gold):
        from rankcot.text import normalize_answer
        if not normalize_answer(gold):
            return
        assert accuracy(text, [gold]) == (string_em(text, [[gold]]) == 1.0)


class TestRougeL:
    def test_identical(self):
        assert rouge_l("a b c", "a b c").f1 == 1.0

    def test_disjoint(self):
        assert rouge_l("x y", "a b").f1 == 0.0

    def test_worked_example(self):
        s = rouge_l("the cat on mat", "the cat sat on the mat")
        assert s.precision == 1.0
        assert s.recall == pytest.approx(2 / 3, abs=1e-15)
        assert s.f1 == pytest.approx(0.8, abs=1e-15)

    def test_empty(self):
        assert rouge_l("", "abc").f1 == 0.0
        assert rouge_l("abc", "").f1 == 0.0

    def test_multi_reference_takes_max(self):
        assert rouge_l("paris france", ["berlin", "paris france"]).f1 == 1.0

    def test_matches_dp_oracle(self):
        rng = random.Random(7)
        vocab = [f"t{i}" for i in range(6)]
        for _ in range(200):
            a = [rng.choice(vocab) for _ in range(rng.randint(0, 30))]
            b = [rng.choice(vocab) for _ in range(rng.randint(0, 30))]
            assert lcs_length(a, b) == dp_lcs_table(a, b)


class TestStringEm:
    def test_all_sets(self):
        assert string_em("The Eiffel Tower stands in Paris", [["Paris"], ["Eiffel Tower"]]) == 1.0

    def test_none(self):
        assert string_em("Berlin", [["Paris"], ["Eiffel Tower"]]) == 0.0

    def test_half(self):
        assert string_em("Paris", [["Paris"], ["Eiffel Tower"]]) == 0.5

    def test_requires_sets(self):
        with pytest.raises(ValueError):
            string_em("x", [])


class TestHitRate:
    gold = {"a": ["Oceania"], "b": ["Paris"]}

    def test_all(self):
        refs = [RefinementOutput("rankcot", "a", "in Oceania"), RefinementOutput("summary", "b", "paris!")]
        assert hit_rate(refs, self.gold) == 1.0

    def test_none(self):
        assert hit_rate([RefinementOutput("summary", "a", "Asia")], self.gold) == 0.0

    def test_case_study_cot(self):
        assert hit_rate([RefinementOutput("rankcot", "a", CASE_STUDY_COT)], self.gold) == 1.0

    def test_missing_gold(self):
        with pytest.raises(InputError, match="zz"):
            hit_rate([RefinementOutput("none", "zz", "x")], self.gold)


class TestLengthStats:
    def test_mean(self):
        assert length_stats({"m": [10, 30]}, "m")["mean_len"]["m"] == 20

    def test_ratio(self):
        out = length_stats({"rankcot": [50], "base": [100]}, "base")
        assert out["change_ratio"]["rankcot"] == 0.5
        assert out["change_ratio"]["base"] == 1.0

    def test_single_elements_exact_quotient(self):
        assert length_stats({"x": [7], "y": [3]}, "y")["change_ratio"]["x"] == 7 / 3

    def test_empty_group(self):
        with pytest.raises(InputError):
            length_stats({"x": [], "y": [3]}, "y")

    def test_missing_baseline(self):
        with pytest.raises(InputError):
            length_stats({"x": [1]}, "y")


class TestSimilarity:
    def test_identical_texts(self):
        assert similarity(["a cat sat", "dogs bark"], ["a cat sat", "dogs bark"], HashingEmbedder()) == pytest.approx(1.0)

    def test_orthogonal(self):
        emb = FixedEmbedder({"q": [1.0, 0.0], "r": [0.0, 1.0]})
        assert similarity(["q"], ["r"], emb) == 0.0

    def test_mean_of_pairs(self):
        emb = FixedEmbedder({"q": [1.0, 0.0], "same": [2.0, 0.0], "opp": [-1.0, 0.0]})
        assert similarity(["q", "q"], ["same", "opp"], emb) == 0.0

    def test_dimension_mismatch(self):
        class Bad:
            name = "bad"

            def __init__(self):
                self.calls = 0

            def embed(self, texts):
                self.calls += 1
                return np.ones((len(texts), 2 if self.calls == 1 else 3))

        with pytest.raises(InputError, match="dimension"):
            similarity(["a"], ["b"], Bad())

    def test_alignment_required(self):
        with pytest.raises(InputError):
            similarity(["a"], [], HashingEmbedder())

    def test_hashing_embedder_deterministic(self):
        a = HashingEmbedder(64).embed(["hello world"])
        b = HashingEmbedder(64).embed(["hello world"])
        assert np.array_equal(a, b)

    def test_related_text_scores_higher(self):
        emb = HashingEmbedder(512)
        q = "where is australia located"
        assert similarity([q], ["australia is located in oceania"], emb) > similarity([q], ["bananas are yellow"], emb)

    def test_http_embedder(self):
        import httpx
        from rankcot.evaluation import HttpEmbedder

        def handler(request):
            import json
            body = json.loads(request.content)
            return httpx.Response(200, json={"data": [
                {"index": i, "embedding": [1.0, float(i)]} for i in range(len(body["input"]))
            ]})

        emb = HttpEmbedder("http://emb.test", "bge", transport=httpx.MockTransport(handler))
        assert emb.embed(["a", "b"]).tolist() == [[1.0, 0.0], [1.0, 1.0]]
