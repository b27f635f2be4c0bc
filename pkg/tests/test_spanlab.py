import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mdfn import numcore as nc
from mdfn.numcore import ParamStore
from mdfn.spanlab import (
    SpanCandidate,
    SpanPrediction,
    classify_spans,
    decode_spans,
    enumerate_spans,
    gold_runs,
    gold_span_labels,
    heuristic_decode,
    length_embedding_lookup,
    span_count,
    span_representation,
    span_vectors,
)

S = SpanCandidate


def oracle_predictions(tags, max_span_len):
    spans = enumerate_spans(len(tags), max_span_len)
    gold = gold_span_labels(tags, spans)
    return [SpanPrediction(s, 1.0 if g == "I" else 0.0, g) for s, g in zip(spans, gold)]


def all_tag_sequences(max_len):
    for m in range(1, max_len + 1):
        for combo in itertools.product("IO", repeat=m):
            yield list(combo)


class TestEnumerate:
    def test_m3_l2(self):
        assert enumerate_spans(3, 2) == [S(0, 0), S(0, 1), S(1, 1), S(1, 2), S(2, 2)]

    def test_single_token(self):
        assert enumerate_spans(1, 4) == [S(0, 0)]

    def test_count_m5_l3(self):
        assert len(enumerate_spans(5, 3)) == 12

    def test_count_formula_grid(self):
        for m in range(1, 51):
            for l in range(1, 51):
                spans = enumerate_spans(m, l)
                assert len(spans) == span_count(m, l) == sum(m - k + 1 for k in range(1, min(l, m) + 1))
                assert spans == sorted(spans)
                assert all(0 <= s.start <= s.end < m and s.length <= l for s in spans)

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            enumerate_spans(0, 3)


class TestSpanRepresentation:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.fused = rng.standard_normal((5, 4))  # d = 2 -> fused width 2d = 4
        self.table = rng.standard_normal((8, 3))

    def test_width(self):
        assert span_representation(self.fused, S(1, 3), self.table).shape == (4 * 2 + 3,)

    def test_single_token_span(self):
        v = span_representation(self.fused, S(2, 2), self.table)
        np.testing.assert_array_equal(v[:4], v[4:8])

    def test_equal_lengths_share_length_segment(self):
        a = span_representation(self.fused, S(0, 1), self.table)
        b = span_representation(self.fused, S(3, 4), self.table)
        np.testing.assert_array_equal(a[8:], b[8:])
        np.testing.assert_array_equal(a[8:], self.table[1])

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            span_representation(self.fused, S(3, 5), self.table)


class TestLengthEmbedding:
    table = nc.as_tensor(np.arange(12.0).reshape(4, 3))

    def test_length_one_is_row_zero(self):
        np.testing.assert_array_equal(length_embedding_lookup(self.table, 1).data, [[0, 1, 2]])

    def test_clamp(self):
        np.testing.assert_array_equal(
            length_embedding_lookup(self.table, 4 + 5).data, length_embedding_lookup(self.table, 4).data
        )

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            length_embedding_lookup(self.table, 0)

    def test_gradient_hits_one_row(self):
        ps = ParamStore(seed=1)
        ps.add("table", (4, 3), std=1.0)
        w = nc.as_tensor(np.random.default_rng(2).standard_normal((3, 1)))

        def loss(p):
            return nc.mean(nc.gelu(nc.linear(length_embedding_lookup(p["table"], 3), w)))

        loss(ps).backward()
        touched = np.any(ps["table"].grad != 0, axis=1)
        assert list(touched) == [False, False, True, False]
        ps.zero_grad()
        assert max(nc.finite_diff_check(loss, ps).values()) < 1e-6


class TestClassify:
    def test_zero_weights_half(self):
        spans = enumerate_spans(3, 2)
        v = np.random.default_rng(0).standard_normal((len(spans), 6))
        preds = classify_spans(v, spans, np.zeros((6, 2)), np.zeros((1, 2)))
        assert all(p.prob_i == 0.5 for p in preds)
        # argmax ties go to O
        assert all(p.label == "O" for p in preds)

    def test_logit_gap_ten(self):
        preds = classify_spans(np.zeros((1, 1)), [S(0, 0)], np.zeros((1, 2)), np.array([[-5.0, 5.0]]))
        assert preds[0].prob_i == pytest.approx(1 / (1 + math.exp(-10)), abs=1e-15)
        assert preds[0].label == "I"

    def test_probabilities_sum(self):
        rng = np.random.default_rng(4)
        spans = enumerate_spans(6, 3)
        v = rng.standard_normal((len(spans), 5))
        w, b = rng.standard_normal((5, 2)), rng.standard_normal((1, 2))
        probs = nc.softmax_rows(nc.linear(nc.as_tensor(v), nc.as_tensor(w), nc.as_tensor(b))).data
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        for p, row in zip(classify_spans(v, spans, w, b), probs):
            assert p.prob_i == row[1]
            assert (p.label == "I") == (row[1] > row[0])

    def test_width_mismatch(self):
        with pytest.raises(nc.DimensionError):
            classify_spans(np.zeros((1, 3)), [S(0, 0)], np.zeros((4, 2)), np.zeros((1, 2)))

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients_through_span_vectors(self, seed):
        rng = np.random.default_rng(seed)
        ps = ParamStore(seed=seed)
        ps.add("fused", (5, 6), std=1.0)
        ps.add("table", (3, 4), std=1.0)
        ps.add("w", (16, 2))
        ps.add("b", (1, 2), std=0.5)
        spans = enumerate_spans(5, 3)
        gold = rng.integers(0, 2, size=len(spans))

        def loss(p):
            vec = span_vectors(p["fused"], spans, p["table"])
            return nc.cross_entropy(nc.linear(vec, p["w"], p["b"]), gold)

        assert max(nc.finite_diff_check(loss, ps).values()) < 1e-4


class TestGoldLabels:
    def test_maximal_runs(self):
        tags = ["I", "I", "O", "I"]
        spans = enumerate_spans(4, 2)
        labels = dict(zip(spans, gold_span_labels(tags, spans)))
        assert {s for s, l in labels.items() if l == "I"} == {S(0, 1), S(3, 3)}
        assert labels[S(0, 0)] == labels[S(1, 1)] == "O"

    def test_all_o(self):
        spans = enumerate_spans(5, 3)
        assert set(gold_span_labels(["O"] * 5, spans)) == {"O"}

    def test_all_i_m2(self):
        spans = enumerate_spans(2, 2)
        assert dict(zip(spans, gold_span_labels(["I", "I"], spans))) == {S(0, 0): "O", S(0, 1): "I", S(1, 1): "O"}

    def test_any_inside_variant(self):
        spans = enumerate_spans(2, 2)
        assert gold_span_labels(["I", "I"], spans, any_inside=True) == ["I", "I", "I"]


class TestDecode:
    def test_greedy_trace(self):
        preds = [SpanPrediction(S(0, 1), 0.9, "I"), SpanPrediction(S(1, 2), 0.8, "I")]
        assert decode_spans(preds, 3) == [S(0, 1)]
        assert heuristic_decode(preds, 3) == ["I", "I", "O"]

    def test_no_i(self):
        preds = [SpanPrediction(S(0, 0), 0.2, "O"), SpanPrediction(S(1, 1), 0.4, "O")]
        assert heuristic_decode(preds, 2) == ["O", "O"]

    def test_tie_breaks(self):
        preds = [
            SpanPrediction(S(1, 2), 0.7, "I"),
            SpanPrediction(S(0, 1), 0.7, "I"),
            SpanPrediction(S(0, 0), 0.7, "I"),
        ]
        # same confidence: earlier start first, then shorter
        assert decode_spans(preds, 3) == [S(0, 0), S(1, 2)]

    def test_oracle_round_trip_exhaustive(self):
        for tags in all_tag_sequences(8):
            assert heuristic_decode(oracle_predictions(tags, 8), len(tags)) == tags

    @given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7), st.floats(0, 1), st.booleans()), max_size=30))
    def test_validity(self, raw):
        m = 8
        preds = [SpanPrediction(S(min(a, b), max(a, b)), p, "I" if lab else "O") for a, b, p, lab in raw]
        accepted = decode_spans(preds, m)
        covered = np.zeros(m, dtype=int)
        for s in accepted:
            covered[s.start : s.end + 1] += 1
        assert covered.max(initial=0) <= 1
        tags = heuristic_decode(preds, m)
        assert len(tags) == m and set(tags) <= {"I", "O"}
        assert [t == "I" for t in tags] == list(covered == 1)

    @given(st.lists(st.sampled_from("IO"), min_size=1, max_size=10), st.integers(0, 2**31))
    def test_decode_relabel_fixed_point(self, tags, seed):
        rng = np.random.default_rng(seed)
        spans = enumerate_spans(len(tags), 8)
        probs = rng.random(len(spans))
        preds = [SpanPrediction(s, p, "I" if p > 0.5 else "O") for s, p in zip(spans, probs)]
        once = heuristic_decode(preds, len(tags))
        if max((r.length for r in gold_runs(once)), default=0) > 8:
            return
        again = heuristic_decode(oracle_predictions(once, 8), len(tags))
        assert again == once
