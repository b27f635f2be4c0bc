"""Span enumeration, span vectors, {I,O} span classification and decoding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import numcore as nc
from .numcore import ParamStore, Tensor

# class index order of the two-way classifier; argmax ties resolve to O
CLASSES = ("O", "I")
O_INDEX, I_INDEX = 0, 1


@dataclass(frozen=True, order=True)
class SpanCandidate:
    start: int
    end: int

    @property
    def length(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True)
class SpanPrediction:
    span: SpanCandidate
    prob_i: float
    label: str


def span_count(token_count: int, max_span_len: int) -> int:
    top = min(max_span_len, token_count)
    return sum(token_count - l + 1 for l in range(1, top + 1))


def enumerate_spans(token_count: int, max_span_len: int) -> list[SpanCandidate]:
    if token_count < 1 or max_span_len < 1:
        raise ValueError("token_count and max_span_len must be >= 1")
    return [
        SpanCandidate(s, e)
        for s in range(token_count)
        for e in range(s, min(s + max_span_len, token_count))
    ]


def span_index_arrays(spans: Sequence[SpanCandidate]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    starts = np.fromiter((s.start for s in spans), dtype=np.intp, count=len(spans))
    ends = np.fromiter((s.end for s in spans), dtype=np.intp, count=len(spans))
    return starts, ends, ends - starts + 1


def init_span_params(params: ParamStore, fused_dim: int, max_span_len: int, len_dim: int) -> None:
    params.add("span.length_table", (max_span_len, len_dim), std=0.1)
    params.add("span.classifier.w", (2 * fused_dim + len_dim, 2), init="zeros")
    params.add("span.classifier.b", (1, 2), init="zeros")


def _length_rows(table: Tensor, lengths) -> np.ndarray:
    lengths = np.asarray(lengths, dtype=np.intp)
    if lengths.size and lengths.min() < 1:
        raise ValueError("span length must be >= 1")
    return np.minimum(lengths, table.shape[0]) - 1


def length_embedding_lookup(table: Tensor, length: int) -> Tensor:
    """Row ``length - 1``; lengths past the table clamp to the last row."""
    return nc.gather_rows(table, _length_rows(table, [length]))


def span_vectors(fused: Tensor, spans: Sequence[SpanCandidate], table: Tensor) -> Tensor:
    """Stack ``[fused[start] ; fused[end] ; length_row]`` for every span."""
    starts, ends, lengths = span_index_arrays(spans)
    m = fused.shape[0]
    if len(spans) and (starts.min() < 0 or ends.max() >= m or (ends < starts).any()):
        raise IndexError(f"span out of range for {m} tokens")
    return nc.concat_cols(
        [
            nc.gather_rows(fused, starts),
            nc.gather_rows(fused, ends),
            nc.gather_rows(table, _length_rows(table, lengths)),
        ]
    )


def span_representation(fused, span: SpanCandidate, table) -> np.ndarray:
    """Vector for one span, width ``2 * fused_width + len_dim``."""
    return span_vectors(nc.as_tensor(fused), [span], nc.as_tensor(table)).data[0]


def span_logits(vectors: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return nc.linear(vectors, w, b)


def classify_spans(vectors, spans: Sequence[SpanCandidate], w, b) -> list[SpanPrediction]:
    vectors, w, b = nc.as_tensor(vectors), nc.as_tensor(w), nc.as_tensor(b)
    if vectors.shape[1] != w.shape[0]:
        raise nc.DimensionError(f"span vectors have width {vectors.shape[1]}, classifier expects {w.shape[0]}")
    probs = nc.softmax_rows(span_logits(vectors, w, b)).data
    return predictions_from_probs(spans, probs)


def predictions_from_probs(spans: Sequence[SpanCandidate], probs: np.ndarray) -> list[SpanPrediction]:
    labels = probs.argmax(axis=1)
    return [
        SpanPrediction(span, float(p[I_INDEX]), CLASSES[lab])
        for span, p, lab in zip(spans, probs, labels)
    ]


def gold_runs(tags: Sequence[str]) -> list[SpanCandidate]:
    """Maximal contiguous runs of I tags."""
    runs = []
    start = None
    for i, t in enumerate(tags):
        if t == "I" and start is None:
            start = i
        elif t != "I" and start is not None:
            runs.append(SpanCandidate(start, i - 1))
            start = None
    if start is not None:
        runs.append(SpanCandidate(start, len(tags) - 1))
    return runs


def gold_span_labels(tags: Sequence[str], spans: Iterable[SpanCandidate], any_inside: bool = False) -> list[str]:
    """Label a span I iff it is exactly a maximal run of gold I tokens.

    With ``any_inside`` every span lying wholly inside gold I tokens is I.
    """
    if any_inside:
        inside = np.array([t == "I" for t in tags])
        return ["I" if inside[s.start : s.end + 1].all() else "O" for s in spans]
    runs = set(gold_runs(tags))
    return ["I" if s in runs else "O" for s in spans]


def decode_spans(predictions: Sequence[SpanPrediction], token_count: int) -> list[SpanCandidate]:
    """Greedy non-overlapping selection of I spans by descending confidence.

    Ties go to the earlier start, then the shorter span.
    """
    cands = sorted(
        (p for p in predictions if p.label == "I"),
        key=lambda p: (-p.prob_i, p.span.start, p.span.length),
    )
    taken = np.zeros(token_count, dtype=bool)
    accepted = []
    for p in cands:
        s, e = p.span.start, p.span.end
        if e >= token_count or s < 0:
            raise IndexError(f"span ({s}, {e}) out of range for {token_count} tokens")
        if not taken[s : e + 1].any():
            taken[s : e + 1] = True
            accepted.append(p.span)
    return accepted


def heuristic_decode(predictions: Sequence[SpanPrediction], token_count: int) -> list[str]:
    tags = ["O"] * token_count
    for span in decode_spans(predictions, token_count):
        for i in range(span.start, span.end + 1):
            tags[i] = "I"
    return tags
