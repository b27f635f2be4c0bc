"""Model assembly, training loop, evaluation and checkpoints."""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numcore as nc
from .corpus import Utterance
from .encoders import ToyEmbeddingProvider, provider_from_description, read_embedding_file, write_embedding_file
from .mmi import CmeConfig, init_mmi_params, mmi_forward
from .numcore import AdamState, NumericalError, ParamStore, Tensor
from .spanlab import (
    I_INDEX,
    enumerate_spans,
    gold_span_labels,
    heuristic_decode,
    init_span_params,
    predictions_from_probs,
    span_logits,
    span_vectors,
)

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-5
    d: int = 16
    heads: int = 2
    layers: int = 1
    max_span_len: int = 8
    len_dim: int = 100
    seed: int = 0
    precision: str = "float64"
    pos_weight: float = 1.0
    text_only: bool = False
    gold_any_inside: bool = False
    early_stop_f1: float | None = None
    max_steps: int | None = None

    def __post_init__(self):
        for name in ("epochs", "batch_size", "d", "heads", "layers", "max_span_len", "len_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr < 0 or self.pos_weight <= 0:
            raise ValueError("lr must be >= 0 and pos_weight > 0")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, not {self.precision!r}")

    @property
    def cme(self) -> CmeConfig:
        return CmeConfig(d=self.d, heads=self.heads, layers=self.layers)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


class Model:
    """Parameters plus the forward pass from (T, A) to span probabilities."""

    def __init__(self, config: TrainConfig, params: ParamStore | None = None):
        self.config = config
        if params is None:
            params = ParamStore(config.seed, dtype=config.precision)
            init_mmi_params(params, config.cme, gated=not config.text_only)
            init_span_params(params, 2 * config.d, config.max_span_len, config.len_dim)
        self.params = params

    def span_logits(self, T, A, spans) -> Tensor:
        dtype = self.params.dtype
        T = Tensor(np.asarray(T, dtype=dtype))
        A = Tensor(np.asarray(A, dtype=dtype))
        out = mmi_forward(T, A, self.params, self.config.cme, text_only=self.config.text_only)
        vecs = span_vectors(out.fused, spans, self.params["span.length_table"])
        return span_logits(vecs, self.params["span.classifier.w"], self.params["span.classifier.b"])

    def loss(self, T, A, tags: Sequence[str]) -> Tensor:
        spans = enumerate_spans(len(tags), self.config.max_span_len)
        gold = gold_span_labels(tags, spans, self.config.gold_any_inside)
        target = [I_INDEX if g == "I" else 0 for g in gold]
        weights = None
        if self.config.pos_weight != 1.0:
            weights = [self.config.pos_weight if t == I_INDEX else 1.0 for t in target]
        return nc.cross_entropy(self.span_logits(T, A, spans), target, weights)

    def predict_tags(self, T, A) -> list[str]:
        m = np.asarray(T).shape[0]
        spans = enumerate_spans(m, self.config.max_span_len)
        with nc.no_grad():
            logits = self.span_logits(T, A, spans)
            probs = nc.softmax_rows(logits).data
        return heuristic_decode(predictions_from_probs(spans, probs), m)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    predictions: list[list[str]] = field(default_factory=list, repr=False)

    def record(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "tp": self.tp, "fp": self.fp, "fn": self.fn}

    def table(self) -> str:
        return (
            f"{'P':>7} {'R':>7} {'F1':>7} {'TP':>6} {'FP':>6} {'FN':>6}\n"
            f"{self.precision:7.2f} {self.recall:7.2f} {self.f1:7.2f} {self.tp:6d} {self.fp:6d} {self.fn:6d}"
        )


def f1_from_pr(precision: float, recall: float) -> float:
    return 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)


def evaluate_tags(
    gold: Sequence[Sequence[str]], pred: Sequence[Sequence[str]], ids: Sequence[str] | None = None
) -> EvalReport:
    """Token-level precision/recall/F1 of the I class, in percent.

    With no I tokens in either gold or prediction every score is 100; if only
    one denominator is empty, that score is 0.
    """
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold utterances but {len(pred)} predicted")
    tp = fp = fn = 0
    for k, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            name = ids[k] if ids is not None else f"#{k}"
            raise ValueError(f"utterance {name}: {len(g)} gold tags but {len(p)} predicted")
        for gt, pt in zip(g, p):
            if pt == "I":
                if gt == "I":
                    tp += 1
                else:
                    fp += 1
            elif gt == "I":
                fn += 1
    if tp == fp == fn == 0:
        P = R = F = 100.0
    else:
        P = 100.0 * tp / (tp + fp) if tp + fp else 0.0
        R = 100.0 * tp / (tp + fn) if tp + fn else 0.0
        F = f1_from_pr(P, R)
    return EvalReport(P, R, F, tp, fp, fn, [list(p) for p in pred])


def predict(utterances: Sequence[Utterance], model: Model, provider) -> list[list[str]]:
    if provider.d != model.config.d:
        raise nc.DimensionError(f"provider width {provider.d} does not match model d={model.config.d}")
    out = []
    for utt in utterances:
        T, A = provider.embed(utt)
        if T.shape[1] != model.config.d or A.shape[1] != model.config.d:
            raise nc.DimensionError(f"{utt.id}: embeddings {T.shape}/{A.shape} do not match d={model.config.d}")
        out.append(model.predict_tags(T, A))
    return out


def evaluate(utterances: Sequence[Utterance], model: Model, provider) -> EvalReport:
    preds = predict(utterances, model, provider)
    return evaluate_tags([u.tags for u in utterances], preds, [u.id for u in utterances])


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: Model
    log: list[dict]
    best_epoch: int
    steps: int


def default_provider(config: TrainConfig) -> ToyEmbeddingProvider:
    return ToyEmbeddingProvider(config.d, seed=config.seed)


def train(
    corpus: Sequence[Utterance],
    config: TrainConfig,
    dev: Sequence[Utterance] | None = None,
    provider=None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Seeded mini-batch Adam over span cross-entropy.

    Utterances in a batch are processed one at a time and their gradients
    summed (each loss scaled by 1/batch). After each epoch the dev set (or
    the training set when no dev set is given) is decoded and scored; the
    parameters of the best-scoring epoch are returned.
    """
    if not corpus:
        raise ValueError("training corpus is empty")
    provider = provider or default_provider(config)
    if provider.d != config.d:
        raise nc.DimensionError(f"provider width {provider.d} does not match d={config.d}")
    model = Model(config)
    params = model.params
    state = AdamState(lr=config.lr)
    order_rng = random.Random(config.seed)
    eval_set = dev if dev else corpus
    order = list(range(len(corpus)))

    history: list[dict] = []
    best_f1, best_epoch, best = -1.0, 0, params.snapshot()
    steps = 0
    for epoch in range(1, config.epochs + 1):
        order_rng.shuffle(order)
        total = 0.0
        for b in range(0, len(order), config.batch_size):
            batch = order[b : b + config.batch_size]
            params.zero_grad()
            for idx in batch:
                utt = corpus[idx]
                T, A = provider.embed(utt)
                loss = model.loss(T, A, utt.tags)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericalError(f"non-finite loss {value} on {utt.id} at epoch {epoch}, step {steps}")
                total += value
                nc.scale(loss, 1.0 / len(batch)).backward()
            nc.adam_step(params, state)
            steps += 1
            if config.max_steps is not None and steps >= config.max_steps:
                break

        report = evaluate(eval_set, model, provider)
        entry = {"epoch": epoch, "steps": steps, "loss": total / len(corpus), **report.record()}
        history.append(entry)
        log.info("epoch %d loss %.5f P %.2f R %.2f F1 %.2f", epoch, entry["loss"], report.precision,
                 report.recall, report.f1)
        if on_epoch is not None:
            on_epoch(entry)
        # ties go to the later, longer-trained epoch
        if report.f1 >= best_f1:
            best_f1, best_epoch, best = report.f1, epoch, params.snapshot()
        if config.early_stop_f1 is not None and report.f1 >= config.early_stop_f1:
            break
        if config.max_steps is not None and steps >= config.max_steps:
            break

    for path, data in best.items():
        params.set(path, data)
    return TrainResult(model, history, best_epoch, steps)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _param_file(path: str) -> str:
    return f"{path}.emb"


def save_checkpoint(directory, model: Model, provider=None) -> None:
    """Write one embedding-container file per parameter plus ``meta.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = model.params.dtype.itemsize
    for path, t in model.params.items():
        write_embedding_file(directory / _param_file(path), t.data, width=width)
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "parameters": {p: list(t.data.shape) for p, t in model.params.items()},
        "provider": provider.describe() if provider is not None else None,
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_checkpoint(directory) -> tuple[Model, object | None]:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('format_version')!r}")
    config = TrainConfig(**meta["config"])
    params = ParamStore(config.seed, dtype=config.precision)
    for path, shape in sorted(meta["parameters"].items()):
        data, _ = read_embedding_file(directory / _param_file(path))
        if list(data.shape) != shape:
            raise nc.DimensionError(f"{path}: stored shape {data.shape} != metadata {shape}")
        params.set(path, data)
    expected = ParamStore(config.seed, dtype=config.precision)
    init_mmi_params(expected, config.cme, gated=not config.text_only)
    init_span_params(expected, 2 * config.d, config.max_span_len, config.len_dim)
    for path, t in expected.items():
        if path not in params or params[path].shape != t.shape:
            raise nc.DimensionError(f"checkpoint parameter {path} missing or mis-shaped for its config")
    provider = provider_from_description(meta["provider"]) if meta.get("provider") else None
    return Model(config, params), provider


# ---------------------------------------------------------------------------
# gradient check
# ---------------------------------------------------------------------------


def gradcheck(
    d: int = 8,
    heads: int = 2,
    tokens: int = 4,
    frames: int = 6,
    max_span_len: int = 3,
    len_dim: int = 100,
    seed: int = 0,
    h: float = 1e-4,
) -> dict[str, float]:
    """Finite-difference check of the full span loss on random inputs."""
    config = TrainConfig(d=d, heads=heads, max_span_len=max_span_len, len_dim=len_dim, seed=seed)
    model = Model(config)
    rng = np.random.default_rng(seed)
    # randomize the zero/one-initialized parameters too so every path is exercised
    for path, t in model.params.items():
        t.data = t.data + 0.1 * rng.standard_normal(t.shape)
    T = rng.standard_normal((tokens, d))
    A = rng.standard_normal((frames, d))
    tags = ["I" if x else "O" for x in rng.random(tokens) < 0.4]
    if "I" not in tags:
        tags[0] = "I"
    return nc.finite_diff_check(lambda p: model.loss(T, A, tags), model.params, h)
