"""Command-line entry point: generate, train, evaluate, predict, gradcheck.

Exit status: 0 success, 1 usage error (bad flags or missing paths), 2 malformed
data, 3 numerical failure (non-finite loss or a failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .corpus import (
    DISFLUENCY_TYPES,
    CorpusFormatError,
    SyntheticConfig,
    Utterance,
    format_corpus,
    generate_corpus,
    read_corpus,
    write_corpus,
)
from .encoders import EmbeddingFormatError, FileEmbeddingProvider
from .harness import (
    TrainConfig,
    default_provider,
    evaluate,
    evaluate_tags,
    gradcheck,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)
from .numcore import DimensionError, NumericalError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _type_weights(text: str) -> dict[str, float]:
    """``repetition=2,repair=1`` -> weights; a bare name gets weight 1."""
    out = {}
    for part in filter(None, text.split(",")):
        name, _, weight = part.partition("=")
        if name not in DISFLUENCY_TYPES:
            raise argparse.ArgumentTypeError(f"unknown disfluency type {name!r}")
        try:
            out[name] = float(weight) if weight else 1.0
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad weight in {part!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("no disfluency types given")
    return out


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"no such file or directory: {path}")
    return p


def _emit(record: dict, stream) -> None:
    stream.write(json.dumps(record, sort_keys=True) + "\n")
    stream.flush()


def _provider(args, d: int, fallback):
    if getattr(args, "embeddings", None):
        return FileEmbeddingProvider(_existing(args.embeddings), d)
    return fallback


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = SyntheticConfig(
        disfluent_frac=args.disfluent_frac,
        types=args.types or {t: 1.0 for t in DISFLUENCY_TYPES},
        cue=args.cue,
        cue_prob=args.cue_prob,
        ambiguous_repetitions=args.ambiguous,
    )
    utts = generate_corpus(args.n, seed=args.seed, config=cfg)
    if args.out == "-":
        sys.stdout.write(format_corpus(utts))
    else:
        write_corpus(args.out, utts)
    return EXIT_OK


def cmd_train(args) -> int:
    corpus = read_corpus(_existing(args.corpus))
    dev = read_corpus(_existing(args.dev)) if args.dev else None
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        d=args.d,
        heads=args.heads,
        layers=args.layers,
        max_span_len=args.max_span_len,
        seed=args.seed,
        precision=args.precision,
        pos_weight=args.pos_weight,
        text_only=args.text_only,
    )
    provider = _provider(args, config.d, default_provider(config))
    metrics = open(args.metrics, "w", encoding="utf-8") if args.metrics else sys.stdout
    try:
        result = train(corpus, config, dev=dev, provider=provider, on_epoch=lambda e: _emit(e, metrics))
    finally:
        if metrics is not sys.stdout:
            metrics.close()
    save_checkpoint(args.out, result.model, provider)
    print(f"best epoch {result.best_epoch}, checkpoint written to {args.out}", file=sys.stderr)
    return EXIT_OK


def _load(args):
    model, provider = load_checkpoint(_existing(args.checkpoint))
    provider = _provider(args, model.config.d, provider or default_provider(model.config))
    return model, provider


def cmd_evaluate(args) -> int:
    if args.pred:
        if not args.gold:
            raise UsageError("--pred needs --gold")
        gold = read_corpus(_existing(args.gold))
        pred = read_corpus(_existing(args.pred))
        if [u.id for u in gold] != [u.id for u in pred]:
            raise CorpusFormatError("gold and predicted files list different utterance ids")
        report = evaluate_tags([u.tags for u in gold], [u.tags for u in pred], [u.id for u in gold])
    else:
        if not (args.corpus and args.checkpoint):
            raise UsageError("give either --gold and --pred, or --corpus and --checkpoint")
        corpus = read_corpus(_existing(args.corpus))
        model, provider = _load(args)
        report = evaluate(corpus, model, provider)
    print(report.table())
    _emit(report.record(), sys.stdout)
    return EXIT_OK


def cmd_predict(args) -> int:
    corpus = read_corpus(_existing(args.corpus))
    model, provider = _load(args)
    tags = predict(corpus, model, provider)
    out = [Utterance(u.id, u.tokens, t, u.frame_channel) for u, t in zip(corpus, tags)]
    if args.out == "-":
        sys.stdout.write(format_corpus(out))
    else:
        write_corpus(args.out, out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    worst = 0.0
    for seed in range(args.seed, args.seed + args.seeds):
        report = gradcheck(
            d=args.d,
            heads=args.heads,
            tokens=args.tokens,
            frames=args.frames,
            max_span_len=args.max_span_len,
            seed=seed,
            h=args.h,
        )
        path, err = max(report.items(), key=lambda kv: kv[1])
        worst = max(worst, err)
        _emit({"seed": seed, "max_rel_err": err, "worst_param": path}, sys.stdout)
    ok = worst < args.tol
    print(f"max relative error {worst:.3e} ({'ok' if ok else 'FAILED'}, tolerance {args.tol:g})")
    return EXIT_OK if ok else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mdfn", description="Multimodal span-based disfluency detection on toy embeddings.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic corpus")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--types", type=_type_weights, help="e.g. repetition=2,repair=1 (default: all, equal weight)")
    g.add_argument("--disfluent-frac", type=float, default=0.8)
    g.add_argument("--cue", type=float, default=1.0, help="frame cue strength on reparandum tokens")
    g.add_argument("--cue-prob", type=float, default=1.0, help="probability a disfluency carries the cue")
    g.add_argument("--ambiguous", action="store_true", help="half of repetitions fluent, told apart only by the cue")
    g.add_argument("--out", default="-", help="output corpus path ('-' for stdout)")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train and write a checkpoint")
    t.add_argument("--corpus", required=True)
    t.add_argument("--dev")
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.add_argument("--metrics", help="per-epoch JSON lines (default stdout)")
    t.add_argument("--embeddings", help="directory of precomputed <id>.tok.emb / <id>.frm.emb files")
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--lr", type=float, default=1e-5)
    t.add_argument("--d", type=int, default=16)
    t.add_argument("--heads", type=int, default=2)
    t.add_argument("--layers", type=int, default=1)
    t.add_argument("--max-span-len", type=int, default=8)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--precision", choices=["float32", "float64"], default="float64")
    t.add_argument("--pos-weight", type=float, default=1.0)
    t.add_argument("--text-only", action="store_true", help="ablation: zero frames, gate held open")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score gold vs predicted tags, or a checkpoint on a corpus")
    e.add_argument("--gold")
    e.add_argument("--pred")
    e.add_argument("--corpus")
    e.add_argument("--checkpoint")
    e.add_argument("--embeddings")
    e.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="tag a corpus with a checkpoint")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_predict)

    c = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    c.add_argument("--d", type=int, default=8)
    c.add_argument("--heads", type=int, default=2)
    c.add_argument("--tokens", type=int, default=4)
    c.add_argument("--frames", type=int, default=6)
    c.add_argument("--max-span-len", type=int, default=3)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds to check")
    c.add_argument("--h", type=float, default=1e-4, help="finite-difference step")
    c.add_argument("--tol", type=float, default=1e-4)
    c.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mdfn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"mdfn {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CorpusFormatError, EmbeddingFormatError, DimensionError, ValueError, KeyError, OSError) as exc:
        print(f"mdfn {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
