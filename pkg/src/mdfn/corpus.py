"""Utterances, corpus files, Switchboard-style cleanup and a synthetic generator.

Corpus file format: UTF-8, one utterance per line, four tab-separated fields::

    id <TAB> tokens <TAB> tags <TAB> channel

``tokens``, ``tags`` and ``channel`` are space-joined. Lines starting with
``#`` are comments and blank lines are skipped. Inside ``id`` and tokens a
backslash escapes ``\\\\`` (backslash), ``\\t``, ``\\n``, ``\\r`` and ``\\s``
(space); an id beginning with ``#`` is written as ``\\#``. Channel values are
written with ``repr`` so they read back exactly.
"""

from __future__ import annotations

import random
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

TAGS = ("I", "O")
DISFLUENCY_TYPES = ("repetition", "repair", "restart", "deletion", "substitution")
INTERREGNA = ("uh", "um")


class CorpusFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None, field_name: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field_name is not None:
            where.append(f"field {field_name!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.field_name = field_name


@dataclass
class Utterance:
    id: str
    tokens: list[str]
    tags: list[str]
    frame_channel: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.tokens = list(self.tokens)
        self.tags = list(self.tags)
        if not self.frame_channel:
            self.frame_channel = [0.0] * len(self.tokens)
        self.frame_channel = [float(c) for c in self.frame_channel]
        self.validate()

    def validate(self) -> None:
        if len(self.tags) != len(self.tokens):
            raise ValueError(f"{self.id}: {len(self.tokens)} tokens but {len(self.tags)} tags")
        if len(self.frame_channel) != len(self.tokens):
            raise ValueError(f"{self.id}: {len(self.tokens)} tokens but {len(self.frame_channel)} channel values")
        if any(not t for t in self.tokens):
            raise ValueError(f"{self.id}: empty token")
        bad = set(self.tags) - set(TAGS)
        if bad:
            raise ValueError(f"{self.id}: unknown tags {sorted(bad)}")

    def fluent_tokens(self) -> list[str]:
        return [t for t, tag in zip(self.tokens, self.tags) if tag == "O"]


# ---------------------------------------------------------------------------
# preprocessing and splits
# ---------------------------------------------------------------------------


@dataclass
class Cleaned:
    tokens: list[str]
    index_map: list[int]

    @property
    def empty(self) -> bool:
        return not self.tokens


_PARTIAL_MARKS = ("-", "—", "–")


def _strip_punct(token: str) -> str:
    return "".join(ch for ch in token if not unicodedata.category(ch).startswith("P"))


def preprocess_tokens(raw: Sequence[str]) -> Cleaned:
    """Lowercase, drop partial words (trailing hyphen or dash) and punctuation.

    Tokens that end up empty are removed; ``index_map[k]`` is the original
    position of surviving token ``k``.
    """
    tokens, index_map = [], []
    for i, tok in enumerate(raw):
        if tok.endswith(_PARTIAL_MARKS):
            continue
        cleaned = _strip_punct(tok.lower())
        if cleaned:
            tokens.append(cleaned)
            index_map.append(i)
    return Cleaned(tokens, index_map)


def preprocess_utterance(utt: Utterance) -> Utterance | None:
    """Clean an utterance, carrying tags and channel along; None if nothing survives."""
    c = preprocess_tokens(utt.tokens)
    if c.empty:
        return None
    return Utterance(
        utt.id,
        c.tokens,
        [utt.tags[i] for i in c.index_map],
        [utt.frame_channel[i] for i in c.index_map],
    )


_SW_ID = re.compile(r"^sw(\d)(\d)?", re.IGNORECASE)


def assign_split(file_id: str, literal: bool = False) -> str:
    """Map a Switchboard file id to train/dev/test/excluded.

    Default reading: sw2*, sw3* -> train; sw45-sw49 -> dev; sw40-sw41 -> test.
    With ``literal=True`` the training pattern is taken as the literal prefix
    ``sw23``.
    """
    name = Path(file_id).name
    m = _SW_ID.match(name)
    if not m:
        return "excluded"
    first, second = m.group(1), m.group(2)
    if literal:
        if name.lower().startswith("sw23"):
            return "train"
    elif first in ("2", "3"):
        return "train"
    if first == "4" and second is not None:
        if second in "56789":
            return "dev"
        if second in "01":
            return "test"
    return "excluded"


# ---------------------------------------------------------------------------
# corpus I/O
# ---------------------------------------------------------------------------

_ESCAPES = {"\\": "\\\\", "\t": "\\t", "\n": "\\n", "\r": "\\r", " ": "\\s"}
_UNESCAPES = {"\\": "\\", "t": "\t", "n": "\n", "r": "\r", "s": " ", "#": "#"}


def _escape(text: str) -> str:
    return "".join(_ESCAPES.get(ch, ch) for ch in text)


def _unescape(text: str, line: int, field_name: str) -> str:
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\":
            if i + 1 >= len(text) or text[i + 1] not in _UNESCAPES:
                raise CorpusFormatError("bad escape sequence", line, field_name)
            out.append(_UNESCAPES[text[i + 1]])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def format_utterance(utt: Utterance) -> str:
    uid = _escape(utt.id)
    if uid.startswith("#"):
        uid = "\\" + uid
    return "\t".join(
        [
            uid,
            " ".join(_escape(t) for t in utt.tokens),
            " ".join(utt.tags),
            " ".join(repr(c) for c in utt.frame_channel),
        ]
    )


def parse_utterance(line: str, lineno: int = 1) -> Utterance:
    fields = line.split("\t")
    if len(fields) != 4:
        raise CorpusFormatError(f"expected 4 tab-separated fields, got {len(fields)}", lineno)
    raw_id, raw_tokens, raw_tags, raw_channel = fields
    uid = _unescape(raw_id, lineno, "id")
    tokens = [_unescape(t, lineno, "tokens") for t in raw_tokens.split(" ")] if raw_tokens else []
    tags = raw_tags.split(" ") if raw_tags else []
    if not tokens:
        raise CorpusFormatError("no tokens", lineno, "tokens")
    if any(not t for t in tokens):
        raise CorpusFormatError("empty token", lineno, "tokens")
    if any(t not in TAGS for t in tags):
        raise CorpusFormatError("tags must be I or O", lineno, "tags")
    if len(tags) != len(tokens):
        raise CorpusFormatError(f"{len(tokens)} tokens but {len(tags)} tags", lineno, "tags")
    try:
        channel = [float(c) for c in raw_channel.split(" ")] if raw_channel else []
    except ValueError as exc:
        raise CorpusFormatError(str(exc), lineno, "channel") from None
    if len(channel) != len(tokens):
        raise CorpusFormatError(f"{len(tokens)} tokens but {len(channel)} channel values", lineno, "channel")
    return Utterance(uid, tokens, tags, channel)


def parse_corpus(text: str) -> list[Utterance]:
    utts = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        if line.endswith("\r"):
            line = line[:-1]
        if not line or line.startswith("#"):
            continue
        utts.append(parse_utterance(line, lineno))
    return utts


def format_corpus(utts: Iterable[Utterance]) -> str:
    return "".join(format_utterance(u) + "\n" for u in utts)


def read_corpus(path) -> list[Utterance]:
    return parse_corpus(Path(path).read_text(encoding="utf-8"))


def write_corpus(path, utts: Iterable[Utterance]) -> None:
    Path(path).write_text(format_corpus(utts), encoding="utf-8", newline="\n")


# ---------------------------------------------------------------------------
# disfluency injection
# ---------------------------------------------------------------------------

OPENERS = ["but", "and", "so", "well", "yeah", "now", "actually"]
SUBJECTS = [["i"], ["we"], ["you"], ["they"], ["he"], ["she"], ["my", "sister"], ["the", "kids"], ["our", "neighbor"]]
VERBS = [["like"], ["liked"], ["grew", "up", "with"], ["saw"], ["watched"], ["bought"], ["want"], ["need"],
         ["kept"], ["found"], ["read"], ["talked", "about"], ["was", "waiting", "for"]]
OBJECTS = [["cats"], ["the", "dog"], ["a", "car"], ["the", "news"], ["that", "movie"], ["some", "books"],
           ["the", "house"], ["my", "job"], ["the", "pen"], ["a", "letter"], ["it"]]
PREPOSITIONS = ["under", "over", "near", "behind", "beside", "on", "in"]
PLACES = [["the", "table"], ["the", "bed"], ["home"], ["the", "city"], ["the", "door"], ["the", "garage"]]
TIMES = [["every", "day"], ["last", "year"], ["on", "weekends"], ["again"], ["yesterday"], ["at", "night"]]

_CATEGORIES = [
    OPENERS,
    PREPOSITIONS,
    ["i", "we", "you", "they", "he", "she"],
    ["like", "liked", "saw", "watched", "bought", "want", "need", "kept", "found", "read"],
    ["cats", "dog", "car", "news", "movie", "books", "house", "job", "pen", "letter", "table", "bed", "city",
     "door", "garage"],
    ["the", "a", "my", "our", "that", "some"],
]
_VOCAB = sorted({w for cat in _CATEGORIES for w in cat})


def generate_fluent(rng: random.Random) -> list[str]:
    tokens: list[str] = []
    if rng.random() < 0.4:
        tokens.append(rng.choice(OPENERS))
    tokens += rng.choice(SUBJECTS) + rng.choice(VERBS) + rng.choice(OBJECTS)
    r = rng.random()
    if r < 0.35:
        tokens += [rng.choice(PREPOSITIONS)] + rng.choice(PLACES)
    elif r < 0.6:
        tokens += rng.choice(TIMES)
    return tokens


def _alternative(word: str, rng: random.Random) -> str:
    for cat in _CATEGORIES:
        if word in cat:
            pool = [w for w in cat if w != word]
            return rng.choice(pool)
    return rng.choice([w for w in _VOCAB if w != word])


@dataclass(frozen=True)
class DisfluencySpec:
    """Where and how to inject one disfluency.

    ``reparandum`` fixes the inserted tokens explicitly; when None they are
    derived from the sentence (repetition, repair, substitution) or drawn at
    random (restart, deletion).
    """

    type: str
    position: int
    length: int = 1
    interregnum: str | None = None
    reparandum: tuple[str, ...] | None = None

    def check(self, n_tokens: int) -> None:
        if self.type not in DISFLUENCY_TYPES:
            raise ValueError(f"unknown disfluency type {self.type!r}")
        if self.length < 1:
            raise ValueError("reparandum length must be >= 1")
        if self.reparandum is not None and len(self.reparandum) != self.length:
            raise ValueError("explicit reparandum does not match length")
        if self.type in ("repetition", "repair"):
            if not 0 <= self.position or self.position + self.length > n_tokens:
                raise ValueError(
                    f"{self.type} of length {self.length} at {self.position} does not fit {n_tokens} tokens"
                )
        elif self.type == "substitution":
            if not 0 <= self.position < n_tokens:
                raise ValueError(f"substitution at {self.position} outside {n_tokens} tokens")
        elif not 0 <= self.position <= n_tokens:
            raise ValueError(f"{self.type} at {self.position} outside {n_tokens} tokens")


def _reparandum(fluent: Sequence[str], spec: DisfluencySpec, rng: random.Random) -> list[str]:
    if spec.reparandum is not None:
        return list(spec.reparandum)
    p, k = spec.position, spec.length
    if spec.type == "repetition":
        return list(fluent[p : p + k])
    if spec.type == "repair":
        # start the same phrase, then veer off on the last word
        head = list(fluent[p : p + k - 1])
        return head + [_alternative(fluent[p + k - 1], rng)]
    if spec.type == "substitution":
        words = [_alternative(fluent[p], rng)]
        while len(words) < k:
            words.append(rng.choice(_VOCAB))
        return words
    # restart / deletion: an abandoned fragment of some other sentence
    source = generate_fluent(rng)
    while len(source) < k:
        source += generate_fluent(rng)
    return source[:k]


def inject_disfluency(
    fluent: Sequence[str],
    spec: DisfluencySpec,
    seed: int = 0,
    cue: float = 1.0,
    cue_prob: float = 1.0,
    utt_id: str = "",
    interregnum_tag: str = "I",
) -> Utterance:
    """Insert a reparandum (plus optional interregnum) before ``spec.position``.

    Inserted reparandum tokens are tagged I; the interregnum takes
    ``interregnum_tag``; every original token stays O. With probability
    ``cue_prob`` the reparandum tokens carry ``cue`` in the frame channel.
    """
    spec.check(len(fluent))
    rng = random.Random(seed)
    rep = _reparandum(fluent, spec, rng)
    inserted = rep + ([spec.interregnum] if spec.interregnum else [])
    p = spec.position
    tokens = list(fluent[:p]) + inserted + list(fluent[p:])
    tags = ["O"] * p + ["I"] * len(rep) + ([interregnum_tag] if spec.interregnum else []) + ["O"] * (len(fluent) - p)
    cued = rng.random() < cue_prob
    channel = [0.0] * len(tokens)
    if cued:
        for i in range(p, p + len(rep)):
            channel[i] = cue
    return Utterance(utt_id, tokens, tags, channel)


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------


@dataclass
class SyntheticConfig:
    """Knobs for :func:`generate_corpus`.

    ``ambiguous_repetitions`` builds the acoustically disambiguated corpus:
    half of the repetition utterances keep the repeated words but are fluent
    (all O, zero channel), the other half are disfluent and always cued, so
    the text of both halves is drawn from the same distribution.
    """

    disfluent_frac: float = 0.8
    types: dict[str, float] = field(default_factory=lambda: {t: 1.0 for t in DISFLUENCY_TYPES})
    cue: float = 1.0
    cue_prob: float = 1.0
    interregnum_prob: float = 0.3
    max_reparandum: int = 3
    ambiguous_repetitions: bool = False
    id_prefix: str = "syn"


def _random_spec(fluent: list[str], kind: str, cfg: SyntheticConfig, rng: random.Random) -> DisfluencySpec:
    n = len(fluent)
    interregnum = rng.choice(INTERREGNA) if rng.random() < cfg.interregnum_prob else None
    if kind in ("repetition", "repair"):
        k = rng.randint(1 if kind == "repetition" else 2, min(cfg.max_reparandum, n))
        return DisfluencySpec(kind, rng.randint(0, n - k), k, interregnum)
    if kind == "substitution":
        return DisfluencySpec(kind, rng.randint(0, n - 1), 1, interregnum)
    k = rng.randint(1, cfg.max_reparandum)
    if kind == "restart":
        return DisfluencySpec(kind, 0, k, interregnum or rng.choice(INTERREGNA))
    return DisfluencySpec(kind, rng.randint(0, n), k, None)


def generate_corpus(n: int, seed: int = 0, config: SyntheticConfig | None = None) -> list[Utterance]:
    cfg = config or SyntheticConfig()
    unknown = set(cfg.types) - set(DISFLUENCY_TYPES)
    if unknown:
        raise ValueError(f"unknown disfluency types {sorted(unknown)}")
    kinds = [k for k in DISFLUENCY_TYPES if cfg.types.get(k, 0) > 0]
    weights = [cfg.types[k] for k in kinds]
    rng = random.Random(seed)
    utts = []
    for i in range(n):
        uid = f"{cfg.id_prefix}{seed}-{i:06d}"
        fluent = generate_fluent(rng)
        if not kinds or rng.random() >= cfg.disfluent_frac:
            utts.append(Utterance(uid, fluent, ["O"] * len(fluent)))
            continue
        kind = rng.choices(kinds, weights)[0]
        spec = _random_spec(fluent, kind, cfg, rng)
        sub_seed = rng.getrandbits(32)
        if kind == "repetition" and cfg.ambiguous_repetitions:
            spec = DisfluencySpec(kind, spec.position, spec.length, None)
            utt = inject_disfluency(fluent, spec, sub_seed, cfg.cue, 1.0, uid)
            if rng.random() < 0.5:
                utt = Utterance(uid, utt.tokens, ["O"] * len(utt.tokens))
        else:
            utt = inject_disfluency(fluent, spec, sub_seed, cfg.cue, cfg.cue_prob, uid)
        utts.append(utt)
    return utts
