"""Token and frame embedding providers.

Two kinds of provider produce the token matrix ``T`` (M x d) and the frame
matrix ``A`` (J x d) for an utterance:

* ``ToyEmbeddingProvider`` synthesizes both deterministically from the token
  strings, so the whole pipeline runs without any pretrained model.
* ``FileEmbeddingProvider`` reads precomputed matrices from
  ``<utt_id>.tok.emb`` / ``<utt_id>.frm.emb`` files.

Embedding file layout (all integers little-endian)::

    offset  size  field
    0       16    magic  b"DISFL-EMBEDDING\\0"
    16      4     format version (uint32, currently 1)
    20      4     bytes per element (uint32, 4 = float32, 8 = float64)
    24      8     rows (uint64)
    32      8     cols (uint64)
    40      r*c*w payload, row-major
    ...     4     CRC32 of the payload (uint32)
"""

from __future__ import annotations

import hashlib
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MAGIC = b"DISFL-EMBEDDING\x00"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<16sIIQQ")
_CRC = struct.Struct("<I")
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


class EmbeddingFormatError(ValueError):
    """Malformed or corrupt embedding file."""


@dataclass(frozen=True)
class FrameTiming:
    """Toy duration model for frame synthesis.

    ``window_ms`` is carried for completeness; only ``stride_ms`` enters the
    frame count.
    """

    stride_ms: float = 20.0
    window_ms: float = 25.0
    ms_per_char: float = 60.0

    def __post_init__(self):
        if self.stride_ms <= 0:
            raise ValueError("stride_ms must be positive")
        if self.ms_per_char <= 0:
            raise ValueError("ms_per_char must be positive")

    def frames_for(self, token: str) -> int:
        return max(1, round(len(token) * self.ms_per_char / self.stride_ms))


def _seeded_rng(*parts) -> np.random.Generator:
    key = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return np.random.default_rng(int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little"))


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def token_hash_vector(token: str, d: int, seed: int, stream: str = "text") -> np.ndarray:
    """Unit-norm pseudorandom vector keyed by ``(stream, seed, token)``."""
    return _unit(_seeded_rng(stream, seed, d, token).standard_normal(d))


def position_encoding(count: int, d: int) -> np.ndarray:
    """Sinusoidal position rows, scaled to unit norm.

    Frequencies are spread evenly over (0, pi) instead of the usual geometric
    ladder, which makes distinct positions nearly orthogonal at small ``d``.
    The encoding repeats only after ``2 * d`` positions (``d`` even) and
    negates after ``d``.
    """
    half = (d + 1) // 2
    omega = np.pi * (np.arange(half) + 0.5) / half
    angle = np.arange(count)[:, None] * omega[None, :]
    pe = np.empty((count, 2 * half))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe[:, :d] / math.sqrt(half)


def _content_width(d: int) -> int:
    return d - d // 2


def toy_token_embeddings(tokens: Sequence[str], d: int, seed: int) -> np.ndarray:
    """Row m = [hash vector of ``tokens[m]`` ; position encoding of m].

    The first ``d - d // 2`` columns carry token identity, the rest position.
    """
    if len(tokens) < 1:
        raise ValueError("need at least one token")
    if d < 2:
        raise ValueError("d must be >= 2")
    if any(not t for t in tokens):
        raise ValueError("empty token string")
    content = np.stack([token_hash_vector(t, _content_width(d), seed) for t in tokens])
    return np.concatenate([content, position_encoding(len(tokens), d // 2)], axis=1)


def cue_direction(d: int, seed: int) -> np.ndarray:
    return _unit(_seeded_rng("cue", seed, d).standard_normal(d))


def toy_frame_embeddings(
    tokens: Sequence[str],
    timing: FrameTiming,
    d: int,
    seed: int,
    channel: Sequence[float] | None = None,
    noise: float = 0.05,
) -> tuple[np.ndarray, np.ndarray]:
    """Synthesize speech frames for a token sequence.

    Token m is voiced for ``timing.frames_for(token)`` frames. Each frame is
    the token's voice vector, laid out like the token rows (a hash vector from
    a separate stream, then the position encoding of m standing in for time),
    plus ``channel[m]`` times a fixed cue direction plus seeded Gaussian noise.

    Returns the frame matrix and the frame-to-token alignment.
    """
    if len(tokens) < 1:
        raise ValueError("need at least one token")
    if d < 2:
        raise ValueError("d must be >= 2")
    if any(not t for t in tokens):
        raise ValueError("empty token string")
    if channel is None:
        channel = [0.0] * len(tokens)
    if len(channel) != len(tokens):
        raise ValueError(f"channel length {len(channel)} != token count {len(tokens)}")

    counts = [timing.frames_for(t) for t in tokens]
    alignment = np.repeat(np.arange(len(tokens)), counts)
    voice = np.concatenate(
        [
            np.stack([token_hash_vector(t, _content_width(d), seed, stream="voice") for t in tokens]),
            position_encoding(len(tokens), d // 2),
        ],
        axis=1,
    )
    cue = cue_direction(d, seed)
    per_token = voice + np.asarray(channel, dtype=np.float64)[:, None] * cue[None, :]
    frames = per_token[alignment]
    if noise > 0:
        rng = _seeded_rng("noise", seed, d, *tokens)
        frames = frames + noise * rng.standard_normal(frames.shape)
    return frames, alignment


# ---------------------------------------------------------------------------
# file container
# ---------------------------------------------------------------------------


def encode_matrix(matrix: np.ndarray, width: int = 4) -> bytes:
    if width not in _DTYPES:
        raise ValueError(f"unsupported element width {width}")
    m = np.asarray(matrix)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {m.shape}")
    payload = np.ascontiguousarray(m, dtype=_DTYPES[width]).tobytes()
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, width, m.shape[0], m.shape[1])
    return header + payload + _CRC.pack(zlib.crc32(payload))


def decode_matrix(blob: bytes) -> tuple[np.ndarray, dict]:
    if len(blob) < _HEADER.size:
        raise EmbeddingFormatError(f"at byte 0: header needs {_HEADER.size} bytes, file has {len(blob)}")
    magic, version, width, rows, cols = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise EmbeddingFormatError("at byte 0: bad magic")
    if version != FORMAT_VERSION:
        raise EmbeddingFormatError(f"at byte 16: unsupported version {version}")
    if width not in _DTYPES:
        raise EmbeddingFormatError(f"at byte 20: unsupported element width {width}")
    expected = rows * cols * width
    actual = len(blob) - _HEADER.size - _CRC.size
    if actual != expected:
        raise EmbeddingFormatError(
            f"at byte {_HEADER.size}: payload for {rows}x{cols} needs {expected} bytes, found {max(actual, 0)}"
        )
    payload = blob[_HEADER.size : _HEADER.size + expected]
    (crc,) = _CRC.unpack_from(blob, _HEADER.size + expected)
    if crc != zlib.crc32(payload):
        raise EmbeddingFormatError(f"at byte {_HEADER.size + expected}: CRC32 mismatch")
    matrix = np.frombuffer(payload, dtype=_DTYPES[width]).reshape(rows, cols).astype(np.float64)
    if not np.all(np.isfinite(matrix)):
        raise EmbeddingFormatError("payload contains non-finite values")
    return matrix, {"version": version, "width": width, "rows": rows, "cols": cols, "crc32": crc}


def write_embedding_file(path, matrix: np.ndarray, width: int = 4) -> None:
    Path(path).write_bytes(encode_matrix(matrix, width))


def read_embedding_file(path) -> tuple[np.ndarray, dict]:
    return decode_matrix(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# providers
# ---------------------------------------------------------------------------


@dataclass
class ToyEmbeddingProvider:
    d: int
    seed: int = 0
    timing: FrameTiming = field(default_factory=FrameTiming)
    noise: float = 0.05
    kind: str = field(default="toy", init=False)
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def embed(self, utt) -> tuple[np.ndarray, np.ndarray]:
        key = (tuple(utt.tokens), tuple(utt.frame_channel))
        hit = self._cache.get(key)
        if hit is None:
            T = toy_token_embeddings(utt.tokens, self.d, self.seed)
            A, _ = toy_frame_embeddings(utt.tokens, self.timing, self.d, self.seed, utt.frame_channel, self.noise)
            T.flags.writeable = False
            A.flags.writeable = False
            hit = self._cache[key] = (T, A)
        return hit

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "d": self.d,
            "seed": self.seed,
            "noise": self.noise,
            "stride_ms": self.timing.stride_ms,
            "window_ms": self.timing.window_ms,
            "ms_per_char": self.timing.ms_per_char,
        }


@dataclass
class FileEmbeddingProvider:
    directory: Path
    d: int
    kind: str = field(default="file", init=False)

    def __post_init__(self):
        self.directory = Path(self.directory)

    def embed(self, utt) -> tuple[np.ndarray, np.ndarray]:
        T, _ = read_embedding_file(self.directory / f"{utt.id}.tok.emb")
        A, _ = read_embedding_file(self.directory / f"{utt.id}.frm.emb")
        if T.shape != (len(utt.tokens), self.d):
            raise EmbeddingFormatError(f"{utt.id}: token matrix {T.shape}, expected ({len(utt.tokens)}, {self.d})")
        if A.shape[1] != self.d or A.shape[0] < 1:
            raise EmbeddingFormatError(f"{utt.id}: frame matrix {A.shape}, expected (J, {self.d})")
        return T, A

    def describe(self) -> dict:
        return {"kind": self.kind, "d": self.d, "directory": str(self.directory)}


def provider_from_description(desc: dict):
    if desc["kind"] == "toy":
        timing = FrameTiming(desc["stride_ms"], desc["window_ms"], desc["ms_per_char"])
        return ToyEmbeddingProvider(desc["d"], desc["seed"], timing, desc["noise"])
    if desc["kind"] == "file":
        return FileEmbeddingProvider(desc["directory"], desc["d"])
    raise ValueError(f"unknown provider kind {desc['kind']!r}")
