"""Preference pairs and their fixed-dimension context embeddings.

Texts are embedded with a deterministic signed feature-hashing encoder over
word unigrams and padded character trigrams, L2-normalised.  A (prompt,
response) pair of encodings e, e' is fused into one context vector through a
single-layer MLP applied to [e + e'; |e - e'|], which makes the context
invariant to swapping the two responses.  Real sentence encoders can be
plugged in through the :class:`TextEncoder` protocol, or their vectors can
be precomputed and loaded from a JSONL file.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol

import numpy as np

from .errors import ConfigError, DimError, FormatError, InputError, NumericalError
from .serialize import dumps_line, iter_jsonl

DEFAULT_ENCODER_DIM = 256
DEFAULT_EMBED_DIM = 64

_LABELS = ("A", "B")


@dataclass
class PreferencePair:
    """A prompt with two candidate responses and an optional preference label."""

    pair_id: str
    prompt: str
    response_a: str
    response_b: str
    label: str | None = None

    def __post_init__(self) -> None:
        for name in ("pair_id", "prompt", "response_a", "response_b"):
            if not getattr(self, name):
                raise InputError(f"{name} must be non-empty")
        if self.label is not None and self.label not in _LABELS:
            raise InputError(f"label must be one of {_LABELS} or None, got {self.label!r}")


@dataclass
class PairEmbedding:
    """Finite d-dimensional context vector for one preference pair."""

    vector: np.ndarray
    d: int

    def __post_init__(self) -> None:
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.ndim != 1:
            raise DimError(f"embedding must be a vector, got shape {self.vector.shape}")
        if self.vector.shape[0] != self.d:
            raise DimError(f"vector length {self.vector.shape[0]} does not match d={self.d}")
        if not np.all(np.isfinite(self.vector)):
            raise NumericalError("embedding contains non-finite values")

    @classmethod
    def of(cls, vector: np.ndarray) -> "PairEmbedding":
        vector = np.asarray(vector, dtype=np.float64)
        return cls(vector, vector.shape[0])


class TextEncoder(Protocol):
    dim: int

    def encode(self, text: str) -> np.ndarray: ...


class HashingEncoder:
    """Deterministic signed feature hashing over word unigrams and char trigrams.

    The text is padded with two spaces on each side before trigram extraction
    so any non-empty input yields at least one feature.  Bucket and sign come
    from a keyed blake2b digest, so vectors are stable across processes and
    platforms.  Output is L2-normalised.
    """

    def __init__(self, dim: int = DEFAULT_ENCODER_DIM):
        if dim < 2:
            raise ConfigError(f"encoder dim must be >= 2, got {dim}")
        self.dim = dim

    def encode(self, text: str) -> np.ndarray:
        if not text:
            raise InputError("cannot encode empty text")
        vec = np.zeros(self.dim)
        padded = f"  {text}  "
        tokens: list[str] = [f"w\x00{w}" for w in text.split()]
        tokens.extend(f"c\x00{padded[i:i + 3]}" for i in range(len(padded) - 2))
        for token in tokens:
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
            h = int.from_bytes(digest, "little")
            sign = 1.0 if h & (1 << 63) else -1.0
            vec[(h & ((1 << 63) - 1)) % self.dim] += sign
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:  # all hashed counts cancelled; fall back to a unit bump
            vec[0] = 1.0
            norm = 1.0
        return vec / norm


def encode_text(text: str, dim: int = DEFAULT_ENCODER_DIM) -> np.ndarray:
    return HashingEncoder(dim).encode(text)


@dataclass
class FusionParams:
    """Single-layer MLP fusing the two response encodings into one context."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "tanh"

    def __post_init__(self) -> None:
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2:
            raise DimError(f"weight must be 2-d, got shape {self.weight.shape}")
        if self.weight.shape[1] % 2 != 0:
            raise DimError("weight column count must be 2 * encoder_dim (even)")
        if self.bias.shape != (self.weight.shape[0],):
            raise DimError(
                f"bias shape {self.bias.shape} does not match weight rows {self.weight.shape[0]}"
            )
        if self.activation not in ("tanh", "linear"):
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def encoder_dim(self) -> int:
        return self.weight.shape[1] // 2

    def apply(self, prefusion: np.ndarray) -> np.ndarray:
        pre = self.weight @ prefusion + self.bias
        return np.tanh(pre) if self.activation == "tanh" else pre

    @classmethod
    def random_init(
        cls,
        out_dim: int,
        encoder_dim: int,
        rng: np.random.Generator,
        scale: float = 0.02,
        activation: str = "tanh",
    ) -> "FusionParams":
        return cls(
            weight=scale * rng.standard_normal((out_dim, 2 * encoder_dim)),
            bias=np.zeros(out_dim),
            activation=activation,
        )


def prefusion_vector(pair: PreferencePair, encoder: TextEncoder) -> np.ndarray:
    """[e + e'; |e - e'|] for the two prompt||response encodings."""
    e_a = encoder.encode(pair.prompt + "\n" + pair.response_a)
    e_b = encoder.encode(pair.prompt + "\n" + pair.response_b)
    return np.concatenate([e_a + e_b, np.abs(e_a - e_b)])


def embed_pair(
    pair: PreferencePair,
    params: FusionParams,
    encoder: TextEncoder | None = None,
) -> PairEmbedding:
    if encoder is None:
        encoder = HashingEncoder(params.encoder_dim)
    if encoder.dim != params.encoder_dim:
        raise DimError(
            f"encoder dim {encoder.dim} does not match fusion encoder_dim {params.encoder_dim}"
        )
    return PairEmbedding.of(params.apply(prefusion_vector(pair, encoder)))


# ---------------------------------------------------------------------------
# file formats: dataset JSONL and embedding JSONL


def load_dataset(path) -> list[PreferencePair]:
    """Read pairs from JSONL rows {pair_id, prompt, response_a, response_b, label?}."""
    pairs: list[PreferencePair] = []
    seen: set[str] = set()
    for lineno, obj in iter_jsonl(path):
        if not isinstance(obj, dict):
            raise FormatError("dataset row must be an object", line=lineno)
        try:
            pair = PreferencePair(
                pair_id=obj["pair_id"],
                prompt=obj["prompt"],
                response_a=obj["response_a"],
                response_b=obj["response_b"],
                label=obj.get("label"),
            )
        except KeyError as exc:
            raise FormatError(f"dataset row missing key {exc}", line=lineno) from exc
        except InputError as exc:
            raise FormatError(f"invalid dataset row: {exc}", line=lineno) from exc
        if pair.pair_id in seen:
            raise FormatError(f"duplicate pair_id {pair.pair_id!r}", line=lineno)
        seen.add(pair.pair_id)
        pairs.append(pair)
    return pairs


def save_dataset(path, pairs: Iterable[PreferencePair]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for pair in pairs:
            row = {
                "pair_id": pair.pair_id,
                "prompt": pair.prompt,
                "response_a": pair.response_a,
                "response_b": pair.response_b,
            }
            if pair.label is not None:
                row["label"] = pair.label
            fh.write(dumps_line(row) + "\n")


def load_embeddings(path) -> dict[str, PairEmbedding]:
    """Read embeddings from JSONL rows {pair_id, vector}; dimensions must agree."""
    out: dict[str, PairEmbedding] = {}
    expected_d: int | None = None
    for lineno, obj in iter_jsonl(path):
        if not isinstance(obj, dict) or "pair_id" not in obj or "vector" not in obj:
            raise FormatError("embedding row must have pair_id and vector", line=lineno)
        pair_id = obj["pair_id"]
        if pair_id in out:
            raise FormatError(f"duplicate pair_id {pair_id!r}", line=lineno)
        try:
            vector = np.asarray(obj["vector"], dtype=np.float64)
            emb = PairEmbedding.of(vector)
        except (TypeError, ValueError, DimError, NumericalError) as exc:
            raise FormatError(f"invalid vector: {exc}", line=lineno) from exc
        if expected_d is None:
            expected_d = emb.d
        elif emb.d != expected_d:
            raise FormatError(
                f"inconsistent dimension: expected {expected_d}, got {emb.d}", line=lineno
            )
        out[pair_id] = emb
    return out


def save_embeddings(path, embeddings: Mapping[str, PairEmbedding]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for pair_id, emb in embeddings.items():
            fh.write(dumps_line({"pair_id": pair_id, "vector": list(emb.vector)}) + "\n")
