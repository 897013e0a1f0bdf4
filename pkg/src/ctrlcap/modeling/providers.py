"""Deterministic embedding providers for desk-scale runs and tests.

Real deployments plug in pretrained encoders behind the same interface; the
providers here are seeded by token content (never by process state) so every
run reproduces the same vectors.
"""

from __future__ import annotations

import hashlib
from typing import Protocol, Sequence

import numpy as np

from .. import core
from ..errors import EmptyCaption


def _token_key(token: str) -> str:
    # case- and punctuation-insensitive identity, so "Fox." matches "fox"
    key = token.casefold().strip(".,;:!?\"'()[]{}")
    return key or token.casefold()


class EmbeddingProviderHandle(Protocol):
    dim: int
    provider_id: str

    def encode_tokens(self, tokens: Sequence[str]) -> np.ndarray:
        """Matrix of shape (len(tokens), dim)."""
        ...

    def encode_sentence(self, text: str) -> np.ndarray:
        """Single vector of shape (dim,)."""
        ...


class HashEmbeddingProvider:
    """Pseudo-random unit vector per distinct token, seeded by a content hash."""

    def __init__(self, dim: int = 64, salt: str = ""):
        self.dim = dim
        self.salt = salt
        self.provider_id = f"hash-{dim}" + (f"-{salt}" if salt else "")
        self._cache: dict[str, np.ndarray] = {}

    def _vector(self, key: str) -> np.ndarray:
        vec = self._cache.get(key)
        if vec is None:
            digest = hashlib.blake2b(f"{self.salt}\x00{key}".encode("utf-8"), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "big"))
            vec = rng.standard_normal(self.dim)
            vec /= np.linalg.norm(vec)
            self._cache[key] = vec
        return vec

    def encode_tokens(self, tokens: Sequence[str]) -> np.ndarray:
        if len(tokens) == 0:
            return np.zeros((0, self.dim))
        return np.stack([self._vector(_token_key(t)) for t in tokens])

    def encode_sentence(self, text: str) -> np.ndarray:
        words = core.normalize_text(text).split()
        if not words:
            raise EmptyCaption("cannot embed empty text")
        mean = self.encode_tokens(words).mean(axis=0)
        norm = np.linalg.norm(mean)
        return mean / norm if norm > 1e-12 else mean


class OneHotEmbeddingProvider:
    """Hash-bucketed one-hot vectors: cosine is 1 for equal tokens, 0 otherwise
    (up to bucket collisions, which a large ``dim`` makes unlikely)."""

    def __init__(self, dim: int = 512):
        self.dim = dim
        self.provider_id = f"onehot-{dim}"

    def _bucket(self, key: str) -> int:
        digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "big") % self.dim

    def encode_tokens(self, tokens: Sequence[str]) -> np.ndarray:
        mat = np.zeros((len(tokens), self.dim))
        for i, t in enumerate(tokens):
            mat[i, self._bucket(_token_key(t))] = 1.0
        return mat

    def encode_sentence(self, text: str) -> np.ndarray:
        words = core.normalize_text(text).split()
        if not words:
            raise EmptyCaption("cannot embed empty text")
        return self.encode_tokens(words).mean(axis=0)
