"""Sentence embedding providers and cosine similarity.

The builtin provider is a signed feature-hashing bag of words with
log-scaled term counts, mean-pooled over token occurrences. It is a pure
function of (text, dim, seed): no corpus statistics, so embeddings never
change under corpus growth. Real sentence encoders plug in through the
remote provider.

Remote encoder wire protocol (JSON over HTTP):
    POST <endpoint>/embed {"texts": [str, ...]}
         -> {"vectors": [[float, ...], ...], "dim": int}
"""

from __future__ import annotations

import hashlib
import json
import math
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .errors import EmbedderError
from .textutil import tokenize


@dataclass(frozen=True)
class EmbedderConfig:
    provider: str = "builtin_hash_tfidf"
    dim: int = 256
    endpoint: str | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.provider not in ("builtin_hash_tfidf", "remote"):
            raise EmbedderError(f"unknown embedder provider: {self.provider!r}")
        if self.provider == "builtin_hash_tfidf" and self.dim < 8:
            raise EmbedderError("builtin embedder needs dim >= 8")
        if self.provider == "remote" and not self.endpoint:
            raise EmbedderError("remote embedder needs an endpoint")


class Embedder(Protocol):
    dim: int

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


class HashedTfidfEmbedder:
    """Deterministic hashed bag-of-words embedder with mean pooling."""

    def __init__(self, dim: int = 256, seed: int = 0) -> None:
        if dim < 8:
            raise EmbedderError("builtin embedder needs dim >= 8")
        self.dim = dim
        self.seed = seed

    def _slot(self, token: str) -> tuple[int, float]:
        digest = hashlib.blake2b(f"{self.seed}\x1f{token}".encode("utf-8"), digest_size=8).digest()
        h = int.from_bytes(digest, "little")
        sign = 1.0 if (h >> 63) & 1 else -1.0
        return h % self.dim, sign

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim))
        for row, text in enumerate(texts):
            tokens = tokenize(text)
            if not tokens:
                continue
            counts: dict[str, int] = {}
            for token in tokens:
                counts[token] = counts.get(token, 0) + 1
            for token, count in counts.items():
                idx, sign = self._slot(token)
                out[row, idx] += sign * (1.0 + math.log(count))
            out[row] /= len(tokens)
        return out


class RemoteEmbedder:
    """HTTP client for an external sentence encoder."""

    def __init__(self, endpoint: str, batch_size: int = 32, timeout: float = 30.0) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.batch_size = batch_size
        self.timeout = timeout
        self.dim = -1  # learned from the first response

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        rows: list[list[float]] = []
        for batch_index, start in enumerate(range(0, len(texts), self.batch_size)):
            batch = list(texts[start : start + self.batch_size])
            body = json.dumps({"texts": batch}).encode("utf-8")
            req = urllib.request.Request(
                f"{self.endpoint}/embed", data=body, method="POST", headers={"Content-Type": "application/json"}
            )
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
            except (urllib.error.URLError, OSError) as exc:
                raise EmbedderError(f"remote embedder transport failure at batch {batch_index}: {exc}") from exc
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise EmbedderError(f"remote embedder returned malformed JSON at batch {batch_index}") from exc
            vectors = payload.get("vectors") if isinstance(payload, dict) else None
            dim = payload.get("dim") if isinstance(payload, dict) else None
            if not isinstance(vectors, list) or not isinstance(dim, int) or len(vectors) != len(batch):
                raise EmbedderError(f"remote embedder shape mismatch at batch {batch_index}")
            if self.dim == -1:
                self.dim = dim
            if dim != self.dim or any(not isinstance(v, list) or len(v) != dim for v in vectors):
                raise EmbedderError(f"remote embedder shape mismatch at batch {batch_index}")
            rows.extend(vectors)
        if self.dim == -1:
            self.dim = 0
        out = np.asarray(rows, dtype=np.float64).reshape(len(texts), self.dim)
        if rows and not np.isfinite(out).all():
            raise EmbedderError("remote embedder returned non-finite values")
        return out


def build_embedder(config: EmbedderConfig) -> Embedder:
    if config.provider == "remote":
        return RemoteEmbedder(endpoint=config.endpoint or "")
    return HashedTfidfEmbedder(dim=config.dim, seed=config.seed)


def cosine(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> float:
    """Cosine similarity; zero vectors compare as 0 rather than NaN."""
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise EmbedderError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    denom = float(np.linalg.norm(va) * np.linalg.norm(vb))
    if denom == 0.0:
        return 0.0
    return float(np.dot(va, vb) / denom)
