"""Embedding backends.

Two families, selected by model name:

* ``hash://<dim>`` -- deterministic feature-hashing embedder: tokens and
  token bigrams hash into signed buckets, L2-normalized. No weights, no
  downloads, bit-stable across platforms; meant for tests and fully
  offline runs.
* anything else -- a sentence-transformers model name, loaded eagerly so a
  bad model fails at startup instead of mid-service.

Every backend returns float32 unit vectors (L2 norm 1 within 1e-6) and is
deterministic for identical input text.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np

DEFAULT_MODEL = "sentence-transformers/paraphrase-MiniLM-L12-v2"

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


class ModelLoadError(Exception):
    """The requested embedding model cannot be loaded."""


class HashingEmbedder:
    """Feature-hashing text embedder: deterministic and dependency-free."""

    def __init__(self, dim: int):
        if dim < 2:
            raise ModelLoadError(f"hash embedder dim must be >= 2, got {dim}")
        self.dim = dim
        self.name = f"hash://{dim}"

    def _features(self, text: str):
        tokens = _TOKEN_RE.findall(text.lower())
        yield from tokens
        for a, b in zip(tokens, tokens[1:]):
            yield f"{a}{b}"

    def encode(self, texts: list) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            vec = out[i]
            for feature in self._features(text):
                digest = hashlib.md5(feature.encode("utf-8")).digest()
                bucket = int.from_bytes(digest[:4], "little") % self.dim
                sign = 1.0 if digest[4] & 1 else -1.0
                vec[bucket] += sign
            norm = float(np.linalg.norm(vec))
            if norm == 0.0:
                # empty text: fixed unit vector so norms stay exactly 1
                vec[0] = 1.0
            else:
                vec /= norm
        return out


class SentenceTransformerEmbedder:
    """Thin wrapper over a pinned sentence-transformers model."""

    def __init__(self, name: str):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise ModelLoadError(
                f"sentence-transformers is not installed; cannot load {name!r} "
                f"(pip install 'embedder[model]' or use hash://<dim>)") from exc
        try:
            self._model = SentenceTransformer(name)
        except Exception as exc:
            raise ModelLoadError(f"failed to load model {name!r}: {exc}") from exc
        self.name = name
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def encode(self, texts: list) -> np.ndarray:
        raw = self._model.encode(texts, convert_to_numpy=True,
                                 normalize_embeddings=True,
                                 show_progress_bar=False)
        return np.asarray(raw, dtype=np.float32)


def load_model(name: str = DEFAULT_MODEL):
    """Instantiate a backend by name; raises ModelLoadError on failure."""
    if name.startswith("hash://"):
        try:
            dim = int(name[len("hash://"):])
        except ValueError:
            raise ModelLoadError(f"bad hash model spec {name!r}; "
                                 f"expected hash://<dim>") from None
        return HashingEmbedder(dim)
    return SentenceTransformerEmbedder(name)
