"""Embedding providers: vector-file backend, HTTP backend, content cache.

Vectors are keyed by an md5 content hash of the exact input text. The
on-disk cache and the offline vector-file backend share one binary format:

    magic "KSEV" | u32 little-endian dim | repeat [16-byte md5][dim * f32 LE]

A sidecar text manifest (`<path>.manifest`) maps each hash to the original
text for auditability. Cosines are computed in float64 from the stored
float32 vectors.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import requests

logger = logging.getLogger(__name__)

KSEV_MAGIC = b"KSEV"


class EmbeddingError(Exception):
    """Provider failure (transport, format, or missing vector)."""


def content_hash(text: str) -> bytes:
    return hashlib.md5(text.encode("utf-8")).digest()


def write_vector_file(path, texts: list, vectors: list, dim: int) -> None:
    """Write the KSEV binary plus its audit manifest (hash -> text)."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as fh:
        fh.write(KSEV_MAGIC)
        fh.write(struct.pack("<I", dim))
        for text, vec in zip(texts, vectors):
            arr = np.asarray(vec, dtype="<f4")
            if arr.shape != (dim,):
                raise EmbeddingError(
                    f"vector for {text[:40]!r} has shape {arr.shape}, want ({dim},)")
            fh.write(content_hash(text))
            fh.write(arr.tobytes())
    with open(str(out) + ".manifest", "w", encoding="utf-8") as fh:
        for text in texts:
            fh.write(content_hash(text).hex())
            fh.write("\t")
            fh.write(json.dumps(text, ensure_ascii=False))
            fh.write("\n")


def read_vector_file(path) -> tuple:
    """Load a KSEV file; returns (dim, {hash_bytes: float32 array})."""
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:4] != KSEV_MAGIC:
        raise EmbeddingError(f"{path}: not a KSEV vector file")
    dim = struct.unpack("<I", data[4:8])[0]
    record = 16 + 4 * dim
    body = data[8:]
    if dim == 0 or len(body) % record != 0:
        raise EmbeddingError(f"{path}: truncated or corrupt KSEV payload")
    table = {}
    for off in range(0, len(body), record):
        key = body[off:off + 16]
        vec = np.frombuffer(body, dtype="<f4", count=dim, offset=off + 16)
        table[key] = vec
    return dim, table


class VectorFileProvider:
    """Read-only provider backed by a pre-exported KSEV file."""

    backend = "vector-file"

    def __init__(self, path):
        self.path = Path(path)
        self.dim, self._table = read_vector_file(self.path)

    def embed(self, texts: list) -> list:
        out = []
        for text in texts:
            key = content_hash(text)
            vec = self._table.get(key)
            if vec is None:
                raise EmbeddingError(
                    f"vector file {self.path} has no entry for text with "
                    f"hash {key.hex()} ({text[:60]!r})")
            out.append(vec)
        return out


class HttpEmbeddingProvider:
    """Client for the POST /embed contract.

    Requests are batched; up to `max_in_flight` batches run concurrently and
    results are reassembled in input order. Transport failures retry with
    exponential backoff before surfacing as EmbeddingError.
    """

    backend = "http-endpoint"

    def __init__(self, url: str, batch_size: int = 256, max_in_flight: int = 8,
                 retries: int = 3, timeout: float = 60.0, session=None):
        self.url = url.rstrip("/")
        self.batch_size = batch_size
        self.max_in_flight = max_in_flight
        self.retries = retries
        self.timeout = timeout
        self.session = session or requests.Session()
        self.dim = None

    def _post_batch(self, batch: list) -> list:
        last = None
        for attempt in range(self.retries):
            try:
                resp = self.session.post(self.url + "/embed",
                                         json={"texts": batch},
                                         timeout=self.timeout)
                resp.raise_for_status()
                payload = resp.json()
                break
            except (requests.RequestException, ValueError) as exc:
                last = exc
                if attempt + 1 < self.retries:
                    time.sleep(0.25 * 2 ** attempt)
        else:
            raise EmbeddingError(
                f"embedding endpoint {self.url} failed after {self.retries} "
                f"attempts (first text {batch[0][:60]!r}): {last}")
        dim = payload.get("dim")
        vectors = payload.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(batch):
            raise EmbeddingError(
                f"endpoint returned {len(vectors) if isinstance(vectors, list) else '?'} "
                f"vectors for {len(batch)} texts")
        if self.dim is None:
            self.dim = dim
        elif dim != self.dim:
            raise EmbeddingError(f"dimensionality changed: {self.dim} -> {dim}")
        return [np.asarray(v, dtype=np.float32) for v in vectors]

    def embed(self, texts: list) -> list:
        batches = [texts[i:i + self.batch_size]
                   for i in range(0, len(texts), self.batch_size)]
        if len(batches) <= 1:
            return self._post_batch(texts) if texts else []
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            results = list(pool.map(self._post_batch, batches))
        return [vec for chunk in results for vec in chunk]


class CachingProvider:
    """Wraps any provider with an in-memory + on-disk KSEV cache.

    Hits never touch the inner provider. A corrupt cache file is discarded
    with a warning and rebuilt on the next flush.
    """

    def __init__(self, inner, cache_path=None):
        self.inner = inner
        self.cache_path = Path(cache_path) if cache_path else None
        self._vectors = {}
        self._texts = {}
        if self.cache_path and self.cache_path.exists():
            try:
                dim, table = read_vector_file(self.cache_path)
                self._vectors.update(table)
                manifest = Path(str(self.cache_path) + ".manifest")
                if manifest.exists():
                    for line in manifest.read_text("utf-8").splitlines():
                        key_hex, raw = line.split("\t", 1)
                        self._texts[bytes.fromhex(key_hex)] = json.loads(raw)
            except (EmbeddingError, ValueError) as exc:
                logger.warning("discarding corrupt embedding cache %s: %s",
                               self.cache_path, exc)
                self._vectors.clear()
                self._texts.clear()

    @property
    def backend(self):
        return getattr(self.inner, "backend", "unknown")

    @property
    def dim(self):
        return getattr(self.inner, "dim", None)

    def embed(self, texts: list) -> list:
        keys = [content_hash(t) for t in texts]
        missing, missing_keys, queued = [], [], set()
        for t, k in zip(texts, keys):
            if k not in self._vectors and k not in queued:
                missing.append(t)
                missing_keys.append(k)
                queued.add(k)
        if missing:
            fresh = self.inner.embed(missing)
            for t, k, v in zip(missing, missing_keys, fresh):
                self._vectors[k] = np.asarray(v, dtype=np.float32)
                self._texts[k] = t
        return [self._vectors[k] for k in keys]

    def flush(self) -> None:
        if not self.cache_path or not self._texts:
            return
        ordered = sorted(self._texts.items(), key=lambda kv: kv[0])
        texts = [t for _, t in ordered]
        dim = len(next(iter(self._vectors.values())))
        write_vector_file(self.cache_path, texts,
                          [self._vectors[k] for k, _ in ordered], dim)


def cosine(u, v) -> float:
    """Raw cosine of two vectors in float64; zero norm gives 0."""
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(v, dtype=np.float64)
    na = float(np.sqrt(np.dot(a, a)))
    nb = float(np.sqrt(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        return 0.0
    raw = float(np.dot(a, b) / (na * nb))
    # guard against ulp overshoot so downstream scores stay in [-1, 1]
    return max(-1.0, min(1.0, raw))


def embed_sim(provider, text_a: str, text_b: str) -> float:
    """Embedding similarity: cosine clamped below at zero.

    The raw (possibly negative) cosine is logged at DEBUG for audit.
    """
    va, vb = provider.embed([text_a, text_b])
    if len(va) != len(vb):
        raise EmbeddingError(
            f"dimensionality mismatch: {len(va)} vs {len(vb)}")
    raw = cosine(va, vb)
    if raw < 0.0:
        logger.debug("negative raw cosine %.6f clamped to 0", raw)
        return 0.0
    return raw
