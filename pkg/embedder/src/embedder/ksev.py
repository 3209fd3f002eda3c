"""KSEV vector-file writer.

The consumer-side contract: magic "KSEV", u32 little-endian dimensionality,
then repeated records of [16-byte md5(text)] [dim float32 little-endian],
plus a sidecar text manifest `<path>.manifest` with one
"<hash_hex>\t<json text>" line per entry for auditing.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

KSEV_MAGIC = b"KSEV"


def content_hash(text: str) -> bytes:
    return hashlib.md5(text.encode("utf-8")).digest()


def write_ksev(path, texts: list, vectors: np.ndarray) -> int:
    """Write texts and their vectors; returns the record count."""
    if len(texts) == 0:
        raise ValueError("refusing to write an empty vector file")
    arr = np.asarray(vectors, dtype="<f4")
    if arr.ndim != 2 or arr.shape[0] != len(texts):
        raise ValueError(f"vector array shape {arr.shape} does not match "
                         f"{len(texts)} texts")
    dim = arr.shape[1]
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as fh:
        fh.write(KSEV_MAGIC)
        fh.write(struct.pack("<I", dim))
        for text, vec in zip(texts, arr):
            fh.write(content_hash(text))
            fh.write(vec.tobytes())
    with open(str(out) + ".manifest", "w", encoding="utf-8") as fh:
        for text in texts:
            fh.write(content_hash(text).hex())
            fh.write("\t")
            fh.write(json.dumps(text, ensure_ascii=False))
            fh.write("\n")
    return len(texts)
