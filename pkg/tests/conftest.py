"""Shared fixtures: synthetic corpora, deterministic embedding stubs."""

from __future__ import annotations

import hashlib
import json
import random

import numpy as np
import pytest

from ksprune.corpus import load_manifest


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False))
            fh.write("\n")


def write_manifest(directory, datasets):
    """datasets: list of (id, category, filename, format, protected)."""
    manifest = {"datasets": [
        {"id": ds_id, "category": cat, "path": fname, "format": fmt,
         "protected": prot}
        for ds_id, cat, fname, fmt, prot in datasets]}
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2), "utf-8")
    return path


def make_row(words, question=None, answer=None):
    return {"context": " ".join(words),
            "question": question or f"what about {words[0]}",
            "answer": answer or words[-1]}


SCIENCE_VOCAB = ["mitochondria", "enzyme", "protein", "membrane", "hormone",
                 "neuron", "synapse", "glucose", "ribosome", "chromosome",
                 "pancreas", "digestion", "molecule", "bacteria", "oxygen"]
FINANCE_VOCAB = ["market", "bond", "stock", "yield", "asset", "equity",
                 "dividend", "portfolio", "inflation", "liquidity",
                 "revenue", "margin", "futures", "hedge", "credit"]
SPORTS_VOCAB = ["player", "score", "team", "league", "coach", "season",
                "tournament", "defense", "offense", "stadium", "referee",
                "playoff", "draft", "roster", "basket"]
TRIVIA_VOCAB = ["history", "empire", "river", "treaty", "battle", "monarch",
                "painting", "novel", "composer", "island", "dynasty",
                "expedition", "cathedral", "manuscript", "legend"]

# every dataset shares these, so cross-dataset queries always have candidates
COMMON_VOCAB = ["describe", "several", "common", "example", "general",
                "important", "large", "small", "known", "found"]


def synthetic_rows(vocab, n, seed, common=3):
    rng = random.Random(seed)
    rows = []
    for _ in range(n):
        words = rng.sample(vocab, 5) + rng.sample(COMMON_VOCAB, common)
        rng.shuffle(words)
        rows.append(make_row(words))
    return rows


class HashEmbedder:
    """Deterministic pseudo-embedding provider: text -> seeded unit vector."""

    backend = "test-hash"

    def __init__(self, dim=16):
        self.dim = dim
        self.calls = 0

    def embed(self, texts):
        self.calls += 1
        out = []
        for text in texts:
            seed = int.from_bytes(hashlib.md5(text.encode("utf-8")).digest()[:8],
                                  "little")
            rng = np.random.default_rng(seed)
            vec = rng.standard_normal(self.dim).astype(np.float32)
            vec /= np.linalg.norm(vec)
            out.append(vec)
        return out


class FixedEmbedder:
    """Maps exact texts to caller-chosen vectors."""

    backend = "test-fixed"

    def __init__(self, table, dim):
        self.table = {k: np.asarray(v, dtype=np.float32) for k, v in table.items()}
        self.dim = dim

    def embed(self, texts):
        return [self.table[t] for t in texts]


@pytest.fixture
def hash_embedder():
    return HashEmbedder()


@pytest.fixture
def four_dataset_registry(tmp_path):
    """Four synthetic datasets with disjoint core vocabularies plus shared
    filler words, so cross-dataset candidate pools are never empty."""
    specs = [
        ("sci", "science", SCIENCE_VOCAB, 11),
        ("fin", "finance", FINANCE_VOCAB, 13),
        ("spo", "sports", SPORTS_VOCAB, 17),
        ("tri", "trivia", TRIVIA_VOCAB, 19),
    ]
    entries = []
    for ds_id, cat, vocab, seed in specs:
        rows = synthetic_rows(vocab, 120, seed)
        write_jsonl(tmp_path / f"{ds_id}.jsonl", rows)
        entries.append((ds_id, cat, f"{ds_id}.jsonl", "jsonl", False))
    manifest = write_manifest(tmp_path, entries)
    return load_manifest(manifest)


def build_planted_registry(tmp_path, n_background=40, planted_token="zyzzyva"):
    """Two datasets; 'other' row 0 near-duplicates 'main' row 0 and smuggles
    in the planted token, which therefore lands in main-row-0's HS pool."""
    main_rows = [
        make_row(["pancreas", "accessory", "organ", "digestion", "enzyme"],
                 question="which organ aids digestion",
                 answer="accessory organ"),
    ] + synthetic_rows(SCIENCE_VOCAB, n_background, seed=5)
    other_rows = [
        {"context": f"pancreas accessory organ digestion enzyme {planted_token} gland",
         "question": "which organ aids digestion",
         "answer": f"{planted_token} gland"},
    ] + synthetic_rows(TRIVIA_VOCAB, n_background, seed=6)
    write_jsonl(tmp_path / "main.jsonl", main_rows)
    write_jsonl(tmp_path / "other.jsonl", other_rows)
    manifest = write_manifest(tmp_path, [
        ("main", "science", "main.jsonl", "jsonl", False),
        ("other", "trivia", "other.jsonl", "jsonl", False),
    ])
    return load_manifest(manifest), main_rows[0]


@pytest.fixture
def planted_registry(tmp_path):
    return build_planted_registry(tmp_path)


def planted_four_dataset_registry(tmp_path, n=500, ratio=0.006):
    """Four datasets whose vocabularies are disjoint across datasets, so the
    planted duplicate pairs are the only meaningful cross-dataset signal
    (the margin the deletion ranking needs). Exactly K2(n) rows per dataset
    belong to planted pairs: duplicates chain dataset i -> dataset i+1 with
    source rows in the lower half and paste positions in the upper half.

    Returns (registry, planted_rows_by_dataset, params, copies) where copies
    maps (src_ds, dst_ds) -> [(src_row, dst_row), ...].
    """
    from ksprune.prune import PruneParams

    params = PruneParams(k2_ratio=ratio)
    k2 = params.k2(n)
    assert k2 * 2 <= n // 2, "fixture needs room for distinct rows"
    specs = [("sci", SCIENCE_VOCAB, 101), ("fin", FINANCE_VOCAB, 103),
             ("spo", SPORTS_VOCAB, 107), ("tri", TRIVIA_VOCAB, 109)]
    all_rows = {ds: synthetic_rows(vocab, n, seed, common=0)
                for ds, vocab, seed in specs}
    ids = [s[0] for s in specs]
    planted = {ds: set() for ds in ids}
    copies = {}  # (src_ds, dst_ds) -> [(src_row, dst_row)]
    rng = random.Random(997)
    half = n // 2
    # dataset idx is a source on edge idx and a destination on edge idx-1,
    # so per-edge plant counts alternating (ceil, floor) of k2/2 give every
    # dataset exactly ceil + floor = k2 planted rows.
    per_edge = [(k2 + 1) // 2 if idx % 2 == 0 else k2 // 2
                for idx in range(len(ids))]
    for idx, ds in enumerate(ids):
        nxt = ids[(idx + 1) % len(ids)]
        pair = copies[(ds, nxt)] = []
        for _ in range(per_edge[idx]):
            src_row = rng.randrange(half)
            while src_row in planted[ds]:
                src_row = rng.randrange(half)
            dst_row = half + rng.randrange(half)
            while dst_row in planted[nxt]:
                dst_row = half + rng.randrange(half)
            all_rows[nxt][dst_row] = dict(all_rows[ds][src_row])
            planted[ds].add(src_row)
            planted[nxt].add(dst_row)
            pair.append((src_row, dst_row))
    for ds, _, _ in specs:
        write_jsonl(tmp_path / f"{ds}.jsonl", all_rows[ds])
    manifest = write_manifest(
        tmp_path, [(ds, "misc", f"{ds}.jsonl", "jsonl", False)
                   for ds, _, _ in specs])
    registry = load_manifest(manifest)
    return registry, {ds: sorted(rows) for ds, rows in planted.items()}, \
        params, copies
