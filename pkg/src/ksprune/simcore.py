"""Similarity metrics and exact cross-dataset top-K retrieval.

Three channels, one normalization:

* Jaccard over lemmatized, stopword-free token sets;
* TF-IDF cosine over lemmatized tokens with stopwords kept, weights
  tf(t,d) * max(0, ln(N / (1 + df(t)))), vectors L2-normalized;
* embedding cosine through a pluggable provider, clamped at zero.

Retrieval uses inverted indexes purely for candidate generation: every
candidate sharing a token/term with the query is scored exactly, so results
are identical to a brute-force scan. Dot products accumulate with math.fsum
over terms in sorted order, which keeps scores bit-reproducible regardless
of worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import textnorm
from .embeddings import cosine as vec_cosine


class SimcoreError(Exception):
    pass


FIELD_SCOPES = ("CQ", "CQA", "A")
METRICS = ("jaccard", "tfidf", "embed")


def query_text(record, scope: str = "CQA") -> str:
    """Concatenate a record's text fields; empty fields collapse away."""
    if scope == "CQ":
        parts = (record.context, record.question)
    elif scope == "CQA":
        parts = (record.context, record.question, record.answer)
    elif scope == "A":
        parts = (record.answer,)
    else:
        raise SimcoreError(f"unknown field scope {scope!r}")
    return " ".join(p for p in parts if p)


def jaccard_sim(a: set, b: set) -> float:
    """|A n B| / |A u B|; both sets empty gives 0 by convention."""
    if not a and not b:
        return 0.0
    inter = len(a & b)
    if inter == 0:
        return 0.0
    return inter / (len(a) + len(b) - inter)


def _dot_sorted(va: dict, vb: dict) -> float:
    if len(vb) < len(va):
        va, vb = vb, va
    dot = math.fsum(w * vb[t] for t, w in sorted(va.items()) if t in vb)
    # unit-vector dot can overshoot 1 by an ulp; keep scores in [0, 1]
    return dot if dot < 1.0 else 1.0


@dataclass
class TfIdfModel:
    """Corpus-fitted TF-IDF weights (see module docstring for formulas)."""

    n_docs: int
    df: dict
    idf: dict
    vectors: dict  # key -> unit-norm sparse vector {term: weight}

    @property
    def vocabulary(self) -> dict:
        return {term: i for i, term in enumerate(sorted(self.df))}

    def raw_vector(self, tokens: list) -> dict:
        if not tokens:
            return {}
        counts = {}
        for tok in tokens:
            counts[tok] = counts.get(tok, 0) + 1
        total = len(tokens)
        vec = {}
        for term in counts:
            idf = self.idf.get(term, 0.0)
            if idf > 0.0:
                vec[term] = (counts[term] / total) * idf
        return vec

    def unit_vector(self, tokens: list) -> dict:
        vec = self.raw_vector(tokens)
        norm = math.sqrt(math.fsum(w * w for _, w in sorted(vec.items())))
        if norm == 0.0:
            return {}
        return {t: w / norm for t, w in vec.items()}

    def vectorize_text(self, text: str) -> dict:
        return self.unit_vector(textnorm.norm_tokens(text))

    def cosine_vectors(self, va: dict, vb: dict) -> float:
        if not va or not vb:
            return 0.0
        return _dot_sorted(va, vb)

    def cosine_texts(self, text_a: str, text_b: str) -> float:
        return self.cosine_vectors(self.vectorize_text(text_a),
                                   self.vectorize_text(text_b))


def build_tfidf(texts: list, keys: list | None = None) -> TfIdfModel:
    """Fit a TF-IDF model over a corpus of documents.

    Tokens are lemmatized, stopwords kept. idf(t) = max(0, ln(N/(1+df)));
    the clamp keeps weights non-negative on tiny corpora where the raw
    logarithm dips below zero.
    """
    if not texts:
        raise SimcoreError("cannot fit a TF-IDF model on an empty corpus")
    if keys is None:
        keys = list(range(len(texts)))
    token_lists = [textnorm.norm_tokens(t) for t in texts]
    if all(not toks for toks in token_lists):
        raise SimcoreError("all documents tokenize to nothing; corpus is empty")
    n = len(token_lists)
    df = {}
    for toks in token_lists:
        for term in set(toks):
            df[term] = df.get(term, 0) + 1
    idf = {}
    for term, count in df.items():
        val = math.log(n / (1 + count))
        idf[term] = val if val > 0.0 else 0.0
    model = TfIdfModel(n_docs=n, df=df, idf=idf, vectors={})
    for key, toks in zip(keys, token_lists):
        model.vectors[key] = model.unit_vector(toks)
    return model


def tfidf_cosine(model: TfIdfModel, a, b) -> float:
    """Cosine between two documents given as model keys or raw texts."""
    va = model.vectors[a] if a in model.vectors else model.vectorize_text(a)
    vb = model.vectors[b] if b in model.vectors else model.vectorize_text(b)
    return model.cosine_vectors(va, vb)


def tf_cosine(text_a: str, text_b: str) -> float:
    """Term-frequency cosine with uniform idf.

    Fallback for pairwise scoring without a fitting corpus: corpus idf
    over just two documents is log(2/2) = 0 for every shared term, which
    zeroes all vectors, so plain tf cosine is the only sane degenerate case.
    """
    def unit(tokens):
        if not tokens:
            return {}
        counts = {}
        for tok in tokens:
            counts[tok] = counts.get(tok, 0) + 1
        total = len(tokens)
        norm = math.sqrt(math.fsum((c / total) ** 2 for _, c in sorted(counts.items())))
        return {t: (c / total) / norm for t, c in counts.items()}

    va = unit(textnorm.norm_tokens(text_a))
    vb = unit(textnorm.norm_tokens(text_b))
    if not va or not vb:
        return 0.0
    return _dot_sorted(va, vb)


@dataclass
class SimilarityHit:
    source: tuple   # (dataset_id, row_index); (, -1) for ad-hoc queries
    target: tuple
    metric: str
    score: float
    rank: int


class _DatasetIndex:
    """Inverted indexes over one dataset's full-CQA row texts."""

    def __init__(self, dataset_id: str, row_texts: list, model: TfIdfModel,
                 stopwords):
        self.dataset_id = dataset_id
        self.row_texts = row_texts
        self.jac_sets = []
        self.jac_postings = {}
        self.tfidf_vectors = []
        self.tfidf_postings = {}
        self._embeddings = None
        for row, text in enumerate(row_texts):
            toks = textnorm.norm_tokens(text)
            jset = frozenset(t for t in toks if t not in stopwords)
            self.jac_sets.append(jset)
            for tok in sorted(jset):
                self.jac_postings.setdefault(tok, []).append(row)
            vec = model.unit_vector(toks)
            self.tfidf_vectors.append(vec)
            for term in sorted(vec):
                self.tfidf_postings.setdefault(term, []).append(row)

    def __len__(self):
        return len(self.row_texts)

    def embeddings(self, provider):
        if self._embeddings is None:
            self._embeddings = provider.embed(self.row_texts)
        return self._embeddings

    def score_jaccard(self, query_set) -> dict:
        shared = {}
        for tok in sorted(query_set):
            for row in self.jac_postings.get(tok, ()):
                shared[row] = shared.get(row, 0) + 1
        qlen = len(query_set)
        return {row: c / (qlen + len(self.jac_sets[row]) - c)
                for row, c in shared.items()}

    def score_tfidf(self, query_vec) -> dict:
        contribs = {}
        for term, qw in sorted(query_vec.items()):
            for row in self.tfidf_postings.get(term, ()):
                contribs.setdefault(row, []).append(qw * self.tfidf_vectors[row][term])
        return {row: min(s, 1.0) for row, parts in contribs.items()
                if (s := math.fsum(parts)) > 0.0}

    def score_embed(self, query_vec, provider) -> dict:
        scores = {}
        for row, vec in enumerate(self.embeddings(provider)):
            raw = vec_cosine(query_vec, vec)
            if raw > 0.0:
                scores[row] = raw
        return scores


class SimilarityIndex:
    """Registry-wide retrieval: one global TF-IDF model, per-dataset indexes.

    The model is fitted over the full-CQA text of every registered row, so
    idf values are stable across all pruning and detection queries.
    """

    def __init__(self, registry, stopwords=None, embed_provider=None):
        self.registry = registry
        self.stopwords = textnorm.DEFAULT_STOPWORDS if stopwords is None else stopwords
        self.embed_provider = embed_provider
        texts, keys = [], []
        for entry in registry:
            for rec in entry.records:
                keys.append((entry.dataset_id, rec.row_index))
                texts.append(query_text(rec, "CQA"))
        if not texts:
            raise SimcoreError("registry contains no rows to index")
        self.model = build_tfidf(texts, keys)
        self.datasets = {}
        for entry in registry:
            row_texts = [query_text(rec, "CQA") for rec in entry.records]
            self.datasets[entry.dataset_id] = _DatasetIndex(
                entry.dataset_id, row_texts, self.model, self.stopwords)

    def _jaccard_query_set(self, text: str):
        return frozenset(t for t in textnorm.norm_tokens(text)
                         if t not in self.stopwords)

    def topk_cross(self, query: str, target_dataset: str, metric: str, k: int,
                   source: tuple = ("", -1)) -> list:
        """Exactly the k highest-scoring rows of the target dataset.

        Zero-score rows never appear; ties order by ascending row index.
        Matches a brute-force scan bit-for-bit.
        """
        if k < 1:
            raise SimcoreError(f"k must be >= 1, got {k}")
        if target_dataset not in self.datasets:
            raise SimcoreError(f"unknown dataset {target_dataset!r}")
        index = self.datasets[target_dataset]
        if metric == "jaccard":
            scores = index.score_jaccard(self._jaccard_query_set(query))
        elif metric == "tfidf":
            scores = index.score_tfidf(self.model.vectorize_text(query))
        elif metric == "embed":
            if self.embed_provider is None:
                raise SimcoreError("embed metric requires an embedding provider")
            qvec = self.embed_provider.embed([query])[0]
            scores = index.score_embed(qvec, self.embed_provider)
        else:
            raise SimcoreError(f"unknown metric {metric!r}")
        ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
        return [SimilarityHit(source, (target_dataset, row), metric, score, pos)
                for pos, (row, score) in enumerate(ranked, start=1)]

    def nearest(self, query_cq: str) -> tuple:
        """Most TF-IDF-similar row across every dataset for a CQ query.

        Returns (dataset_id, row_index, score, no_signal). With no shared
        vocabulary anywhere, falls back to the first row of the first
        non-empty dataset with no_signal=True.
        """
        qvec = self.model.vectorize_text(query_cq)
        best = None  # (score, dataset_order, row)
        for order, entry in enumerate(self.registry):
            index = self.datasets[entry.dataset_id]
            scores = index.score_tfidf(qvec) if qvec else {}
            if not scores:
                continue
            row, score = min(scores.items(), key=lambda kv: (-kv[1], kv[0]))
            if best is None or score > best[0]:
                best = (score, order, row)
        if best is not None:
            score, order, row = best
            return self.registry.entries[order].dataset_id, row, score, False
        for entry in self.registry:
            if entry.records:
                return entry.dataset_id, 0, 0.0, True
        raise SimcoreError("registry contains no rows")


def brute_force_topk(index: SimilarityIndex, query: str, target_dataset: str,
                     metric: str, k: int) -> list:
    """Reference scan used for self-audit; same contract as topk_cross."""
    dataset = index.datasets[target_dataset]
    scores = {}
    if metric == "jaccard":
        qset = index._jaccard_query_set(query)
        for row, rset in enumerate(dataset.jac_sets):
            s = jaccard_sim(qset, rset)
            if s > 0.0:
                scores[row] = s
    elif metric == "tfidf":
        qvec = index.model.vectorize_text(query)
        for row, rvec in enumerate(dataset.tfidf_vectors):
            s = index.model.cosine_vectors(qvec, rvec)
            if s > 0.0:
                scores[row] = s
    elif metric == "embed":
        qvec = index.embed_provider.embed([query])[0]
        for row, rvec in enumerate(dataset.embeddings(index.embed_provider)):
            s = vec_cosine(qvec, rvec)
            if s > 0.0:
                scores[row] = s
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    return [SimilarityHit(("", -1), (target_dataset, row), metric, score, pos)
            for pos, (row, score) in enumerate(ranked, start=1)]
