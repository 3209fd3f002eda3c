"""Knowledge-shortcut hallucination detection.

The gate chain for one query:

1. retrieve the most TF-IDF-similar registered row for the CQ text;
2. build the high-similarity token pool from that row's cross-dataset
   HF/HV groups (context + answer tokens of the group rows);
3. self-check: score = mean over samples of (1 - Sim(A_o, A_l)); flag a
   potential hallucination when the score exceeds alpha3;
4. S_o = Set(A_o) - Set(CQ) over lemmatized, stopword-free tokens;
5. intersect S_o with the pool.

Flagged + non-empty S_o + non-empty intersection = knowledge-shortcut
hallucination; flagged without both = some other hallucination; unflagged
queries are never classified as hallucinations. Toggling any gate off can
only demote a verdict, never promote it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from . import textnorm
from .embeddings import embed_sim
from .generation import GenerationBundle
from .simcore import METRICS, SimcoreError, SimilarityIndex, build_tfidf, jaccard_sim, query_text

KS_HALLUCINATION = "ks_hallucination"
OTHER_HALLUCINATION = "other_hallucination"
NOT_FLAGGED = "not_flagged"


class DetectError(Exception):
    pass


@dataclass
class SelfCheckParams:
    m: int = 5
    alpha3: float = 0.2
    sim_metric: str = "embed"

    def validate(self) -> "SelfCheckParams":
        if self.m < 1:
            raise DetectError(f"sample count m must be >= 1, got {self.m}")
        if not 0.0 <= self.alpha3 <= 1.0:
            raise DetectError(f"alpha3 must be in [0, 1], got {self.alpha3}")
        if self.sim_metric not in METRICS:
            raise DetectError(f"sim_metric must be one of {METRICS}")
        return self

    def as_dict(self) -> dict:
        return {"m": self.m, "alpha3": self.alpha3, "sim_metric": self.sim_metric}


@dataclass
class DetectParams:
    """Detection-time knobs: group size K1 mirrors pruning; kv sizes the
    single-query High-Value group, which has no dataset-length analog."""

    k1: int = 50
    kv: int = 10
    eq5_literal: bool = False

    def as_dict(self) -> dict:
        return {"k1": self.k1, "kv": self.kv, "eq5_literal": self.eq5_literal}


@dataclass
class SelfCheckResult:
    score: float
    flagged: bool
    empty_generation: bool = False


@dataclass
class HsPool:
    """Token pool with provenance: token -> [(dataset, row, metric, rank)]."""

    tokens: dict = field(default_factory=dict)
    group_rows: dict = field(default_factory=dict)  # dataset -> sorted rows

    def __contains__(self, token) -> bool:
        return token in self.tokens


@dataclass
class DetectionVerdict:
    query: tuple
    nearest: tuple            # (dataset_id, row_index, score, no_signal)
    self_check: SelfCheckResult
    s_o: list
    shortcut_tokens: dict     # token -> provenance list
    classification: str
    a_o: str = ""
    error: str | None = None

    def to_json_obj(self) -> dict:
        return {
            "query": {"dataset_id": self.query[0], "row_index": self.query[1]},
            "nearest": {"dataset_id": self.nearest[0], "row_index": self.nearest[1],
                        "score": self.nearest[2], "no_signal": self.nearest[3]},
            "self_check": {"score": self.self_check.score,
                           "flagged": self.self_check.flagged,
                           "empty_generation": self.self_check.empty_generation},
            "s_o": self.s_o,
            "shortcut_tokens": {
                tok: [{"dataset_id": d, "row_index": r, "metric": m, "rank": k}
                      for d, r, m, k in prov]
                for tok, prov in self.shortcut_tokens.items()},
            "classification": self.classification,
            "a_o": self.a_o,
            "error": self.error,
        }

    def to_json_line(self) -> str:
        return json.dumps(self.to_json_obj(), sort_keys=True, ensure_ascii=False)


def nearest_cqa(index: SimilarityIndex, cq_text: str) -> tuple:
    """(dataset_id, row_index, score, no_signal) of the closest stored row."""
    return index.nearest(cq_text)


def detection_hs_pool(index: SimilarityIndex, nearest_dataset: str,
                      nearest_row: int, k1: int = 50, kv: int = 10) -> HsPool:
    """Cross-dataset HF/HV rows of the nearest entry, flattened to a token
    pool.

    Per other dataset: HF = rows present in both metrics' top-k1 lists
    (frequency 2), HV = top kv rows by max score across both lists. Pool
    tokens come from each group row's context + answer, lemmatized and
    stopword-filtered, each carrying (dataset, row, metric, rank) provenance.
    """
    registry = index.registry
    nearest_rec = registry.get_record(nearest_dataset, nearest_row)
    query = query_text(nearest_rec, "CQA")
    pool = HsPool()
    for entry in registry:
        if entry.dataset_id == nearest_dataset:
            continue
        hit_lists = {
            metric: index.topk_cross(query, entry.dataset_id, metric, k1,
                                     source=(nearest_dataset, nearest_row))
            for metric in ("jaccard", "tfidf")
        }
        by_row = {}
        for metric, hits in hit_lists.items():
            for hit in hits:
                by_row.setdefault(hit.target[1], []).append(hit)
        hf_rows = {row for row, hits in by_row.items() if len(hits) == 2}
        hv_ranked = sorted(by_row,
                           key=lambda r: (-max(h.score for h in by_row[r]), r))
        hv_rows = set(hv_ranked[:kv])
        group = sorted(hf_rows | hv_rows)
        if not group:
            continue
        pool.group_rows[entry.dataset_id] = group
        for row in group:
            rec = entry.records[row]
            toks = textnorm.content_set(
                textnorm.norm_tokens(" ".join(p for p in (rec.context, rec.answer) if p)),
                drop_stopwords=True, stopwords=index.stopwords)
            prov = [(entry.dataset_id, row, h.metric, h.rank) for h in by_row[row]]
            for tok in toks:
                pool.tokens.setdefault(tok, []).extend(prov)
    return pool


def _tfidf_pair_sim(texts: list):
    """Similarity callable over a bundle's own answers (evaluation-local fit)."""
    try:
        model = build_tfidf([t for t in texts if t.strip()] or [""])
    except SimcoreError:
        return lambda a, b: 0.0
    return model.cosine_texts


def make_sim_fn(params: SelfCheckParams, bundle: GenerationBundle,
                embed_provider=None, stopwords=None):
    if params.sim_metric == "embed":
        if embed_provider is None:
            raise DetectError("embed self-check requires an embedding provider")
        return lambda a, b: embed_sim(embed_provider, a, b)
    if params.sim_metric == "jaccard":
        def jac(a, b):
            return jaccard_sim(
                textnorm.content_set(textnorm.norm_tokens(a), stopwords=stopwords),
                textnorm.content_set(textnorm.norm_tokens(b), stopwords=stopwords))
        return jac
    return _tfidf_pair_sim([bundle.a_o] + list(bundle.samples))


def self_check(bundle: GenerationBundle, params: SelfCheckParams,
               sim_fn) -> SelfCheckResult:
    """Mean dissimilarity of the primary answer to its m resamples.

    Empty primary answers short-circuit to score 1.0 and are marked, so a
    model that generated nothing is always treated as a potential
    hallucination. The score is permutation-invariant over samples.
    """
    params.validate()
    if len(bundle.samples) != params.m:
        raise DetectError(
            f"bundle has {len(bundle.samples)} samples, params.m={params.m}")
    if not bundle.a_o.strip():
        return SelfCheckResult(score=1.0, flagged=True, empty_generation=True)
    terms = []
    for sample in bundle.samples:
        sim = sim_fn(bundle.a_o, sample)
        terms.append(min(1.0, max(0.0, 1.0 - sim)))
    # fsum is exactly rounded, so the score is permutation-invariant
    score = min(1.0, max(0.0, math.fsum(terms) / params.m))
    return SelfCheckResult(score=score, flagged=score > params.alpha3)


def classify(bundle: GenerationBundle, index: SimilarityIndex,
             check_params: SelfCheckParams,
             detect_params: DetectParams | None = None,
             embed_provider=None) -> DetectionVerdict:
    """Run the full gate chain for one generated bundle."""
    detect_params = detect_params or DetectParams()
    cq_text = " ".join(p for p in (bundle.context, bundle.question) if p)
    nearest = nearest_cqa(index, cq_text)
    pool = detection_hs_pool(index, nearest[0], nearest[1],
                             k1=detect_params.k1, kv=detect_params.kv)
    sim_fn = make_sim_fn(check_params, bundle, embed_provider=embed_provider,
                         stopwords=index.stopwords)
    check = self_check(bundle, check_params, sim_fn)

    answer_set = textnorm.content_set(textnorm.norm_tokens(bundle.a_o),
                                      stopwords=index.stopwords)
    cq_set = textnorm.content_set(textnorm.norm_tokens(cq_text),
                                  stopwords=index.stopwords)
    s_o = answer_set - cq_set
    intersect_base = answer_set if detect_params.eq5_literal else s_o
    shortcut = {tok: pool.tokens[tok] for tok in sorted(intersect_base)
                if tok in pool}

    if not check.flagged:
        classification = NOT_FLAGGED
    elif s_o and shortcut:
        classification = KS_HALLUCINATION
    else:
        classification = OTHER_HALLUCINATION
    return DetectionVerdict(
        query=bundle.query_key, nearest=nearest, self_check=check,
        s_o=sorted(s_o), shortcut_tokens=shortcut,
        classification=classification, a_o=bundle.a_o)
