"""Cross-dataset high-similarity pruning.

For every ordered dataset pair (source, target) each source row queries the
target's top-K1 rows under both the Jaccard and TF-IDF channels over full
CQA text. Per pair, target rows are aggregated into a High-Frequency group
(most list appearances) and a High-Value group (largest scores), each capped
at K2 = ceil(k2_ratio * |target|). Deletion candidates pooled across all
sources are ranked by the fused score

    s(r) = alpha1 * freq(r)/max_freq + alpha2 * max_score(r)/max_score_max

and the top K2 rows per target are deleted. Protected datasets are never
modified. Everything is deterministic: identical registry and params give
byte-identical reports regardless of worker count.
"""

from __future__ import annotations

import json
import math
import shutil
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

from . import __version__
from .corpus import CorpusError, DatasetRegistry, write_dataset
from .parallel import parallel_map
from .simcore import SimilarityIndex

PRUNE_METRICS = ("jaccard", "tfidf")


class PruneError(Exception):
    pass


@dataclass
class PruneParams:
    k1: int = 50
    k2_ratio: float = 0.006
    alpha1: float = 0.4
    alpha2: float = 0.1
    respect_protected: bool = True

    def validate(self) -> "PruneParams":
        if self.k1 < 1:
            raise PruneError(f"k1 must be >= 1, got {self.k1}")
        if not 0.0 < self.k2_ratio < 1.0:
            raise PruneError(f"k2_ratio must be in (0, 1), got {self.k2_ratio}")
        if self.alpha1 < 0.0 or self.alpha2 < 0.0:
            raise PruneError("alpha1 and alpha2 must be non-negative")
        if self.alpha1 + self.alpha2 <= 0.0:
            raise PruneError("alpha1 + alpha2 must be positive")
        return self

    def k2(self, target_rows: int) -> int:
        """ceil(k2_ratio * rows), computed in exact decimal arithmetic so a
        ratio like 0.006 never rounds 3.0 up to 4 through float noise."""
        if target_rows <= 0:
            return 0
        exact = Fraction(str(self.k2_ratio)) * target_rows
        return int(math.ceil(exact))

    def as_dict(self) -> dict:
        return {"k1": self.k1, "k2_ratio": self.k2_ratio, "alpha1": self.alpha1,
                "alpha2": self.alpha2, "respect_protected": self.respect_protected}


@dataclass
class CandidateStat:
    """Aggregate of every top-K appearance of one target row in one pair."""

    row: int
    frequency: int = 0
    max_score: float = 0.0
    max_metric: str = ""
    hits: list = field(default_factory=list)  # (source_row, metric, score, rank)

    def add(self, source_row: int, metric: str, score: float, rank: int):
        self.frequency += 1
        # prefer the alphabetically first metric on exact score ties
        if score > self.max_score or (score == self.max_score
                                      and (not self.max_metric or metric < self.max_metric)):
            self.max_score = score
            self.max_metric = metric
        self.hits.append((source_row, metric, score, rank))


@dataclass
class HsGroup:
    """High-Frequency / High-Value candidate lists for one (source, target)."""

    source_dataset: str
    target_dataset: str
    k2: int
    g_hf: list
    g_hv: list
    candidates: dict  # row -> CandidateStat, the full per-pair aggregate


def compute_hs_groups(index: SimilarityIndex, source_id: str, target_id: str,
                      params: PruneParams, workers: int = 1) -> HsGroup:
    """Aggregate both metrics' top-K1 hits of every source row into a target's
    HF and HV groups."""
    if source_id == target_id:
        raise PruneError("source and target dataset must differ")
    source_index = index.datasets[source_id]
    target_rows = len(index.datasets[target_id])
    k2 = params.k2(target_rows)

    def query_row(source_row: int) -> list:
        text = source_index.row_texts[source_row]
        hits = []
        for metric in PRUNE_METRICS:
            hits.extend(index.topk_cross(text, target_id, metric, params.k1,
                                         source=(source_id, source_row)))
        return hits

    per_row_hits = parallel_map(query_row, range(len(source_index)), workers)

    candidates = {}
    for hits in per_row_hits:
        for hit in hits:
            row = hit.target[1]
            stat = candidates.get(row)
            if stat is None:
                stat = candidates[row] = CandidateStat(row)
            stat.add(hit.source[1], hit.metric, hit.score, hit.rank)

    ranked = list(candidates.values())
    g_hf = sorted(ranked, key=lambda c: (-c.frequency, -c.max_score, c.row))[:k2]
    g_hv = sorted(ranked, key=lambda c: (-c.max_score, c.row))[:k2]
    return HsGroup(source_id, target_id, k2, g_hf, g_hv, candidates)


def select_deletions(groups: list, params: PruneParams,
                     protected: bool = False) -> list:
    """Fuse one target's groups from every source into its deletion set.

    Candidates are the union of all HF and HV members; their frequencies sum
    and their max scores max across pairs. Both components are normalized by
    the pool maximum, so scaling (alpha1, alpha2) by any positive constant
    leaves the selection unchanged.
    """
    if protected:
        return []
    if not groups:
        return []
    k2 = groups[0].k2
    pooled = {}  # row -> [frequency, max_score]
    for group in groups:
        if group.k2 != k2:
            raise PruneError("groups for one target disagree on K2; "
                             "they must be computed with identical params")
        for stat in {c.row: c for c in group.g_hf + group.g_hv}.values():
            entry = pooled.get(stat.row)
            if entry is None:
                pooled[stat.row] = [stat.frequency, stat.max_score]
            else:
                entry[0] += stat.frequency
                entry[1] = max(entry[1], stat.max_score)
    if not pooled:
        return []
    max_freq = max(freq for freq, _ in pooled.values())
    max_score = max(score for _, score in pooled.values())

    def fused(row) -> float:
        freq, score = pooled[row]
        fhat = freq / max_freq if max_freq > 0 else 0.0
        vhat = score / max_score if max_score > 0 else 0.0
        return params.alpha1 * fhat + params.alpha2 * vhat

    ordered = sorted(pooled, key=lambda r: (-fused(r), -pooled[r][0],
                                            -pooled[r][1], r))
    return sorted(ordered[:k2])


@dataclass
class PruneReport:
    params: PruneParams
    pairs: list          # HsGroup per ordered (source, target)
    deletions: dict      # dataset_id -> sorted row list
    index_maps: dict     # dataset_id -> {old_row: new_row} for survivors
    reductions: dict     # dataset_id -> deleted fraction
    evidence: dict       # dataset_id -> {row: [hit dicts]} for deleted rows
    config: dict | None = None  # resolved run config echoed by the CLI

    def row_count(self, dataset_id: str) -> int:
        return len(self.index_maps[dataset_id]) + len(self.deletions[dataset_id])

    def to_json_obj(self) -> dict:
        pairs = []
        for group in self.pairs:
            pairs.append({
                "source": group.source_dataset,
                "target": group.target_dataset,
                "k2": group.k2,
                "g_hf": [{"row": c.row, "frequency": c.frequency,
                          "max_score": c.max_score, "metric": c.max_metric}
                         for c in group.g_hf],
                "g_hv": [{"row": c.row, "frequency": c.frequency,
                          "max_score": c.max_score, "metric": c.max_metric}
                         for c in group.g_hv],
            })
        return {
            "version": __version__,
            "config": self.config,
            "params": self.params.as_dict(),
            "pairs": pairs,
            "deletions": {k: list(v) for k, v in self.deletions.items()},
            "index_maps": {k: {str(old): new for old, new in sorted(v.items())}
                           for k, v in self.index_maps.items()},
            "reductions": self.reductions,
            "evidence": self.evidence,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), sort_keys=True, ensure_ascii=False,
                          indent=2) + "\n"


def compute_r_all(registry: DatasetRegistry, params: PruneParams,
                  index: SimilarityIndex | None = None,
                  workers: int = 1) -> PruneReport:
    """Run the full pruning pass over every ordered dataset pair."""
    params.validate()
    if len(registry) < 2:
        raise PruneError("pruning needs cross-dataset pairs; "
                         "register at least 2 datasets")
    if index is None:
        index = SimilarityIndex(registry)

    ids = registry.dataset_ids
    pair_list = [(src, tgt) for src in ids for tgt in ids if src != tgt]
    groups = {}
    for src, tgt in pair_list:
        groups[(src, tgt)] = compute_hs_groups(index, src, tgt, params, workers)

    deletions, index_maps, reductions, evidence = {}, {}, {}, {}
    for entry in registry:
        tgt = entry.dataset_id
        tgt_groups = [groups[(src, tgt)] for src in ids if src != tgt]
        protected = entry.protected and params.respect_protected
        deleted = select_deletions(tgt_groups, params, protected=protected)
        deleted_set = set(deleted)
        deletions[tgt] = deleted
        new_index, mapping = 0, {}
        for rec in entry.records:
            if rec.row_index not in deleted_set:
                mapping[rec.row_index] = new_index
                new_index += 1
        index_maps[tgt] = mapping
        n = len(entry.records)
        reductions[tgt] = (len(deleted) / n) if n else 0.0
        row_evidence = {}
        for row in deleted:
            hits = []
            for group in tgt_groups:
                stat = group.candidates.get(row)
                if stat is None:
                    continue
                for source_row, metric, score, rank in stat.hits:
                    hits.append({"source_dataset": group.source_dataset,
                                 "source_row": source_row, "metric": metric,
                                 "score": score, "rank": rank})
            if not hits or not any(h["score"] > 0 for h in hits):
                raise PruneError(f"row {tgt}:{row} selected for deletion "
                                 "without a positive-score contributing hit")
            row_evidence[str(row)] = hits
        evidence[tgt] = row_evidence

    return PruneReport(params, [groups[p] for p in pair_list],
                       deletions, index_maps, reductions, evidence)


def apply_prune(registry: DatasetRegistry, report: PruneReport, out_dir) -> Path:
    """Write pruned datasets, a reload-ready manifest and the report JSON.

    Survivors keep their original relative order and are re-indexed densely;
    survivors plus deletions must exactly partition each dataset.
    """
    if sorted(report.deletions) != sorted(registry.dataset_ids):
        raise CorpusError("prune report datasets do not match the registry")
    for entry in registry:
        if report.row_count(entry.dataset_id) != len(entry.records):
            raise CorpusError(
                f"prune report row count for {entry.dataset_id!r} "
                f"({report.row_count(entry.dataset_id)}) does not match "
                f"the registry ({len(entry.records)})")

    out = Path(out_dir)
    if out.exists():
        raise CorpusError(f"output directory already exists: {out}")
    staging = out.parent / (out.name + ".partial")
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir(parents=True)
    try:
        manifest = {"datasets": []}
        for entry in registry:
            deleted = set(report.deletions[entry.dataset_id])
            survivors = []
            for rec in entry.records:
                if rec.row_index in deleted:
                    continue
                survivors.append(replace(rec, row_index=len(survivors)))
            if len(survivors) + len(deleted) != len(entry.records):
                raise CorpusError(
                    f"partition violated for {entry.dataset_id!r}")
            filename = entry.path.name
            write_dataset(survivors, staging / filename, entry.format,
                          csv_header=entry.csv_header)
            manifest["datasets"].append({
                "id": entry.dataset_id, "category": entry.category,
                "path": filename, "format": entry.format,
                "protected": entry.protected,
            })
        (staging / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", "utf-8")
        (staging / "prune_report.json").write_text(report.to_json(), "utf-8")
        staging.rename(out)
    except Exception:
        if staging.exists():
            shutil.rmtree(staging)
        raise
    return out
