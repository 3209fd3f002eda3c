"""Effectiveness metrics over generation and verdict files.

Coarse-grained: per metric, the count of rows whose generated answer is
non-empty with non-zero similarity, and the mean similarity over all rows
(zeros included in the denominator). Paired more/less/equal labeling
compares a variant run against a baseline per metric. Fine-grained counting
partitions a verdict file into knowledge-shortcut / other / not-flagged.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

from . import textnorm
from .embeddings import embed_sim
from .simcore import build_tfidf, jaccard_sim

logger = logging.getLogger(__name__)

EVAL_FIELDS = ("question", "correct_answer", "generated_answer")


class EvalError(Exception):
    pass


@dataclass
class EvalRow:
    dataset_id: str
    row_index: int
    question: str
    correct_answer: str
    generated_answer: str
    jaccard: float = 0.0
    tfidf: float = 0.0
    embed: float | None = None

    def score(self, metric: str):
        return getattr(self, metric)

    def key(self) -> tuple:
        """Pairing key: row ref when present, else a question-text hash."""
        if self.dataset_id and self.row_index >= 0:
            return (self.dataset_id, self.row_index)
        return ("#q", hashlib.md5(self.question.encode("utf-8")).hexdigest())


def load_generation_file(path) -> tuple:
    """Parse a generation JSONL file; malformed rows are counted + skipped."""
    rows, skipped = [], 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                missing = [k for k in EVAL_FIELDS if k not in obj]
                if missing:
                    raise ValueError(f"missing fields: {missing}")
                rows.append(EvalRow(
                    dataset_id=obj.get("dataset_id", ""),
                    row_index=int(obj.get("row_index", -1)),
                    question=str(obj["question"]),
                    correct_answer=str(obj["correct_answer"]),
                    generated_answer=str(obj["generated_answer"])))
            except (json.JSONDecodeError, ValueError, TypeError) as exc:
                skipped += 1
                logger.warning("%s:%d: skipping malformed row: %s", path, lineno, exc)
    return rows, skipped


def score_generations(rows: list, embed_provider=None,
                      stopwords=None) -> list:
    """Fill in per-row similarity scores between generated and correct
    answers.

    The TF-IDF model is fitted on this file alone (all correct plus all
    generated answers), keeping evaluation runs self-contained. The embed
    column stays None without a provider.
    """
    if not rows:
        return rows
    stop = textnorm.DEFAULT_STOPWORDS if stopwords is None else stopwords
    corpus = [r.correct_answer for r in rows] + [r.generated_answer for r in rows]
    model = build_tfidf(corpus) if any(t.strip() for t in corpus) else None
    for row in rows:
        a = textnorm.content_set(textnorm.norm_tokens(row.correct_answer), stopwords=stop)
        b = textnorm.content_set(textnorm.norm_tokens(row.generated_answer), stopwords=stop)
        row.jaccard = jaccard_sim(a, b)
        row.tfidf = (model.cosine_texts(row.correct_answer, row.generated_answer)
                     if model else 0.0)
        if embed_provider is not None:
            if row.generated_answer.strip() and row.correct_answer.strip():
                row.embed = embed_sim(embed_provider, row.correct_answer,
                                      row.generated_answer)
            else:
                row.embed = 0.0
    return rows


def active_metrics(rows: list) -> list:
    metrics = ["jaccard", "tfidf"]
    if rows and all(r.embed is not None for r in rows):
        metrics.append("embed")
    return metrics


def coarse_metrics(rows: list) -> dict:
    """Per metric: (non-zero-and-non-empty row count, mean over all rows)."""
    if not rows:
        raise EvalError("cannot compute coarse metrics over zero rows")
    out = {}
    for metric in active_metrics(rows):
        scores = [r.score(metric) for r in rows]
        count = sum(1 for r, s in zip(rows, scores)
                    if r.generated_answer != "" and s > 0.0)
        mean = math.fsum(scores) / len(scores)
        out[metric] = {"count": count, "mean": mean}
    return out


def label_against_baseline(baseline: list, variant: list) -> dict:
    """Per-metric more/less/equal labels for every paired query.

    Both files must cover exactly the same query keys; anything else is a
    hard error because the labels are paired comparisons.
    """
    base_by_key = {r.key(): r for r in baseline}
    var_by_key = {r.key(): r for r in variant}
    if len(base_by_key) != len(baseline) or len(var_by_key) != len(variant):
        raise EvalError("duplicate query keys inside a run; cannot pair rows")
    if set(base_by_key) != set(var_by_key):
        missing = set(base_by_key) ^ set(var_by_key)
        raise EvalError(f"baseline/variant query sets differ on {len(missing)} keys "
                        f"(e.g. {sorted(missing)[:3]})")
    metrics = [m for m in active_metrics(baseline) if m in active_metrics(variant)]
    labels = {m: {} for m in metrics}
    histogram = {m: {"more": 0, "less": 0, "equal": 0} for m in metrics}
    for key in sorted(base_by_key):
        b, v = base_by_key[key], var_by_key[key]
        for metric in metrics:
            if v.score(metric) > b.score(metric):
                label = "more"
            elif v.score(metric) < b.score(metric):
                label = "less"
            else:
                label = "equal"
            labels[metric][key] = label
            histogram[metric][label] += 1
    return {"labels": labels, "histogram": histogram}


def count_ks(verdict_path) -> dict:
    """Partition a verdict JSONL file into the three classifications."""
    counts = {"ks_hallucination": 0, "other_hallucination": 0,
              "not_flagged": 0, "malformed": 0}
    with open(verdict_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                cls = obj["classification"]
                if cls not in ("ks_hallucination", "other_hallucination",
                               "not_flagged"):
                    raise ValueError(f"unknown classification {cls!r}")
            except (json.JSONDecodeError, ValueError, KeyError) as exc:
                counts["malformed"] += 1
                logger.warning("%s:%d: malformed verdict: %s", verdict_path,
                               lineno, exc)
                continue
            counts[cls] += 1
    return counts


def report_json(rows: list, metrics: dict, labels: dict | None = None,
                ks_counts: dict | None = None, config: dict | None = None) -> dict:
    report = {
        "total_rows": len(rows),
        "metrics": metrics,
    }
    if labels is not None:
        report["label_histogram"] = labels["histogram"]
    if ks_counts is not None:
        report["ks_counts"] = ks_counts
    if config is not None:
        report["config"] = config
    return report


def write_scores_csv(rows: list, path) -> None:
    with open(Path(path), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["dataset_id", "row_index", "question",
                         "correct_answer", "generated_answer",
                         "jaccard", "tfidf", "embed"])
        for r in rows:
            writer.writerow([r.dataset_id, r.row_index, r.question,
                             r.correct_answer, r.generated_answer,
                             f"{r.jaccard:.17g}", f"{r.tfidf:.17g}",
                             "" if r.embed is None else f"{r.embed:.17g}"])
