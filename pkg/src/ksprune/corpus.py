"""Dataset ingestion, validation and registry.

Loads multi-source CQA datasets from disk into an addressable in-memory
registry with stable, dense row indices. Text is kept as opaque UTF-8:
no normalization happens here, so written-back JSONL rows are byte-faithful
to their source lines.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

VALID_FORMATS = ("jsonl", "csv")
CORE_FIELDS = ("context", "question", "answer")


class CorpusError(Exception):
    """Fatal configuration or consistency error (bad manifest, bad rows)."""


class RecordNotFoundError(CorpusError):
    """Lookup of an unknown dataset id or out-of-range row index."""


@dataclass
class CqaRecord:
    """One (context, question, answer) row of a registered dataset."""

    dataset_id: str
    row_index: int
    context: str
    question: str
    answer: str
    category: str = ""
    extra: dict = field(default_factory=dict)   # opaque pass-through columns
    raw: str | None = None                      # original JSONL line, if any

    def text_fields_equal(self, other: "CqaRecord") -> bool:
        return (self.context, self.question, self.answer) == (
            other.context, other.question, other.answer)


@dataclass
class DatasetEntry:
    dataset_id: str
    category: str
    path: Path
    format: str
    protected: bool
    records: list
    csv_header: list | None = None
    skipped_rows: int = 0

    def __len__(self) -> int:
        return len(self.records)


class DatasetRegistry:
    """Ordered, immutable-after-load collection of datasets.

    Iteration order is manifest order; records are addressed by
    (dataset_id, row_index). Safe for concurrent reads.
    """

    def __init__(self, entries: list):
        self.entries = list(entries)
        self._by_id = {e.dataset_id: e for e in self.entries}
        if len(self._by_id) != len(self.entries):
            raise CorpusError("duplicate dataset ids in registry")

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def dataset_ids(self) -> list:
        return [e.dataset_id for e in self.entries]

    def entry(self, dataset_id: str) -> DatasetEntry:
        try:
            return self._by_id[dataset_id]
        except KeyError:
            raise RecordNotFoundError(f"unknown dataset id: {dataset_id!r}") from None

    def get_record(self, dataset_id: str, row_index: int) -> CqaRecord:
        entry = self.entry(dataset_id)
        if not 0 <= row_index < len(entry.records):
            raise RecordNotFoundError(
                f"row index {row_index} out of range for dataset "
                f"{dataset_id!r} with {len(entry.records)} rows")
        return entry.records[row_index]

    def row_count(self, dataset_id: str) -> int:
        return len(self.entry(dataset_id).records)


def get_record(registry: DatasetRegistry, dataset_id: str, row_index: int) -> CqaRecord:
    return registry.get_record(dataset_id, row_index)


def _require_str(value, name: str) -> str:
    if not isinstance(value, str):
        raise ValueError(f"field {name!r} must be a string, got {type(value).__name__}")
    return value


def _parse_jsonl_line(line: str, dataset_id: str, category: str, row_index: int) -> CqaRecord:
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise ValueError("row is not a JSON object")
    missing = [k for k in CORE_FIELDS if k not in obj]
    if missing:
        raise ValueError(f"missing fields: {', '.join(missing)}")
    context = _require_str(obj["context"], "context")
    question = _require_str(obj["question"], "question")
    answer = _require_str(obj["answer"], "answer")
    extra = {k: v for k, v in obj.items() if k not in CORE_FIELDS}
    return CqaRecord(dataset_id, row_index, context, question, answer,
                     category=category, extra=extra, raw=line)


def _load_jsonl(path: Path, dataset_id: str, category: str,
                skip_bad_rows: bool) -> tuple:
    records, skipped = [], 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            try:
                rec = _parse_jsonl_line(line, dataset_id, category, len(records))
            except (json.JSONDecodeError, ValueError) as exc:
                if skip_bad_rows:
                    skipped += 1
                    logger.warning("%s:%d: skipping bad row: %s", path, lineno, exc)
                    continue
                raise CorpusError(f"{path}:{lineno}: malformed row: {exc}") from exc
            records.append(rec)
    return records, skipped


def _load_csv(path: Path, dataset_id: str, category: str,
              skip_bad_rows: bool) -> tuple:
    records, skipped = [], 0
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return [], 0, None
        missing = [k for k in CORE_FIELDS if k not in header]
        if missing:
            raise CorpusError(
                f"{path}: CSV header must name columns {CORE_FIELDS}, "
                f"missing {missing}")
        idx = {name: header.index(name) for name in CORE_FIELDS}
        extra_cols = [(i, name) for i, name in enumerate(header)
                      if name not in CORE_FIELDS]
        for row in reader:
            lineno = reader.line_num
            if len(row) != len(header):
                if skip_bad_rows:
                    skipped += 1
                    logger.warning("%s:%d: skipping bad row: expected %d columns, got %d",
                                   path, lineno, len(header), len(row))
                    continue
                raise CorpusError(
                    f"{path}:{lineno}: malformed row: expected {len(header)} "
                    f"columns, got {len(row)}")
            extra = {name: row[i] for i, name in extra_cols}
            records.append(CqaRecord(
                dataset_id, len(records), row[idx["context"]],
                row[idx["question"]], row[idx["answer"]],
                category=category, extra=extra))
    return records, skipped, header


def load_manifest(path, skip_bad_rows: bool = False) -> DatasetRegistry:
    """Load every dataset listed in a JSON manifest, in manifest order.

    Manifest shape: {"datasets": [{"id", "category", "path",
    "format" ("jsonl"|"csv"), "protected" (optional bool)}, ...]}.
    Relative dataset paths resolve against the manifest's directory.
    """
    manifest_path = Path(path)
    if not manifest_path.exists():
        raise CorpusError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{manifest_path}: invalid JSON: {exc}") from exc
    datasets = manifest.get("datasets")
    if not isinstance(datasets, list) or not datasets:
        raise CorpusError(f"{manifest_path}: manifest must list >= 1 dataset")

    entries, seen = [], set()
    for spec in datasets:
        ds_id = spec.get("id")
        if not ds_id or not isinstance(ds_id, str):
            raise CorpusError(f"{manifest_path}: dataset entry missing string 'id'")
        if ds_id in seen:
            raise CorpusError(f"{manifest_path}: duplicate dataset id {ds_id!r}")
        seen.add(ds_id)
        fmt = spec.get("format", "jsonl")
        if fmt not in VALID_FORMATS:
            raise CorpusError(
                f"{manifest_path}: dataset {ds_id!r}: format must be one of "
                f"{VALID_FORMATS}, got {fmt!r}")
        rel = spec.get("path")
        if not rel:
            raise CorpusError(f"{manifest_path}: dataset {ds_id!r} missing 'path'")
        ds_path = Path(rel)
        if not ds_path.is_absolute():
            ds_path = manifest_path.parent / ds_path
        if not ds_path.exists():
            raise CorpusError(f"dataset file not found: {ds_path} (dataset {ds_id!r})")
        category = spec.get("category", "")
        protected = bool(spec.get("protected", False))

        csv_header = None
        if fmt == "jsonl":
            records, skipped = _load_jsonl(ds_path, ds_id, category, skip_bad_rows)
        else:
            records, skipped, csv_header = _load_csv(ds_path, ds_id, category, skip_bad_rows)
        if not records:
            logger.warning("dataset %r at %s is empty", ds_id, ds_path)
        empty_answers = sum(1 for r in records if r.answer == "")
        if empty_answers:
            logger.warning("dataset %r: %d rows with empty answers", ds_id, empty_answers)
        entries.append(DatasetEntry(ds_id, category, ds_path, fmt, protected,
                                    records, csv_header=csv_header,
                                    skipped_rows=skipped))
    return DatasetRegistry(entries)


def record_to_json_line(rec: CqaRecord) -> str:
    if rec.raw is not None:
        return rec.raw
    obj = {"context": rec.context, "question": rec.question, "answer": rec.answer}
    obj.update(rec.extra)
    return json.dumps(obj, ensure_ascii=False)


def write_dataset(records: list, path, fmt: str = "jsonl",
                  csv_header: list | None = None) -> int:
    """Write records to disk in row order; returns the row count written.

    JSONL rows that came from disk are re-emitted byte-identically (the
    original line is kept on the record); synthetic rows get a canonical
    JSON rendering. CSV round-trips record content, not raw bytes.
    """
    if fmt not in VALID_FORMATS:
        raise CorpusError(f"unknown format {fmt!r}")
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "jsonl":
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            for rec in records:
                fh.write(record_to_json_line(rec))
                fh.write("\n")
        return len(records)

    if csv_header is None:
        extra_keys = list(records[0].extra.keys()) if records else []
        csv_header = list(CORE_FIELDS) + extra_keys
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(csv_header)
        for rec in records:
            row = []
            for col in csv_header:
                if col in CORE_FIELDS:
                    row.append(getattr(rec, col))
                else:
                    row.append(rec.extra.get(col, ""))
            writer.writerow(row)
    return len(records)
