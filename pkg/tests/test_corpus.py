import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ksprune.corpus import (CorpusError, CqaRecord, RecordNotFoundError,
                            get_record, load_manifest, write_dataset)

from conftest import write_jsonl, write_manifest


def test_load_manifest_counts_and_order(tmp_path):
    sizes = {"d1": 5, "d2": 3, "d3": 7}
    entries = []
    for ds_id, n in sizes.items():
        write_jsonl(tmp_path / f"{ds_id}.jsonl",
                    [{"context": f"c{i}", "question": f"q{i}", "answer": f"a{i}"}
                     for i in range(n)])
        entries.append((ds_id, "misc", f"{ds_id}.jsonl", "jsonl", False))
    reg = load_manifest(write_manifest(tmp_path, entries))
    assert reg.dataset_ids == ["d1", "d2", "d3"]
    assert {e.dataset_id: len(e.records) for e in reg} == sizes
    for entry in reg:
        assert [r.row_index for r in entry.records] == list(range(len(entry.records)))


def test_four_dataset_manifest_at_reference_sizes(tmp_path):
    """Registry totals equal file row counts at the reference corpus sizes."""
    sizes = {"sciq": 11679, "financial-qa-10K": 7000,
             "trivia-cqa": 14000, "QASports": 14453}
    entries = []
    for ds_id, n in sizes.items():
        fname = f"{ds_id}.jsonl"
        with open(tmp_path / fname, "w", encoding="utf-8") as fh:
            for i in range(n):
                fh.write('{"context": "c%d", "question": "q%d", "answer": "a"}\n'
                         % (i, i))
        entries.append((ds_id, "misc", fname, "jsonl", ds_id == "sciq"))
    reg = load_manifest(write_manifest(tmp_path, entries))
    assert {e.dataset_id: len(e.records) for e in reg} == sizes
    assert sum(len(e.records) for e in reg) == 47132
    assert reg.entry("sciq").protected


def test_empty_dataset_warns_but_loads(tmp_path, caplog):
    (tmp_path / "empty.jsonl").write_text("", "utf-8")
    manifest = write_manifest(tmp_path, [("e", "misc", "empty.jsonl", "jsonl", False)])
    with caplog.at_level("WARNING"):
        reg = load_manifest(manifest)
    assert reg.row_count("e") == 0
    assert any("empty" in r.message for r in caplog.records)


def test_duplicate_dataset_id_fatal(tmp_path):
    write_jsonl(tmp_path / "a.jsonl", [{"context": "c", "question": "q", "answer": "a"}])
    manifest = write_manifest(tmp_path, [
        ("sciq", "science", "a.jsonl", "jsonl", False),
        ("sciq", "science", "a.jsonl", "jsonl", False)])
    with pytest.raises(CorpusError, match="duplicate dataset id"):
        load_manifest(manifest)


def test_missing_manifest_fatal(tmp_path):
    with pytest.raises(CorpusError, match="manifest not found"):
        load_manifest(tmp_path / "nope.json")


def test_missing_dataset_file_fatal(tmp_path):
    manifest = write_manifest(tmp_path, [("d", "misc", "gone.jsonl", "jsonl", False)])
    with pytest.raises(CorpusError, match="not found"):
        load_manifest(manifest)


def test_malformed_row_reports_file_line_reason(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"context": "c", "question": "q", "answer": "a"}\n'
                    '{"context": "c"}\n', "utf-8")
    manifest = write_manifest(tmp_path, [("d", "misc", "bad.jsonl", "jsonl", False)])
    with pytest.raises(CorpusError) as err:
        load_manifest(manifest)
    message = str(err.value)
    assert "bad.jsonl" in message and ":2:" in message and "missing fields" in message


def test_skip_bad_rows_downgrades_to_warning(tmp_path, caplog):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"context": "c", "question": "q", "answer": "a"}\n'
                    'not json\n'
                    '{"context": "c2", "question": "q2", "answer": "a2"}\n', "utf-8")
    manifest = write_manifest(tmp_path, [("d", "misc", "bad.jsonl", "jsonl", False)])
    with caplog.at_level("WARNING"):
        reg = load_manifest(manifest, skip_bad_rows=True)
    assert reg.row_count("d") == 2
    assert reg.entry("d").skipped_rows == 1
    # indices stay dense after a skip
    assert [r.row_index for r in reg.entry("d").records] == [0, 1]


def test_get_record_identity_and_bounds(tmp_path):
    write_jsonl(tmp_path / "one.jsonl",
                [{"context": "ctx", "question": "qst", "answer": "ans"}])
    reg = load_manifest(write_manifest(
        tmp_path, [("one", "misc", "one.jsonl", "jsonl", False)]))
    rec = get_record(reg, "one", 0)
    assert (rec.context, rec.question, rec.answer) == ("ctx", "qst", "ans")
    with pytest.raises(RecordNotFoundError):
        get_record(reg, "one", 1)
    with pytest.raises(RecordNotFoundError):
        get_record(reg, "nope", 0)


def test_empty_answer_flagged_not_rejected(tmp_path, caplog):
    write_jsonl(tmp_path / "d.jsonl",
                [{"context": "c", "question": "q", "answer": ""}])
    manifest = write_manifest(tmp_path, [("d", "misc", "d.jsonl", "jsonl", False)])
    with caplog.at_level("WARNING"):
        reg = load_manifest(manifest)
    assert reg.get_record("d", 0).answer == ""
    assert any("empty answers" in r.message for r in caplog.records)


text_field = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",), blacklist_characters="\n"),
    max_size=40)


@given(st.lists(st.tuples(text_field, text_field, text_field), min_size=1, max_size=12))
@settings(max_examples=50, deadline=None)
def test_roundtrip_random_corpus(tmp_path_factory, rows):
    tmp = tmp_path_factory.mktemp("rt")
    records = [CqaRecord("d", i, c, q, a) for i, (c, q, a) in enumerate(rows)]
    path = tmp / "d.jsonl"
    assert write_dataset(records, path, "jsonl") == len(records)
    reg = load_manifest(write_manifest(tmp, [("d", "misc", "d.jsonl", "jsonl", False)]))
    assert reg.row_count("d") == len(records)
    for i, rec in enumerate(records):
        loaded = reg.get_record("d", i)
        assert loaded.text_fields_equal(rec)
        assert loaded.row_index == i


def test_write_then_reload_is_byte_identical(tmp_path):
    rows = [{"context": f"c{i} é", "question": f"q{i}", "answer": f"a{i}",
             "meta": {"k": i}} for i in range(5)]
    src = tmp_path / "src.jsonl"
    write_jsonl(src, rows)
    reg = load_manifest(write_manifest(
        tmp_path, [("d", "misc", "src.jsonl", "jsonl", False)]))
    out = tmp_path / "copy.jsonl"
    write_dataset(reg.entry("d").records, out, "jsonl")
    assert out.read_bytes() == src.read_bytes()


def test_csv_roundtrip_with_extra_columns(tmp_path):
    src = tmp_path / "d.csv"
    src.write_text("context,question,answer,tag\n"
                   "c1,q1,a1,t1\n"
                   '"c,2",q2,a2,t2\n', "utf-8")
    reg = load_manifest(write_manifest(tmp_path, [("d", "misc", "d.csv", "csv", False)]))
    assert reg.row_count("d") == 2
    rec = reg.get_record("d", 1)
    assert rec.context == "c,2"
    assert rec.extra == {"tag": "t2"}
    out = tmp_path / "out.csv"
    entry = reg.entry("d")
    write_dataset(entry.records, out, "csv", csv_header=entry.csv_header)
    reg2 = load_manifest(write_manifest(
        tmp_path, [("d", "misc", "out.csv", "csv", False)]))
    for i in range(2):
        a, b = reg.get_record("d", i), reg2.get_record("d", i)
        assert a.text_fields_equal(b)
        assert a.extra == b.extra


def test_csv_missing_core_column_fatal(tmp_path):
    (tmp_path / "d.csv").write_text("context,question\nc,q\n", "utf-8")
    manifest = write_manifest(tmp_path, [("d", "misc", "d.csv", "csv", False)])
    with pytest.raises(CorpusError, match="header"):
        load_manifest(manifest)


def test_protected_flag_default_false(tmp_path):
    write_jsonl(tmp_path / "a.jsonl", [{"context": "c", "question": "q", "answer": "a"}])
    write_jsonl(tmp_path / "b.jsonl", [{"context": "c", "question": "q", "answer": "a"}])
    manifest = {"datasets": [
        {"id": "a", "category": "x", "path": "a.jsonl", "format": "jsonl"},
        {"id": "b", "category": "x", "path": "b.jsonl", "format": "jsonl",
         "protected": True}]}
    mpath = tmp_path / "manifest.json"
    mpath.write_text(json.dumps(manifest), "utf-8")
    reg = load_manifest(mpath)
    assert reg.entry("a").protected is False
    assert reg.entry("b").protected is True
