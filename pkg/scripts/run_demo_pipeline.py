#!/usr/bin/env python3
"""End-to-end demo on a synthetic corpus: build four datasets with planted
cross-dataset duplicates, prune them, run fixture-backed detection on a
planted shortcut query, and evaluate a small generation file.

Run:  python scripts/run_demo_pipeline.py [workdir]

Everything is offline and deterministic; outputs land in the workdir
(default ./demo_out) and are safe to delete.
"""

import json
import random
import subprocess
import sys
from pathlib import Path

VOCABS = {
    "sci": ["mitochondria", "enzyme", "protein", "membrane", "hormone",
            "neuron", "synapse", "glucose", "ribosome", "pancreas",
            "digestion", "molecule", "bacteria", "oxygen", "gland"],
    "fin": ["market", "bond", "stock", "yield", "asset", "equity",
            "dividend", "portfolio", "inflation", "liquidity", "revenue",
            "margin", "futures", "hedge", "credit"],
    "spo": ["player", "score", "team", "league", "coach", "season",
            "tournament", "defense", "offense", "stadium", "referee",
            "playoff", "draft", "roster", "basket"],
    "tri": ["history", "empire", "river", "treaty", "battle", "monarch",
            "painting", "novel", "composer", "island", "dynasty",
            "expedition", "cathedral", "manuscript", "legend"],
}
N_ROWS = 300
PLANTS = [("sci", "fin"), ("fin", "spo"), ("spo", "tri"), ("tri", "sci")]


def make_rows(vocab, n, seed):
    rng = random.Random(seed)
    rows = []
    for _ in range(n):
        words = rng.sample(vocab, 6)
        rows.append({"context": " ".join(words),
                     "question": f"what about {words[0]}",
                     "answer": words[-1]})
    return rows


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def run(cmd):
    print("+", " ".join(str(c) for c in cmd))
    subprocess.run([str(c) for c in cmd], check=True)


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("demo_out")
    out.mkdir(parents=True, exist_ok=True)
    data = out / "data"
    data.mkdir(exist_ok=True)

    rng = random.Random(11)
    rows = {ds: make_rows(vocab, N_ROWS, seed)
            for seed, (ds, vocab) in enumerate(VOCABS.items(), start=31)}
    for src, dst in PLANTS:
        for _ in range(2):
            i = rng.randrange(N_ROWS // 2)
            j = N_ROWS // 2 + rng.randrange(N_ROWS // 2)
            rows[dst][j] = dict(rows[src][i])
    # one twin carries a marker token, the classic shortcut shape: sci row 0
    # text lives in fin too, dragging "spandrel" into row 0's similarity pool
    twin = dict(rows["sci"][0])
    twin["context"] += " spandrel"
    twin["answer"] = "spandrel"
    rows["fin"][N_ROWS - 1] = twin
    for ds, ds_rows in rows.items():
        write_jsonl(data / f"{ds}.jsonl", ds_rows)
    manifest = {"datasets": [
        {"id": ds, "category": ds, "path": f"{ds}.jsonl", "format": "jsonl"}
        for ds in rows]}
    (data / "manifest.json").write_text(json.dumps(manifest, indent=2), "utf-8")

    run([sys.executable, "-m", "ksprune.cli", "prune",
         "--manifest", data / "manifest.json", "--out", out / "pruned"])

    # detection: the probe answers with the marker token smuggled in by the
    # cross-dataset twin (knowledge shortcut), plus an unexplained control
    probe = rows["sci"][0]
    scattered = ["one answer", "another answer", "third answer",
                 "fourth answer", "fifth answer"]
    bundles = [{"dataset_id": "probe", "row_index": 0,
                "context": probe["context"], "question": probe["question"],
                "correct_answer": probe["answer"],
                "a_o": "spandrel", "samples": scattered},
               {"dataset_id": "probe", "row_index": 1,
                "context": probe["context"], "question": probe["question"],
                "correct_answer": probe["answer"],
                "a_o": "completely unrelated claim", "samples": scattered}]
    write_jsonl(out / "bundles.jsonl", bundles)
    run([sys.executable, "-m", "ksprune.cli", "detect",
         "--manifest", data / "manifest.json",
         "--fixtures", out / "bundles.jsonl",
         "--sim-metric", "jaccard", "--out", out / "verdicts"])

    generations = [{"dataset_id": "sci", "row_index": i,
                    "question": r["question"], "correct_answer": r["answer"],
                    "generated_answer": r["answer"] if i % 3 else "wrong guess"}
                   for i, r in enumerate(rows["sci"][:30])]
    write_jsonl(out / "generations.jsonl", generations)
    run([sys.executable, "-m", "ksprune.cli", "evaluate",
         "--generations", out / "generations.jsonl", "--no-embed",
         "--out", out / "eval"])

    report = json.loads((out / "pruned" / "prune_report.json").read_text())
    print("\nreductions:", report["reductions"])
    print("outputs in", out.resolve())


if __name__ == "__main__":
    main()
