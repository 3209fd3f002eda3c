import hashlib
import json
import struct

import numpy as np
import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

from embedder.cli import main
from embedder.service import create_app

from test_service import FIXTURE_SENTENCES


def hundred_sentences():
    subjects = ["gland", "market", "player", "river", "enzyme", "bond",
                "coach", "empire", "neuron", "dividend"]
    verbs = ["regulates", "supports", "describes", "produces", "controls",
             "measures", "follows", "secretes", "signals", "rewards"]
    return [f"The {s} {v} example number {i}."
            for i, (s, v) in enumerate((s, v) for s in subjects for v in verbs)]


def parse_ksev(path):
    """Independent reader for the binary contract."""
    data = path.read_bytes()
    assert data[:4] == b"KSEV"
    dim = struct.unpack("<I", data[4:8])[0]
    record = 16 + 4 * dim
    body = data[8:]
    assert len(body) % record == 0
    table = {}
    for off in range(0, len(body), record):
        key = body[off:off + 16]
        vec = np.frombuffer(body, dtype="<f4", count=dim, offset=off + 16)
        table[key] = np.asarray(vec, dtype=np.float64)
    return dim, table


def md5(text):
    return hashlib.md5(text.encode("utf-8")).digest()


def export(tmp_path, sentences, model="hash://64"):
    src = tmp_path / "texts.txt"
    src.write_text("\n".join(sentences) + "\n", "utf-8")
    out = tmp_path / "vectors.ksev"
    result = CliRunner().invoke(main, ["export", "--in", str(src),
                                       "--out", str(out), "--model", model])
    assert result.exit_code == 0, result.output
    return out


def test_export_roundtrip_self_similarity(tmp_path):
    out = export(tmp_path, FIXTURE_SENTENCES)
    dim, table = parse_ksev(out)
    assert dim == 64
    vec = table[md5(FIXTURE_SENTENCES[0])]
    assert abs(float(vec @ vec) - 1.0) < 1e-6


def test_export_empty_input_errors(tmp_path):
    src = tmp_path / "empty.txt"
    src.write_text("", "utf-8")
    result = CliRunner().invoke(main, ["export", "--in", str(src),
                                       "--out", str(tmp_path / "o.ksev")])
    assert result.exit_code == 2
    assert "no sentences" in result.output


def test_export_writes_manifest(tmp_path):
    out = export(tmp_path, FIXTURE_SENTENCES[:3])
    manifest = out.parent / (out.name + ".manifest")
    lines = manifest.read_text("utf-8").splitlines()
    assert len(lines) == 3
    key_hex, raw = lines[0].split("\t", 1)
    assert key_hex == md5(FIXTURE_SENTENCES[0]).hex()
    assert json.loads(raw) == FIXTURE_SENTENCES[0]


def test_cross_backend_parity_on_hundred_sentences(tmp_path):
    """HTTP /embed and the exported vector file agree within 1e-5."""
    sentences = hundred_sentences()
    assert len(sentences) == 100
    out = export(tmp_path, sentences)
    _, table = parse_ksev(out)

    client = TestClient(create_app("hash://64", max_batch=256))
    resp = client.post("/embed", json={"texts": sentences})
    assert resp.status_code == 200
    http_vectors = [np.asarray(v, dtype=np.float64)
                    for v in resp.json()["vectors"]]

    file_vectors = [table[md5(s)] for s in sentences]
    rng = np.random.default_rng(5)
    for _ in range(200):
        i, j = rng.integers(0, 100, size=2)
        http_cos = float(http_vectors[i] @ http_vectors[j])
        file_cos = float(file_vectors[i] @ file_vectors[j])
        assert abs(http_cos - file_cos) < 1e-5


def test_primary_package_reads_export_if_available(tmp_path):
    """Interface seam check against the consumer, where it is installed."""
    try:
        from ksprune.embeddings import VectorFileProvider, embed_sim
    except ImportError:
        pytest.skip("primary package not installed in this environment")
    out = export(tmp_path, FIXTURE_SENTENCES)
    provider = VectorFileProvider(out)
    assert provider.dim == 64
    sim = embed_sim(provider, FIXTURE_SENTENCES[0], FIXTURE_SENTENCES[0])
    assert abs(sim - 1.0) < 1e-6
