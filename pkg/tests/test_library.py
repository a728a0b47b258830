import json
import math
import threading
from fractions import Fraction
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cirplan.errors import DataError, EmptyInputError, ProviderError, StepValidationError, StorageError
from cirplan.library import (
    FallbackEmbedder,
    GoldenLibrary,
    HttpEmbeddingProvider,
    ProblemContext,
    canonical_unit,
    normalize_text,
    sample_size,
    sample_training_corpus,
    validate_descriptor,
)
from oracles import linear_scan

PLAN = {
    "tool_calls": [
        {"tool": "emb_a", "query": "a red car", "polarity": "+", "top_k": 10},
        {"tool": "cap_a", "query": "a truck", "polarity": "-", "top_k": 5},
    ],
    "steps": [
        {"name": "positive", "op": "UNION", "operands": [0]},
        {"name": "negative", "op": "INTERSECT", "operands": [1]},
        {"name": "final", "op": "DIFFERENCE", "operands": ["positive", "negative"]},
    ],
}


def ctx(n):
    return ProblemContext(f"make the dog number {n} bigger", f"a dog beside car {n % 7}")


def test_context_text():
    assert ProblemContext("q", "c").text() == "q || c"


def test_fallback_embedder_is_unit_and_deterministic():
    e = FallbackEmbedder()
    v = e.embed("A red  Car")
    assert v.shape == (256,)
    assert abs(float(np.linalg.norm(v)) - 1) < 1e-9
    assert np.array_equal(v, e.embed("a red car"))
    assert all(round(x, 9) == x for x in v)
    with pytest.raises(EmptyInputError):
        e.embed("   ")


def test_normalize_text():
    assert normalize_text("  Ｆｕｌｌ  WIDTH ") == "full width"


def test_canonical_unit():
    v = canonical_unit([3, 4])
    assert v == (0.6, 0.8)
    with pytest.raises(EmptyInputError):
        canonical_unit([0, 0])


def test_descriptor_validation():
    assert validate_descriptor(PLAN) == PLAN
    bad_calls = [
        {"tool_calls": [], "steps": []},
        {"tool_calls": [{"tool": "a", "query": "q", "polarity": "+"}], "steps": []},
        {"tool_calls": [{"tool": "a", "query": "q", "polarity": "+", "top_k": 0}], "steps": []},
        {"tool_calls": [{"tool": "a", "query": "q", "polarity": "+", "top_k": 3}], "steps": [], "images": [1]},
    ]
    for plan in bad_calls:
        with pytest.raises(DataError):
            validate_descriptor(plan)
    with pytest.raises(StepValidationError):
        validate_descriptor({"tool_calls": PLAN["tool_calls"], "steps": 3})


def test_retrieve_and_ties():
    lib = GoldenLibrary()
    assert lib.retrieve(ctx(0)) == []
    lib.add_case(ctx(1), PLAN)
    lib.add_case(ctx(1), PLAN)  # duplicate context: tie broken by id
    lib.add_case(ctx(2), PLAN)
    hits = lib.retrieve(ctx(1), 2)
    assert [c.id for c, _ in hits] == [0, 1]
    assert hits[0][1] == pytest.approx(1.0)
    with pytest.raises(DataError):
        lib.retrieve(ctx(1), 0)


def test_matches_linear_scan():
    lib = GoldenLibrary()
    lib.add_cases((ctx(n), PLAN) for n in range(300))
    embs = [c.embedding for c in lib.cases]
    for n in range(0, 300, 7):
        q = ctx(n * 3 + 1)
        got = [(c.id, s) for c, s in lib.retrieve(q, 5)]
        want = linear_scan(lib.embedder.embed(q.text()), embs, 5)
        assert [i for i, _ in got] == [i for _, i in want]
        assert all(abs(a[1] - b[0]) < 1e-12 for a, b in zip(got, want))


def test_persistence_round_trip(tmp_path):
    path = tmp_path / "lib.jsonl"
    lib = GoldenLibrary(path=path)
    lib.add_case(ctx(1), PLAN)
    lib.add_cases([(ctx(2), PLAN), (ctx(3), PLAN)])
    text = path.read_text()
    assert text == lib.dumps()
    back = GoldenLibrary.load(path)
    assert back.dumps() == text and len(back) == 3
    back.add_case(ctx(4), PLAN)
    assert GoldenLibrary.load(path).dumps() == back.dumps()


def test_partial_trailing_line_is_ignored(tmp_path):
    path = tmp_path / "lib.jsonl"
    lib = GoldenLibrary(path=path)
    lib.add_case(ctx(1), PLAN)
    with open(path, "a") as fh:
        fh.write('{"type":"case","id":1,"embe')
    assert len(GoldenLibrary.load(path, attach=False)) == 1


def test_load_errors(tmp_path):
    path = tmp_path / "lib.jsonl"
    with pytest.raises(StorageError):
        GoldenLibrary.load(path)
    path.write_text('{"format":"other","version":1}\n')
    with pytest.raises(StorageError):
        GoldenLibrary.load(path)
    lib = GoldenLibrary()
    lib.add_case(ctx(1), PLAN)
    path.write_text(lib.dumps().replace('"id":0', '"id":5'))
    with pytest.raises(StorageError):
        GoldenLibrary.load(path)
    path.write_text(lib.dumps())
    with pytest.raises(StorageError):
        GoldenLibrary.load(path, embedder=FallbackEmbedder(64))


def test_concurrent_appends_and_reads(tmp_path):
    lib = GoldenLibrary(path=tmp_path / "lib.jsonl")
    errors = []

    def writer(base):
        for n in range(20):
            lib.add_case(ctx(base + n), PLAN)

    def reader():
        try:
            for _ in range(50):
                hits = lib.retrieve(ctx(3), 3)
                assert all(math.isfinite(s) for _, s in hits)
        except Exception as exc:  # noqa: BLE001
            errors.append(exc)

    threads = [threading.Thread(target=writer, args=(100 * t,)) for t in range(3)] + [threading.Thread(target=reader)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert [c.id for c in lib.cases] == list(range(60))
    assert GoldenLibrary.load(tmp_path / "lib.jsonl").dumps() == lib.dumps()


def test_stats():
    lib = GoldenLibrary()
    lib.add_case(ctx(1), PLAN)
    s = lib.stats()
    assert s["cases"] == 1 and s["cases_with_negatives"] == 1 and s["tool_usage"] == {"cap_a": 1, "emb_a": 1}


def test_sampling_convention():
    assert sample_size(28225, Fraction(1, 10)) == 2822
    assert sample_size(28225, 0.1) == 2822
    assert sample_size(28225, "0.1") == 2822
    with pytest.raises(DataError):
        sample_size(10, 2)
    recs = list(range(100))
    picked = sample_training_corpus(recs, "0.25", seed=3)
    assert len(picked) == 25 and picked == sorted(picked)
    assert picked == sample_training_corpus(recs, "0.25", seed=3)


@given(st.integers(0, 10**6), st.fractions(0, 1))
def test_sample_size_is_floor(total, frac):
    assert sample_size(total, frac) == math.floor(total * frac)


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):  # noqa: N802
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        vec = [float(len(body["input"])), 1.0, 0.0, 2.0]
        out = json.dumps({"embedding": vec, "auth": self.headers.get("Authorization")}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(out)

    def log_message(self, *args):
        pass


@pytest.fixture
def embed_server():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}/embed"
    server.shutdown()


def test_http_provider(embed_server):
    p = HttpEmbeddingProvider(4, url=embed_server, token="t")
    v = p.embed("abc")
    assert abs(float(np.linalg.norm(v)) - 1) < 1e-9
    with pytest.raises(ProviderError):
        HttpEmbeddingProvider(3, url=embed_server).embed("abc")


def test_http_provider_failures(monkeypatch):
    monkeypatch.delenv("CIRPLAN_EMBED_URL", raising=False)
    with pytest.raises(ProviderError):
        HttpEmbeddingProvider(4)
    p = HttpEmbeddingProvider(4, url="http://127.0.0.1:9/none", retries=2, backoff=0.0, timeout=0.5)
    with pytest.raises(ProviderError):
        p.embed("abc")
