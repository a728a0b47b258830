"""Golden library: optimal trajectories keyed by problem-context embeddings.

A case stores the *plan descriptor* of an optimal trajectory (tool calls with
their rewritten queries, polarities and cutoffs, plus the step list), never
raw image ids, so it can be replayed against any gallery. Retrieval is an
exact cosine scan; ties go to the smaller case id.

Library file (line-delimited JSON, append-only)::

    {"type": "library", "format": "cirplan-library", "version": 1,
     "dimension": 256, "embedder": "trigram-hash-256"}
    {"type": "case", "id": 0, "query_text": ..., "caption": ...,
     "embedding": [...], "plan": {"tool_calls": [...], "steps": [...]}}

Embeddings are written rounded to 9 decimals. The largest coordinate is
re-solved after rounding so the stored vector keeps unit norm to within
about 5e-10; the stored vector *is* the case embedding, so a reload yields
identical values.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
import time
import unicodedata
import urllib.error
import urllib.request
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Protocol, Sequence

import numpy as np

from .errors import DataError, EmptyInputError, ProviderError, StorageError
from .model import Polarity
from .setops import parse_steps
from .synth import stream

LIBRARY_FORMAT = "cirplan-library"
LIBRARY_VERSION = 1
SEPARATOR = " || "
DEFAULT_N = 2
FALLBACK_DIM = 256
DECIMALS = 9
TIE_DECIMALS = 12

URL_ENV = "CIRPLAN_EMBED_URL"
TOKEN_ENV = "CIRPLAN_EMBED_TOKEN"


@dataclass(frozen=True)
class ProblemContext:
    query_text: str
    caption: str

    def text(self) -> str:
        """Query first, then caption, joined by ``SEPARATOR``."""
        return f"{self.query_text}{SEPARATOR}{self.caption}"


@dataclass(frozen=True)
class Case:
    id: int
    context: ProblemContext
    embedding: tuple[float, ...]
    plan: dict[str, Any]

    def record(self) -> dict[str, Any]:
        return {
            "type": "case",
            "id": self.id,
            "query_text": self.context.query_text,
            "caption": self.context.caption,
            "embedding": list(self.embedding),
            "plan": self.plan,
        }


# -- plan descriptors -------------------------------------------------------

_CALL_KEYS = {"tool", "query", "polarity", "top_k"}


def validate_descriptor(plan: Any) -> dict[str, Any]:
    """Check shape and return a normalized copy. Image ids are not allowed."""
    if not isinstance(plan, dict) or set(plan) != {"tool_calls", "steps"}:
        raise DataError("plan descriptor must have exactly 'tool_calls' and 'steps'")
    calls = plan["tool_calls"]
    if not isinstance(calls, list) or not calls:
        raise DataError("plan descriptor needs at least one tool call")
    out_calls = []
    for c in calls:
        if not isinstance(c, dict) or set(c) != _CALL_KEYS:
            raise DataError(f"tool call must have exactly {sorted(_CALL_KEYS)}")
        top_k = c["top_k"]
        if isinstance(top_k, bool) or not isinstance(top_k, int) or top_k < 1:
            raise DataError(f"top_k must be a positive integer, got {top_k!r}")
        out_calls.append(
            {"tool": str(c["tool"]), "query": str(c["query"]), "polarity": Polarity(c["polarity"]).value, "top_k": top_k}
        )
    steps = parse_steps(plan["steps"])
    return {"tool_calls": out_calls, "steps": [s.to_json() for s in steps]}


# -- embedders --------------------------------------------------------------


class EmbeddingProvider(Protocol):
    name: str
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


def normalize_text(text: str) -> str:
    return " ".join(unicodedata.normalize("NFKC", text).lower().split())


def canonical_unit(vec: Sequence[float]) -> tuple[float, ...]:
    """Round to ``DECIMALS`` places, then re-solve the largest coordinate."""
    v = np.asarray(vec, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0 or not math.isfinite(norm):
        raise EmptyInputError("cannot normalize a zero or non-finite vector")
    out = [round(float(x), DECIMALS) for x in v / norm]
    j = max(range(len(out)), key=lambda t: (abs(out[t]), -t))
    rest = math.fsum(x * x for t, x in enumerate(out) if t != j)
    out[j] = math.copysign(round(math.sqrt(max(0.0, 1.0 - rest)), DECIMALS), out[j])
    return tuple(out)


class FallbackEmbedder:
    """Character 3-gram feature hashing, deterministic on every platform.

    Text is NFKC-normalized, lower-cased and whitespace-collapsed, padded with
    one space on each side; each 3-gram is hashed with BLAKE2b and counted in
    bucket ``hash mod dimension``. Counts are unsigned, so the vector of any
    non-empty text is non-zero.
    """

    name = "trigram-hash-256"

    def __init__(self, dimension: int = FALLBACK_DIM):
        self.dimension = dimension

    def embed(self, text: str) -> np.ndarray:
        norm = normalize_text(text)
        if not norm:
            raise EmptyInputError("cannot embed empty text")
        padded = f" {norm} "
        v = np.zeros(self.dimension)
        for t in range(len(padded) - 2):
            digest = hashlib.blake2b(padded[t : t + 3].encode("utf-8"), digest_size=8).digest()
            v[int.from_bytes(digest, "little") % self.dimension] += 1.0
        return np.asarray(canonical_unit(v))


class HttpEmbeddingProvider:
    """JSON-over-HTTP embedding client.

    POSTs ``{"input": text}`` to the URL in ``CIRPLAN_EMBED_URL`` with a bearer
    token from ``CIRPLAN_EMBED_TOKEN`` and expects ``{"embedding": [...]}``.
    """

    name = "http"

    def __init__(self, dimension: int, url: str | None = None, token: str | None = None,
                 timeout: float = 10.0, retries: int = 3, backoff: float = 0.5):
        self.dimension = dimension
        self.url = url or os.environ.get(URL_ENV)
        self.token = token if token is not None else os.environ.get(TOKEN_ENV)
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        if not self.url:
            raise ProviderError(f"no embedding endpoint configured (set {URL_ENV})")

    def _request(self, text: str) -> list[float]:
        req = urllib.request.Request(self.url, data=json.dumps({"input": text}).encode("utf-8"), method="POST")
        req.add_header("Content-Type", "application/json")
        if self.token:
            req.add_header("Authorization", f"Bearer {self.token}")
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return json.loads(resp.read().decode("utf-8"))["embedding"]

    def embed(self, text: str) -> np.ndarray:
        if not normalize_text(text):
            raise EmptyInputError("cannot embed empty text")
        last: Exception | None = None
        for attempt in range(self.retries):
            try:
                vec = self._request(text)
                break
            except (urllib.error.URLError, TimeoutError, OSError, KeyError, ValueError) as exc:
                last = exc
                time.sleep(self.backoff * 2**attempt)
        else:
            raise ProviderError(f"embedding request failed after {self.retries} attempts: {last}")
        if len(vec) != self.dimension:
            raise ProviderError(f"provider returned dimension {len(vec)}, expected {self.dimension}")
        return np.asarray(canonical_unit(vec))


# -- the library ------------------------------------------------------------


def _dumps(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


class GoldenLibrary:
    """Append-only case store with exact cosine retrieval.

    One writer at a time (guarded by a lock); readers work on a snapshot of
    the first ``n`` cases, so a concurrent append is either fully visible or
    not at all.
    """

    def __init__(self, embedder: EmbeddingProvider | None = None, path: str | Path | None = None):
        self.embedder = embedder or FallbackEmbedder()
        self.dimension = self.embedder.dimension
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._cases: list[Case] = []
        self._matrix = np.zeros((16, self.dimension))
        self._n = 0
        if self.path is not None and not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(_dumps(self.header()) + "\n", encoding="utf-8")

    def header(self) -> dict[str, Any]:
        return {"type": "library", "format": LIBRARY_FORMAT, "version": LIBRARY_VERSION,
                "dimension": self.dimension, "embedder": self.embedder.name}

    def __len__(self) -> int:
        return self._n

    @property
    def cases(self) -> list[Case]:
        return self._cases[: self._n]

    def _append(self, case: Case) -> None:
        if self._n == len(self._matrix):
            grown = np.zeros((2 * len(self._matrix), self.dimension))
            grown[: self._n] = self._matrix[: self._n]
            self._matrix = grown
        self._matrix[self._n] = case.embedding
        self._cases.append(case)
        self._n += 1  # publish last

    def _case_for(self, case_id: int, context: ProblemContext, plan: dict) -> Case:
        emb = tuple(float(x) for x in self.embedder.embed(context.text()))
        return Case(case_id, context, emb, validate_descriptor(plan))

    def add_case(self, context: ProblemContext, plan: dict[str, Any]) -> int:
        with self._lock:
            case = self._case_for(self._n, context, plan)
            if self.path is not None:
                try:
                    with open(self.path, "a", encoding="utf-8") as fh:
                        fh.write(_dumps(case.record()) + "\n")
                        fh.flush()
                        os.fsync(fh.fileno())
                except OSError as exc:
                    raise StorageError(f"cannot append to {self.path}: {exc}") from None
            self._append(case)
            return case.id

    def add_cases(self, items: Iterable[tuple[ProblemContext, dict[str, Any]]]) -> list[int]:
        with self._lock:
            new = []
            for context, plan in items:
                new.append(self._case_for(self._n + len(new), context, plan))
            if self.path is not None and new:
                try:
                    with open(self.path, "a", encoding="utf-8") as fh:
                        fh.write("".join(_dumps(c.record()) + "\n" for c in new))
                        fh.flush()
                        os.fsync(fh.fileno())
                except OSError as exc:
                    raise StorageError(f"cannot append to {self.path}: {exc}") from None
            for c in new:
                self._append(c)
            return [c.id for c in new]

    def similarities(self, context: ProblemContext) -> tuple[list[Case], np.ndarray]:
        n = self._n
        cases = self._cases[:n]
        if n == 0:
            return [], np.zeros(0)
        mat = self._matrix[:n]
        q = np.asarray(self.embedder.embed(context.text()))
        sims = (mat @ q) / (np.linalg.norm(mat, axis=1) * np.linalg.norm(q))
        return cases, sims

    def retrieve(self, context: ProblemContext, n: int = DEFAULT_N) -> list[tuple[Case, float]]:
        if n < 1:
            raise DataError("n must be at least 1")
        cases, sims = self.similarities(context)
        if not cases:
            return []
        ids = np.array([c.id for c in cases])
        # quantize so mathematically equal scores tie on id regardless of summation order
        order = np.lexsort((ids, -np.round(sims, TIE_DECIMALS)))[:n]
        return [(cases[k], float(sims[k])) for k in order]

    def dumps(self) -> str:
        lines = [self.header()] + [c.record() for c in self.cases]
        return "".join(_dumps(r) + "\n" for r in lines)

    def save(self, path: str | Path) -> None:
        try:
            Path(path).write_text(self.dumps(), encoding="utf-8")
        except OSError as exc:
            raise StorageError(f"cannot write {path}: {exc}") from None

    @classmethod
    def load(cls, path: str | Path, embedder: EmbeddingProvider | None = None, attach: bool = True) -> GoldenLibrary:
        """Read a library file. A trailing line without a newline is an
        append still in flight and is ignored."""
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise StorageError(f"cannot read {path}: {exc}") from None
        lines = text.split("\n")
        complete = lines[:-1]  # last element is "" or an unfinished record
        if not complete:
            raise StorageError(f"{path}: missing library header")
        try:
            header = json.loads(complete[0])
        except json.JSONDecodeError:
            raise StorageError(f"{path}: invalid header") from None
        if header.get("format") != LIBRARY_FORMAT or header.get("version") != LIBRARY_VERSION:
            raise StorageError(f"{path}: not a version-{LIBRARY_VERSION} library file")
        embedder = embedder or FallbackEmbedder(int(header["dimension"]))
        if embedder.dimension != header["dimension"] or embedder.name != header["embedder"]:
            raise StorageError(f"{path}: built with {header['embedder']}/{header['dimension']}, "
                               f"not {embedder.name}/{embedder.dimension}")
        lib = cls(embedder)
        for lineno, line in enumerate(complete[1:], 2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                raise StorageError(f"{path}:{lineno}: corrupt record") from None
            if rec.get("type") != "case" or rec.get("id") != lib._n:
                raise StorageError(f"{path}:{lineno}: expected case {lib._n}")
            emb = tuple(float(x) for x in rec["embedding"])
            if len(emb) != lib.dimension:
                raise StorageError(f"{path}:{lineno}: embedding has wrong dimension")
            ctx = ProblemContext(rec["query_text"], rec["caption"])
            lib._append(Case(rec["id"], ctx, emb, validate_descriptor(rec["plan"])))
        if attach:
            lib.path = path
        return lib

    def stats(self) -> dict[str, Any]:
        cases = self.cases
        calls = [len(c.plan["tool_calls"]) for c in cases]
        with_neg = sum(1 for c in cases if any(t["polarity"] == "-" for t in c.plan["tool_calls"]))
        tools: dict[str, int] = {}
        for c in cases:
            for t in c.plan["tool_calls"]:
                tools[t["tool"]] = tools.get(t["tool"], 0) + 1
        return {
            "cases": len(cases),
            "dimension": self.dimension,
            "embedder": self.embedder.name,
            "mean_tool_calls": round(sum(calls) / len(calls), 6) if calls else 0.0,
            "cases_with_negatives": with_neg,
            "tool_usage": dict(sorted(tools.items())),
        }


def sample_size(total: int, fraction: float | Fraction | str) -> int:
    """``floor(total * fraction)`` in exact arithmetic (so 10% of 28,225 is 2,822)."""
    frac = Fraction(str(fraction)) if isinstance(fraction, float) else Fraction(fraction)
    if not 0 <= frac <= 1:
        raise DataError("sampling fraction must lie in [0, 1]")
    return math.floor(total * frac)


def sample_training_corpus(records: Sequence[Any], fraction: float | Fraction | str = Fraction(1, 10),
                           seed: int = 0) -> list[Any]:
    """Uniform sample without replacement, returned in original order."""
    n = sample_size(len(records), fraction)
    rng = stream(seed, 0, "library-sample")
    picks = sorted(rng.choice(len(records), size=n, replace=False).tolist()) if n else []
    return [records[i] for i in picks]
