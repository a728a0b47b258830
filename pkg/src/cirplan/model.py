"""Domain types shared by every optimizer: candidate sets, atomic retrievals,
instances and the incidence structure the selection model is compiled from.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import ConfigError, DataError

INSTANCE_FORMAT = "cirplan-instance"
INSTANCE_VERSION = 1

DEFAULT_GRID: tuple[int, ...] = tuple(range(5, 51, 5))


class CandidateSet:
    """Immutable set of dense image ids backed by an integer bitmask."""

    __slots__ = ("_bits",)

    def __init__(self, members: Iterable[int] = ()):
        bits = 0
        for m in members:
            if m < 0:
                raise DataError(f"negative image id {m}")
            bits |= 1 << m
        self._bits = bits

    @classmethod
    def from_bits(cls, bits: int) -> CandidateSet:
        obj = cls.__new__(cls)
        obj._bits = bits
        return obj

    @classmethod
    def full(cls, size: int) -> CandidateSet:
        return cls.from_bits((1 << size) - 1)

    @property
    def bits(self) -> int:
        return self._bits

    def __len__(self) -> int:
        return self._bits.bit_count()

    def __bool__(self) -> bool:
        return self._bits != 0

    def __iter__(self) -> Iterator[int]:
        b = self._bits
        while b:
            low = b & -b
            yield low.bit_length() - 1
            b ^= low

    def __contains__(self, item: int) -> bool:
        return item >= 0 and (self._bits >> item) & 1 == 1

    def __or__(self, other: CandidateSet) -> CandidateSet:
        return CandidateSet.from_bits(self._bits | other._bits)

    def __and__(self, other: CandidateSet) -> CandidateSet:
        return CandidateSet.from_bits(self._bits & other._bits)

    def __sub__(self, other: CandidateSet) -> CandidateSet:
        return CandidateSet.from_bits(self._bits & ~other._bits)

    def __le__(self, other: CandidateSet) -> bool:
        return self._bits & ~other._bits == 0

    def __eq__(self, other: object) -> bool:
        return isinstance(other, CandidateSet) and self._bits == other._bits

    def __hash__(self) -> int:
        return hash(self._bits)

    def __repr__(self) -> str:
        return f"CandidateSet({sorted(self)})"

    def complement(self, universe: CandidateSet) -> CandidateSet:
        return universe - self

    def max_id(self) -> int:
        return self._bits.bit_length() - 1

    @staticmethod
    def union_all(sets: Iterable[CandidateSet]) -> CandidateSet:
        bits = 0
        for s in sets:
            bits |= s._bits
        return CandidateSet.from_bits(bits)

    @staticmethod
    def intersect_all(sets: Iterable[CandidateSet]) -> CandidateSet:
        """Intersection of ``sets``; the empty family intersects to the empty set."""
        bits = None
        for s in sets:
            bits = s._bits if bits is None else bits & s._bits
        return CandidateSet.from_bits(bits or 0)


class Polarity(str, enum.Enum):
    POSITIVE = "+"
    NEGATIVE = "-"


@dataclass(frozen=True)
class AtomicRetrieval:
    """One tool call: ``(tool, query, polarity, k)`` and its top-k ranking."""

    id: int
    tool: str
    query: str
    polarity: Polarity
    k: int
    ranking: tuple[int, ...]
    results: CandidateSet = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "polarity", Polarity(self.polarity))
        object.__setattr__(self, "ranking", tuple(self.ranking))
        if self.k < 1:
            raise DataError(f"retrieval {self.id}: k must be positive, got {self.k}")
        if len(self.ranking) > self.k:
            raise DataError(f"retrieval {self.id}: {len(self.ranking)} results exceed k={self.k}")
        results = CandidateSet(self.ranking)
        if len(results) != len(self.ranking):
            raise DataError(f"retrieval {self.id}: duplicate ids in ranking")
        object.__setattr__(self, "results", results)

    @property
    def family_key(self) -> tuple[str, str, Polarity]:
        return (self.tool, self.query, self.polarity)

    @property
    def positive(self) -> bool:
        return self.polarity is Polarity.POSITIVE

    def rank_of(self) -> dict[int, int]:
        return {img: pos + 1 for pos, img in enumerate(self.ranking)}


@dataclass(frozen=True)
class Family:
    key: tuple[str, str, Polarity]
    members: tuple[int, ...]  # retrieval ids by ascending k


@dataclass(frozen=True)
class Instance:
    """Gallery, ground truth and the pool of precomputed atomic retrievals."""

    instance_id: str
    gallery_size: int
    ground_truth: CandidateSet
    pool: tuple[AtomicRetrieval, ...]
    query_text: str = ""
    caption: str = ""
    verifier_logits: Mapping[int, tuple[float, float]] | None = None

    def __post_init__(self):
        object.__setattr__(self, "pool", tuple(self.pool))
        if self.gallery_size < 1:
            raise DataError("gallery must be non-empty")
        if not self.ground_truth:
            raise DataError(f"instance {self.instance_id}: empty ground truth")
        if self.ground_truth.max_id() >= self.gallery_size:
            raise DataError(f"instance {self.instance_id}: ground truth outside gallery")
        seen = set()
        for r in self.pool:
            if r.id in seen:
                raise DataError(f"instance {self.instance_id}: duplicate retrieval id {r.id}")
            seen.add(r.id)
            if r.results and r.results.max_id() >= self.gallery_size:
                raise DataError(f"retrieval {r.id}: results outside gallery of size {self.gallery_size}")

    @property
    def non_ground_truth(self) -> CandidateSet:
        return CandidateSet.full(self.gallery_size) - self.ground_truth

    @property
    def n_negative_images(self) -> int:
        return self.gallery_size - len(self.ground_truth)

    @property
    def positives(self) -> list[AtomicRetrieval]:
        return [r for r in self.pool if r.positive]

    @property
    def negatives(self) -> list[AtomicRetrieval]:
        return [r for r in self.pool if not r.positive]

    def retrieval(self, rid: int) -> AtomicRetrieval:
        for r in self.pool:
            if r.id == rid:
                return r
        raise KeyError(rid)

    def by_id(self) -> dict[int, AtomicRetrieval]:
        return {r.id: r for r in self.pool}


@dataclass(frozen=True)
class IncidenceData:
    """Sparse incidence of positive retrievals over ground-truth and noise images.

    ``gt_hits[i]`` lists the positive retrievals containing ground-truth image
    ``i`` (so ``a_ir = 1``); ``noise_hits`` does the same for non-ground-truth
    images. Only images retrieved at least once appear in ``noise_hits``.
    """

    ground_truth: tuple[int, ...]
    n_negative_images: int
    positive_ids: tuple[int, ...]
    gt_hits: Mapping[int, tuple[int, ...]]
    noise_hits: Mapping[int, tuple[int, ...]]
    families: tuple[Family, ...]
    tools: tuple[str, ...]
    tool_members: Mapping[str, tuple[int, ...]]

    def a(self, i: int, r: int) -> int:
        return int(r in self.gt_hits.get(i, ()))

    def b(self, i: int, r: int) -> int:
        return int(r in self.noise_hits.get(i, ()))

    @property
    def a_hat(self) -> dict[int, int]:
        return {i: len(rs) for i, rs in self.gt_hits.items()}

    @property
    def b_hat(self) -> dict[int, int]:
        return {i: len(rs) for i, rs in self.noise_hits.items()}


def slice_truncations(base_ranking: Sequence[int], grid: Sequence[int]) -> list[CandidateSet]:
    """Nested top-k prefixes of one ranking, one per grid level.

    >>> [sorted(s) for s in slice_truncations([3, 1, 4], [1, 2, 3])]
    [[3], [1, 3], [1, 3, 4]]
    """
    validate_grid(grid)
    if len(set(base_ranking)) != len(base_ranking):
        raise DataError("duplicate id in ranking")
    return [CandidateSet(base_ranking[:k]) for k in grid]


def validate_grid(grid: Sequence[int]) -> None:
    if not grid:
        raise ConfigError("truncation grid is empty")
    if grid[0] < 1:
        raise ConfigError("truncation levels must be positive")
    for lo, hi in zip(grid, grid[1:]):
        if hi <= lo:
            raise ConfigError(f"truncation grid must be strictly increasing: {list(grid)}")


def group_families(pool: Iterable[AtomicRetrieval]) -> list[Family]:
    """Group retrievals sharing (tool, query, polarity); order of first appearance."""
    groups: dict[tuple, list[AtomicRetrieval]] = {}
    for r in pool:
        groups.setdefault(r.family_key, []).append(r)
    return [
        Family(key, tuple(r.id for r in sorted(members, key=lambda r: (r.k, r.id))))
        for key, members in groups.items()
    ]


def check_nesting(pool: Sequence[AtomicRetrieval]) -> bool:
    """True when every family's result sets are nested by ascending k."""
    by_id = {r.id: r for r in pool}
    for fam in group_families(pool):
        sets = [by_id[m].results for m in fam.members]
        if any(not (a <= b) for a, b in zip(sets, sets[1:])):
            return False
    return True


def build_incidence(instance: Instance) -> IncidenceData:
    gt = instance.ground_truth
    gt_hits: dict[int, list[int]] = {i: [] for i in gt}
    noise_hits: dict[int, list[int]] = {}
    positives = instance.positives
    tool_members: dict[str, list[int]] = {}
    for r in positives:
        if r.results and r.results.max_id() >= instance.gallery_size:
            raise DataError(f"retrieval {r.id}: results outside gallery")
        tool_members.setdefault(r.tool, []).append(r.id)
        for i in r.results & gt:
            gt_hits[i].append(r.id)
        for i in r.results - gt:
            noise_hits.setdefault(i, []).append(r.id)
    return IncidenceData(
        ground_truth=tuple(gt),
        n_negative_images=instance.n_negative_images,
        positive_ids=tuple(r.id for r in positives),
        gt_hits={i: tuple(v) for i, v in gt_hits.items()},
        noise_hits={i: tuple(v) for i, v in sorted(noise_hits.items())},
        families=tuple(group_families(positives)),
        tools=tuple(tool_members),
        tool_members={t: tuple(v) for t, v in tool_members.items()},
    )


class SymbolTable:
    """Maps external (string) image ids to dense indices in first-seen order."""

    def __init__(self, labels: Iterable[str] = ()):
        self._index: dict[str, int] = {}
        self._labels: list[str] = []
        for label in labels:
            self.intern(label)

    def intern(self, label: str) -> int:
        idx = self._index.get(label)
        if idx is None:
            idx = len(self._labels)
            self._index[label] = idx
            self._labels.append(label)
        return idx

    def __getitem__(self, label: str) -> int:
        return self._index[label]

    def label(self, idx: int) -> str:
        return self._labels[idx]

    def __len__(self) -> int:
        return len(self._labels)


# -- instance files ---------------------------------------------------------
#
# Line-delimited JSON. Each instance starts with a header record
#   {"type": "instance", "format": "cirplan-instance", "version": 1,
#    "instance_id", "gallery_size", "ground_truth": [ids],
#    "query_text", "caption", "verifier_logits": {id: [z_yes, z_no]} | null}
# followed by one record per atomic retrieval
#   {"type": "retrieval", "id", "tool", "query", "polarity": "+"|"-",
#    "k", "results": [ranked ids]}
# A file may hold any number of instances.


def instance_records(instance: Instance) -> list[dict]:
    logits = None
    if instance.verifier_logits is not None:
        logits = {str(i): list(v) for i, v in sorted(instance.verifier_logits.items())}
    out = [
        {
            "type": "instance",
            "format": INSTANCE_FORMAT,
            "version": INSTANCE_VERSION,
            "instance_id": instance.instance_id,
            "gallery_size": instance.gallery_size,
            "ground_truth": sorted(instance.ground_truth),
            "query_text": instance.query_text,
            "caption": instance.caption,
            "verifier_logits": logits,
        }
    ]
    for r in instance.pool:
        out.append(
            {
                "type": "retrieval",
                "id": r.id,
                "tool": r.tool,
                "query": r.query,
                "polarity": r.polarity.value,
                "k": r.k,
                "results": list(r.ranking),
            }
        )
    return out


def dump_instances(instances: Iterable[Instance]) -> str:
    lines = []
    for inst in instances:
        lines.extend(json.dumps(rec, sort_keys=True, separators=(",", ":")) for rec in instance_records(inst))
    return "".join(line + "\n" for line in lines)


def write_instances(path: str | Path, instances: Iterable[Instance]) -> None:
    Path(path).write_text(dump_instances(instances), encoding="utf-8")


def _finish(header: dict, retrievals: list[dict]) -> Instance:
    logits = header.get("verifier_logits")
    if logits is not None:
        logits = {int(k): (float(v[0]), float(v[1])) for k, v in logits.items()}
    pool = [
        AtomicRetrieval(
            id=int(r["id"]),
            tool=r["tool"],
            query=r["query"],
            polarity=Polarity(r["polarity"]),
            k=int(r["k"]),
            ranking=tuple(int(x) for x in r["results"]),
        )
        for r in retrievals
    ]
    return Instance(
        instance_id=str(header["instance_id"]),
        gallery_size=int(header["gallery_size"]),
        ground_truth=CandidateSet(int(x) for x in header["ground_truth"]),
        pool=tuple(pool),
        query_text=header.get("query_text", ""),
        caption=header.get("caption", ""),
        verifier_logits=logits,
    )


def parse_instances(lines: Iterable[str]) -> Iterator[Instance]:
    header = None
    retrievals: list[dict] = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"line {lineno}: invalid JSON ({exc})") from None
        kind = rec.get("type")
        if kind == "instance":
            if rec.get("format") != INSTANCE_FORMAT or "version" not in rec:
                raise DataError(f"line {lineno}: missing format/version in instance header")
            if rec["version"] != INSTANCE_VERSION:
                raise DataError(f"line {lineno}: unsupported instance version {rec['version']}")
            if header is not None:
                yield _finish(header, retrievals)
            header, retrievals = rec, []
        elif kind == "retrieval":
            if header is None:
                raise DataError(f"line {lineno}: retrieval record before any instance header")
            retrievals.append(rec)
        else:
            raise DataError(f"line {lineno}: unknown record type {kind!r}")
    if header is not None:
        yield _finish(header, retrievals)


def read_instances(path: str | Path) -> list[Instance]:
    with open(path, encoding="utf-8") as fh:
        return list(parse_instances(fh))
