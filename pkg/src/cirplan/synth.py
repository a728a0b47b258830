"""Deterministic synthetic instances.

Each instance plants a ground-truth set and a set of *distractors*: images
that resemble the target but carry an attribute the query asks to remove.
Positive tools rank ground truth and distractors near the top; negative tools
retrieve distractors with high fidelity and ground truth only occasionally.
Rankings are drawn at the largest truncation level and then sliced, so
families are nested by construction.

Randomness comes from Philox generators keyed by ``(seed, instance index,
stream tag)``; instances can be generated in any order or in parallel and
always come out identical.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from .errors import ConfigError
from .model import DEFAULT_GRID, AtomicRetrieval, CandidateSet, Instance, Polarity, validate_grid

DEFAULT_TOOLS = ("emb_a", "emb_b", "emb_c", "cap_a", "cap_b", "cap_c")
DEFAULT_HIT_RATES = (0.8, 0.7, 0.6, 0.75, 0.65, 0.55)

_WORDS = """
apple anchor badger balloon beach bicycle bridge candle canyon castle cherry clock
cloud dolphin dragon engine feather forest fountain garden glacier guitar harbor helmet
island jacket kettle ladder lantern lemon lighthouse meadow mirror monkey mountain
necklace orchard owl palace parrot pepper piano pillow pirate pumpkin rabbit river
robot saddle sailboat scarf shovel skyscraper sparrow statue teapot tiger tractor
tulip umbrella valley violin volcano wagon walrus whistle window zebra
""".split()


@dataclass(frozen=True)
class GeneratorConfig:
    """Generator settings. Every field has a default; see ``config_json``."""

    seed: int = 42
    gallery_size: int = 2000
    gt_min: int = 2
    gt_max: int = 6
    tools: tuple[str, ...] = DEFAULT_TOOLS
    hit_rates: tuple[float, ...] = DEFAULT_HIT_RATES
    positive_queries: int = 2
    negative_queries: int = 1
    grid: tuple[int, ...] = DEFAULT_GRID
    n_distractors: int = 40
    distractor_overlap: float = 0.3
    negative_fidelity: float = 0.8
    negative_false_hit: float = 0.1
    adversarial_fraction: float = 0.0
    planted: int = 3
    gt_score_offset: float = 0.5
    distractor_score_offset: float = 0.4
    pool_size: int | None = None
    n_clusters: int = 8

    def __post_init__(self):
        for name in ("tools", "hit_rates", "grid"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        validate_grid(self.grid)
        if not self.tools:
            raise ConfigError("at least one tool is required")
        if len(self.hit_rates) != len(self.tools):
            raise ConfigError("hit_rates must give one rate per tool")
        for name in ("distractor_overlap", "negative_fidelity", "negative_false_hit", "adversarial_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if any(not 0.0 <= h <= 1.0 for h in self.hit_rates):
            raise ConfigError("hit rates must lie in [0, 1]")
        if not 1 <= self.gt_min <= self.gt_max:
            raise ConfigError("need 1 <= gt_min <= gt_max")
        if self.gt_max + self.n_distractors > self.gallery_size:
            raise ConfigError("ground truth plus distractors do not fit in the gallery")
        if self.positive_queries < 1 or self.negative_queries < 0:
            raise ConfigError("need at least one positive rewrite per tool")
        if self.planted > self.n_distractors:
            raise ConfigError("cannot plant more distractors than exist")
        if self.pool_size is not None and self.pool_size < len(self.tools):
            raise ConfigError("pool size must be at least the tool count")
        if self.n_clusters < 1:
            raise ConfigError("n_clusters must be positive")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> GeneratorConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown generator settings: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        for key in ("tools", "hit_rates", "grid"):
            out[key] = list(out[key])
        return out


def load_config(path: str | Path) -> GeneratorConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return GeneratorConfig.from_dict(data)


def config_json(config: GeneratorConfig | None = None) -> str:
    return json.dumps((config or GeneratorConfig()).to_dict(), indent=2, sort_keys=True)


def stream(seed: int, index: int, tag: str) -> np.random.Generator:
    """Independent counter-based generator for one (seed, index, tag) triple."""
    key = np.random.SeedSequence([seed & 0xFFFFFFFF, index, zlib.crc32(tag.encode("utf-8"))])
    return np.random.Generator(np.random.Philox(key))


def family_layout(config: GeneratorConfig) -> list[tuple[int, Polarity, int, int]]:
    """``(tool index, polarity, rewrite slot, number of k levels)`` per family."""
    per_tool = config.positive_queries + config.negative_queries
    levels = len(config.grid)
    if config.pool_size is None:
        n_fam = per_tool * len(config.tools)
        tail = levels
    else:
        n_fam = math.ceil(config.pool_size / levels)
        tail = config.pool_size - (n_fam - 1) * levels
    out = []
    slot = 0
    while len(out) < n_fam:
        j = slot % per_tool
        polarity = Polarity.POSITIVE if j < config.positive_queries else Polarity.NEGATIVE
        rewrite = j if polarity is Polarity.POSITIVE else j - config.positive_queries
        rewrite += (slot // per_tool) * (config.positive_queries if polarity is Polarity.POSITIVE else config.negative_queries)
        for t in range(len(config.tools)):
            if len(out) < n_fam:
                out.append((t, polarity, rewrite, levels))
        slot += 1
    t, pol, rw, _ = out[-1]
    out[-1] = (t, pol, rw, tail)
    return out


def _sample_noise(rng: np.random.Generator, gallery: int, count: int, banned: set[int]) -> list[int]:
    out: list[int] = []
    taken = set(banned)
    while len(out) < count:
        draw = rng.integers(0, gallery, size=max(8, 2 * (count - len(out))))
        for v in draw.tolist():
            if v not in taken:
                taken.add(v)
                out.append(v)
                if len(out) == count:
                    break
    return out


def _texts(config: GeneratorConfig, index: int) -> tuple[str, str, int]:
    rng = stream(config.seed, index, "text")
    cluster = int(rng.integers(0, config.n_clusters))
    vocab_rng = stream(config.seed, cluster, "cluster-vocab")
    vocab = [_WORDS[i] for i in vocab_rng.choice(len(_WORDS), size=8, replace=False)]
    w = [vocab[i] for i in rng.choice(8, size=6, replace=True)]
    query = f"make the {w[0]} bigger, add a {w[1]} and remove the {w[2]}"
    caption = f"a {w[3]} beside a {w[4]} near the {w[5]}"
    return query, caption, cluster


def generate_instance(config: GeneratorConfig, index: int) -> Instance:
    base = stream(config.seed, index, "base")
    n_gt = int(base.integers(config.gt_min, config.gt_max + 1))
    planted_ids = base.choice(config.gallery_size, size=n_gt + config.n_distractors, replace=False).tolist()
    gt = planted_ids[:n_gt]
    decoys = planted_ids[n_gt:]
    gt_set, decoy_set = set(gt), set(decoys)
    adversarial = bool(base.random() < config.adversarial_fraction)
    planted = decoys[: config.planted] if adversarial else []
    banned = gt_set | decoy_set
    k_max = min(config.grid[-1], config.gallery_size - len(banned))

    pool: list[AtomicRetrieval] = []
    seen: set[int] = set()
    first_negative = True
    for fam_idx, (t, polarity, rewrite, n_levels) in enumerate(family_layout(config)):
        tool = config.tools[t]
        rng = stream(config.seed, index, f"family:{fam_idx}")
        scored: list[tuple[float, int]] = []
        if polarity is Polarity.POSITIVE:
            for i in gt:
                if rng.random() < config.hit_rates[t]:
                    scored.append((config.gt_score_offset + rng.random(), i))
            for i in decoys:
                if i in planted:
                    scored.append((2.0 + rng.random(), i))
                elif rng.random() < config.distractor_overlap:
                    scored.append((config.distractor_score_offset + rng.random(), i))
            query = f"positive rewrite {rewrite}"
        else:
            designated = adversarial and first_negative
            first_negative = False
            for i in decoys:
                if i in planted and designated:
                    scored.append((3.0 + rng.random(), i))
                elif rng.random() < config.negative_fidelity:
                    scored.append((0.5 + rng.random(), i))
            if not designated:
                for i in gt:
                    if rng.random() < config.negative_false_hit:
                        scored.append((rng.random(), i))
            query = f"negative rewrite {rewrite}"
        scored.sort(key=lambda p: -p[0])
        scored = scored[:k_max]
        noise = _sample_noise(rng, config.gallery_size, k_max - len(scored), banned)
        scored.extend((rng.random(), i) for i in noise)
        scored.sort(key=lambda p: -p[0])
        ranking = [i for _, i in scored]
        seen.update(ranking)
        for k in config.grid[:n_levels]:
            pool.append(AtomicRetrieval(len(pool), tool, query, polarity, k, tuple(ranking[:k])))

    vrng = stream(config.seed, index, "verifier")
    logits = {}
    for i in sorted(seen):
        mu = 2.0 if i in gt_set else (1.0 if i in decoy_set else -1.5)
        logits[i] = (round(float(vrng.normal(mu, 1.0)), 6), 0.0)
    query, caption, _ = _texts(config, index)
    return Instance(
        instance_id=f"synth-{config.seed}-{index:05d}",
        gallery_size=config.gallery_size,
        ground_truth=CandidateSet(gt),
        pool=tuple(pool),
        query_text=query,
        caption=caption,
        verifier_logits=logits,
    )


def instance_cluster(config: GeneratorConfig, index: int) -> int:
    return _texts(config, index)[2]


def generate_corpus(config: GeneratorConfig, count: int, start: int = 0) -> Iterator[Instance]:
    for index in range(start, start + count):
        yield generate_instance(config, index)
