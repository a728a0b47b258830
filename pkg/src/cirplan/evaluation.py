"""Ablation runs.

Variants change how a plan is *executed*, never how it was found:

* ``full``: the plan as stored.
* ``no_diff``: every ``DIFFERENCE(a, b)`` becomes ``a``, so negatives are ignored.
* ``union_only``: additionally every ``INTERSECT`` becomes ``UNION``. On a
  two-clause plan this coincides with ``no_diff``; it differs on DNF plans.
* ``no_demos``: no case retrieval; a fixed template plan (every tool in both
  polarities at cutoff ``TEMPLATE_K``, two-clause form) is replayed instead.

Without a library the plan is the instance's own optimal trajectory (an
upper-bound setting). With a library the top case's plan is replayed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

from .library import GoldenLibrary, ProblemContext
from .model import CandidateSet, Instance, Polarity
from .pipeline import (
    PipelineConfig,
    Trajectory,
    instance_metrics,
    mean_metrics,
    metric_names,
    optimize_instance,
    rank_instance,
    replay_plan,
)
from .setops import Step, drop_difference, parse_steps, two_clause_steps, union_only
from .synth import GeneratorConfig, generate_instance

TEMPLATE_K = 20


class AblationVariant(str, enum.Enum):
    FULL = "full"
    NO_DIFF = "no_diff"
    UNION_ONLY = "union_only"
    NO_DEMOS = "no_demos"

    @classmethod
    def parse(cls, text: str) -> AblationVariant:
        aliases = {"no_diff_no_int": cls.UNION_ONLY}
        return aliases.get(text) or cls(text)


def template_plan(instance: Instance, k: int = TEMPLATE_K) -> dict[str, Any]:
    """Plan of a planner without demonstrations: the first rewrite of every
    tool in each polarity, all at cutoff ``k``, in the two-clause form."""
    calls = {Polarity.POSITIVE: [], Polarity.NEGATIVE: []}
    for pol in calls:
        seen = set()
        for r in instance.pool:
            if r.polarity is pol and r.tool not in seen:
                seen.add(r.tool)
                calls[pol].append({"tool": r.tool, "query": r.query, "polarity": pol.value, "top_k": k})
    pos, neg = calls[Polarity.POSITIVE], calls[Polarity.NEGATIVE]
    steps = two_clause_steps(len(pos), len(neg))
    return {"tool_calls": pos + neg, "steps": [s.to_json() for s in steps]}


def transform_steps(steps: Sequence[Step], variant: AblationVariant) -> list[Step]:
    if variant is AblationVariant.NO_DIFF:
        return drop_difference(steps)
    if variant is AblationVariant.UNION_ONLY:
        return union_only(steps)
    return list(steps)


@dataclass
class AblationResult:
    variant: AblationVariant
    rows: list[dict[str, Any]]
    means: dict[str, float]
    flags: dict[str, list[str]]


def run_ablation(
    instances: Iterable[Instance],
    variant: AblationVariant | str,
    config: PipelineConfig | None = None,
    library: GoldenLibrary | None = None,
    trajectories: dict[str, Trajectory] | None = None,
) -> AblationResult:
    """Per-instance metrics for one variant. ``trajectories`` caches the
    offline solutions across variants (filled in when missing)."""
    variant = AblationVariant.parse(variant) if isinstance(variant, str) else variant
    config = config or PipelineConfig()
    cache = trajectories if trajectories is not None else {}
    rows, flags = [], {}
    for inst in instances:
        if variant is AblationVariant.NO_DEMOS:
            plan = template_plan(inst)
        elif library is None:
            if inst.instance_id not in cache:
                cache[inst.instance_id] = optimize_instance(inst, config)
            plan = cache[inst.instance_id].descriptor
        else:
            hits = library.retrieve(ProblemContext(inst.query_text, inst.caption), config.n_demos)
            plan = hits[0][0].plan if hits else template_plan(inst)
        if plan is None:
            final, retrievals = CandidateSet(), ()
        else:
            steps = transform_steps(parse_steps(plan["steps"]), variant)
            res = replay_plan(plan, inst, steps)
            final, retrievals = res.final, res.retrievals
            if res.flags:
                flags[inst.instance_id] = list(res.flags)
        ranking = rank_instance(final, inst, retrievals, config.verifier_budget)
        row = instance_metrics(ranking, final, inst.ground_truth, config)
        row["instance_id"] = inst.instance_id
        rows.append(row)
    return AblationResult(variant, rows, mean_metrics(rows, metric_names(config)), flags)


def ablation_table(results: Sequence[AblationResult], names: Sequence[str]) -> str:
    """Tab-separated table, one row per variant, metrics in percent."""
    lines = ["\t".join(["variant", "n", *names])]
    for r in results:
        cells = [f"{r.means[n]:.0f}" if n == "size" else f"{100 * r.means[n]:.2f}" for n in names]
        lines.append("\t".join([r.variant.value, str(len(r.rows)), *cells]))
    return "\n".join(lines) + "\n"


SUITE_TOOLS = ("emb_a", "emb_b", "cap_a", "cap_b")
SUITE_HIT_RATES = (0.8, 0.7, 0.75, 0.65)


def adversarial_suite_config(seed: int = 42) -> GeneratorConfig:
    """Generator profile of the bundled ablation suite: four tools with one
    rewrite per polarity, and on every instance planted distractors at the
    top of each positive ranking that only a negative clause can remove."""
    return GeneratorConfig(seed=seed, tools=SUITE_TOOLS, hit_rates=SUITE_HIT_RATES,
                           positive_queries=1, negative_queries=1, adversarial_fraction=1.0)


def suite_instances(count: int = 200, seed: int = 42) -> list[Instance]:
    cfg = adversarial_suite_config(seed)
    return [generate_instance(cfg, i) for i in range(count)]
