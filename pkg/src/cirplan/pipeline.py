"""Offline optimization, plan serialization, replay and the run report.

Offline, each instance is solved exactly (selection, then composition) and
the resulting trajectory is written as a *plan descriptor*: tool calls with
their query, polarity and cutoff, plus a step list. Online, a descriptor is
replayed against another instance's tool outputs and the final set is ranked
by verifier scores.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Sequence

from . import __version__
from .bip import SolveLimits, Status
from .dnf import Clause, DnfSolution, enumerate_clauses, solve_f1_dnf
from .errors import CirplanError, ConfigError, DataError, SolverBudgetError, UnknownReferenceError
from .library import DEFAULT_N, GoldenLibrary, ProblemContext, validate_descriptor
from .metrics import (
    average_precision_at_k,
    f1_components,
    fallback_order,
    ndcg_at_k,
    rank_final_set,
    recall_at_k,
    relevance_score,
)
from .model import DEFAULT_GRID, AtomicRetrieval, CandidateSet, Instance, Polarity, validate_grid
from .setops import FINAL, Step, execute_steps, parse_steps, two_clause_steps
from .stage1 import Stage1Solution, Stage1Weights, solve_stage1
from .stage2 import PlanStatus, Stage2Weights, TwoClausePlan, solve_stage2

COMPOSERS = ("two_clause", "dnf")
PROVIDERS = ("fallback", "http")
RUN_FORMAT = "cirplan-run"
RUN_VERSION = 1


def _frac(x: Any) -> Fraction:
    try:
        return Fraction(str(x))
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"not a number: {x!r}") from None


@dataclass(frozen=True)
class PipelineConfig:
    stage1: Stage1Weights = field(default_factory=Stage1Weights)
    stage2: Stage2Weights = field(default_factory=Stage2Weights)
    composer: str = "two_clause"
    dnf_max_len: int = 3
    dnf_max_neg: int = 1
    dnf_budget: int = 3
    dnf_alpha: Fraction = Fraction(1, 1000)
    grid: tuple[int, ...] = DEFAULT_GRID
    library_path: str | None = None
    provider: str = "fallback"
    n_demos: int = DEFAULT_N
    workers: int = 1
    node_budget: int = 10**7
    time_budget: float = 60.0
    verifier_budget: int | None = None
    recall_ks: tuple[int, ...] = (1, 5, 10, 50)
    map_ks: tuple[int, ...] = (5, 10, 25, 50)
    ndcg_ks: tuple[int, ...] = (10,)

    def __post_init__(self):
        for name in ("grid", "recall_ks", "map_ks", "ndcg_ks"):
            object.__setattr__(self, name, tuple(int(k) for k in getattr(self, name)))
        object.__setattr__(self, "dnf_alpha", _frac(self.dnf_alpha))
        validate_grid(self.grid)
        if self.composer not in COMPOSERS:
            raise ConfigError(f"composer must be one of {COMPOSERS}, got {self.composer!r}")
        if self.provider not in PROVIDERS:
            raise ConfigError(f"provider must be one of {PROVIDERS}, got {self.provider!r}")
        if self.dnf_max_len < 1 or self.dnf_max_neg < 0 or self.dnf_budget < 1 or self.dnf_alpha < 0:
            raise ConfigError("invalid DNF caps")
        if self.n_demos < 1 or self.workers < 1 or self.node_budget < 1 or self.time_budget <= 0:
            raise ConfigError("n_demos, workers and budgets must be positive")
        if self.verifier_budget is not None and self.verifier_budget < 0:
            raise ConfigError("verifier budget must be non-negative")
        if any(k < 1 for k in (*self.recall_ks, *self.map_ks, *self.ndcg_ks)):
            raise ConfigError("metric cutoffs must be >= 1")

    @property
    def limits(self) -> SolveLimits:
        return SolveLimits(self.node_budget, self.time_budget)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "stage1":
                v = {"w_recall": str(v.w_recall), "w_noise": str(v.w_noise), "lambda_div": str(v.lambda_div)}
            elif f.name == "stage2":
                v = {"lambda_reg": str(v.lambda_reg)}
            elif isinstance(v, Fraction):
                v = str(v)
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> PipelineConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown pipeline settings: {sorted(unknown)}")
        data = dict(data)
        if "stage1" in data:
            s = data["stage1"]
            data["stage1"] = Stage1Weights(*(_frac(s[k]) for k in ("w_recall", "w_noise", "lambda_div")))
        if "stage2" in data:
            data["stage2"] = Stage2Weights(_frac(data["stage2"]["lambda_reg"]))
        return cls(**data)


def load_pipeline_config(path: str | Path) -> PipelineConfig:
    try:
        return PipelineConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


# -- plan descriptors -------------------------------------------------------


def _call(r: AtomicRetrieval) -> dict[str, Any]:
    return {"tool": r.tool, "query": r.query, "polarity": r.polarity.value, "top_k": r.k}


def two_clause_descriptor(plan: TwoClausePlan, instance: Instance) -> dict[str, Any]:
    by_id = instance.by_id()
    calls = [_call(by_id[r]) for r in (*plan.positives, *plan.negatives)]
    steps = two_clause_steps(len(plan.positives), len(plan.negatives))
    return {"tool_calls": calls, "steps": [s.to_json() for s in steps]}


def dnf_descriptor(solution: DnfSolution, clauses: Sequence[Clause], instance: Instance) -> dict[str, Any] | None:
    """Clause ``c`` becomes ``INTERSECT`` of its positive literals, minus the
    ``UNION`` of its negated ones; ``final`` is the union of the clauses."""
    if not solution.selected:
        return None
    by_id = instance.by_id()
    by_clause = {c.id: c for c in clauses}
    order: dict[int, int] = {}
    for cid in solution.selected:
        for rid, _ in by_clause[cid].literals:
            order.setdefault(rid, len(order))
    steps: list[Step] = []
    names = []
    for n, cid in enumerate(solution.selected):
        lits = by_clause[cid].literals
        pos = tuple(order[r] for r, s in lits if s == "+")
        neg = tuple(order[r] for r, s in lits if s == "-")
        name = f"clause_{n}"
        if neg:
            steps.append(Step(f"{name}_pos", "INTERSECT", pos))
            steps.append(Step(f"{name}_neg", "UNION", neg))
            steps.append(Step(name, "DIFFERENCE", (f"{name}_pos", f"{name}_neg")))
        else:
            steps.append(Step(name, "INTERSECT", pos))
        names.append(name)
    steps.append(Step(FINAL, "UNION", tuple(names)))
    calls = [_call(by_id[r]) for r in order]
    return {"tool_calls": calls, "steps": [s.to_json() for s in steps]}


# -- replay -----------------------------------------------------------------


@dataclass(frozen=True)
class ReplayResult:
    final: CandidateSet
    retrievals: tuple[AtomicRetrieval, ...]
    flags: tuple[str, ...] = ()


def resolve_call(call: dict[str, Any], instance: Instance) -> tuple[AtomicRetrieval, list[str]]:
    """Match a tool call to one of the instance's atomic retrievals.

    Same tool, polarity and query if such a family exists, otherwise the
    first family (by pool order) of that tool and polarity. Within the family
    the exact cutoff is used when available, else the nearest lower one, else
    the smallest one; the last two cases are flagged.
    """
    tool, query, polarity, k = call["tool"], call["query"], Polarity(call["polarity"]), call["top_k"]
    tools = sorted({r.tool for r in instance.pool})
    if tool not in tools:
        raise UnknownReferenceError(f"tool {tool!r} not available; instance has {tools}")
    flags = []
    same = [r for r in instance.pool if r.tool == tool and r.polarity is polarity]
    if not same:
        raise UnknownReferenceError(f"tool {tool!r} has no {polarity.value} retrievals in this instance")
    family = [r for r in same if r.query == query]
    if not family:
        key = same[0].family_key
        family = [r for r in same if r.family_key == key]
        flags.append(f"query_substituted:{tool}")
    family.sort(key=lambda r: r.k)
    exact = [r for r in family if r.k == k]
    if exact:
        return exact[0], flags
    lower = [r for r in family if r.k < k]
    if lower:
        flags.append(f"k_lowered:{tool}:{k}->{lower[-1].k}")
        return lower[-1], flags
    flags.append(f"k_raised:{tool}:{k}->{family[0].k}")
    return family[0], flags


def replay_plan(plan: dict[str, Any], instance: Instance, steps: Sequence[Step] | None = None) -> ReplayResult:
    """Execute a descriptor on an instance; ``steps`` overrides the stored step list."""
    plan = validate_descriptor(plan)
    resolved, flags = [], []
    for call in plan["tool_calls"]:
        r, f = resolve_call(call, instance)
        resolved.append(r)
        flags.extend(f)
    steps = list(steps) if steps is not None else parse_steps(plan["steps"])
    out = execute_steps(steps, [r.results for r in resolved])
    return ReplayResult(out[FINAL], tuple(resolved), tuple(flags))


def replay_case(library: GoldenLibrary, case_id: int, instance: Instance,
                verifier_budget: int | None = None) -> tuple[list[int], ReplayResult]:
    cases = library.cases
    if not 0 <= case_id < len(cases):
        raise UnknownReferenceError(f"no case {case_id} (library has {len(cases)})")
    result = replay_plan(cases[case_id].plan, instance)
    return rank_instance(result.final, instance, result.retrievals, verifier_budget), result


# -- ranking and metrics ----------------------------------------------------


def rank_instance(final: CandidateSet, instance: Instance, retrievals: Iterable[AtomicRetrieval],
                  verifier_budget: int | None = None) -> list[int]:
    """Verifier ranking of ``final``. With a budget, only the best
    ``verifier_budget`` items by fallback rank are scored."""
    positives = [r for r in retrievals if r.positive]
    fallback = fallback_order(final, positives)
    worst = max(fallback.values(), default=0) + 1
    for i in final:
        fallback.setdefault(i, worst)  # items that came only from negative retrievals
    scores = None
    if instance.verifier_logits is not None:
        pool = sorted(final, key=lambda i: (fallback[i], i))
        if verifier_budget is not None:
            pool = pool[:verifier_budget]
        scores = {i: relevance_score(*instance.verifier_logits[i]) for i in pool if i in instance.verifier_logits}
    return rank_final_set(final, scores, fallback)


def metric_names(config: PipelineConfig) -> list[str]:
    return ([f"R@{k}" for k in config.recall_ks] + [f"mAP@{k}" for k in config.map_ks]
            + [f"NDCG@{k}" for k in config.ndcg_ks] + ["precision", "recall", "F1", "size"])


def instance_metrics(ranking: Sequence[int], final: CandidateSet, gt: CandidateSet,
                     config: PipelineConfig) -> dict[str, Fraction | float]:
    out: dict[str, Fraction | float] = {}
    for k in config.recall_ks:
        out[f"R@{k}"] = recall_at_k(ranking, gt, k)
    for k in config.map_ks:
        out[f"mAP@{k}"] = average_precision_at_k(ranking, gt, k)
    for k in config.ndcg_ks:
        out[f"NDCG@{k}"] = ndcg_at_k(ranking, gt, k)
    out.update(f1_components(final, gt))
    out["F1"] = out.pop("f1")
    out["size"] = Fraction(len(final))
    return out


def mean_metrics(rows: Sequence[dict[str, Any]], names: Sequence[str]) -> dict[str, float]:
    if not rows:
        return {n: 0.0 for n in names}
    out = {}
    for n in names:
        vals = [r[n] for r in rows]
        if all(isinstance(v, Fraction) for v in vals):
            out[n] = float(sum(vals, Fraction(0)) / len(vals))
        else:
            out[n] = math.fsum(float(v) for v in vals) / len(vals)
    return out


def _num(v: Any) -> Any:
    if isinstance(v, Fraction):
        return str(v) if v.denominator != 1 else int(v)
    return v


def _round(x: float) -> float:
    return float(f"{x:.12g}")


# -- offline optimization ---------------------------------------------------


@dataclass
class Trajectory:
    instance: Instance
    stage1: Stage1Solution
    plan: TwoClausePlan | None
    descriptor: dict[str, Any] | None
    final: CandidateSet
    retrievals: tuple[AtomicRetrieval, ...]
    dnf: DnfSolution | None = None
    clauses: tuple[Clause, ...] = ()

    @property
    def budget_exhausted(self) -> bool:
        statuses = [self.stage1.status]
        if self.plan is not None and self.plan.solver_status is not None:
            statuses.append(self.plan.solver_status)
        if self.dnf is not None:
            statuses.extend(self.dnf.statuses)
        return any(s is not Status.OPTIMAL for s in statuses)


def optimize_instance(instance: Instance, config: PipelineConfig) -> Trajectory:
    used = sorted({r.k for r in instance.pool})
    if not set(used) <= set(config.grid):
        raise DataError(f"instance {instance.instance_id} uses cutoffs {used} outside the grid {list(config.grid)}")
    s1 = solve_stage1(instance, config.stage1, config.limits)
    if s1.status is Status.NO_SOLUTION:
        raise SolverBudgetError(f"{instance.instance_id}: selection budget exhausted without a solution")
    by_id = instance.by_id()
    if config.composer == "dnf":
        positives = [by_id[r] for r in s1.selected]
        clauses = enumerate_clauses(s1.universe, positives, instance.negatives, config.dnf_max_len, config.dnf_max_neg)
        sol = solve_f1_dnf(clauses, instance.ground_truth, config.dnf_budget, config.dnf_alpha, config.limits)
        desc = dnf_descriptor(sol, clauses, instance)
        used_ids = {r for c in clauses if c.id in sol.selected for r, _ in c.literals}
        rets = tuple(by_id[r] for r in sorted(used_ids))
        return Trajectory(instance, s1, None, desc, sol.result, rets, sol, tuple(clauses))
    plan = solve_stage2(s1, instance, config.stage2, config.limits)
    if plan.status is PlanStatus.OK and plan.solver_status is Status.NO_SOLUTION:
        raise SolverBudgetError(f"{instance.instance_id}: composition budget exhausted without a solution")
    desc = two_clause_descriptor(plan, instance) if plan.positives else None
    rets = tuple(by_id[r] for r in (*plan.positives, *plan.negatives))
    return Trajectory(instance, s1, plan, desc, plan.final, rets)


def trajectory_record(t: Trajectory, config: PipelineConfig) -> tuple[dict[str, Any], dict[str, Any]]:
    ranking = rank_instance(t.final, t.instance, t.retrievals, config.verifier_budget)
    metrics = instance_metrics(ranking, t.final, t.instance.ground_truth, config)
    rec: dict[str, Any] = {
        "instance_id": t.instance.instance_id,
        "composer": config.composer,
        "stage1": {
            "selected": list(t.stage1.selected),
            "objective": _num(t.stage1.objective),
            "coverage": _num(t.stage1.coverage),
            "universe_size": len(t.stage1.universe),
            "active_tools": list(t.stage1.active_tools),
            "status": t.stage1.status.value,
            "nodes": t.stage1.nodes,
        },
        "plan": t.descriptor,
        "final": sorted(t.final),
        "ranking": ranking,
        "budget_exhausted": t.budget_exhausted,
        "metrics": {k: _num(v) if isinstance(v, Fraction) else _round(v) for k, v in metrics.items()},
    }
    if t.plan is not None:
        rec["stage2"] = {
            "status": t.plan.status.value,
            "positives": list(t.plan.positives),
            "negatives": list(t.plan.negatives),
            "objective": _num(t.plan.objective),
            "excluded": t.plan.excluded,
            "solver_status": t.plan.solver_status.value if t.plan.solver_status else None,
            "nodes": t.plan.nodes,
        }
    if t.dnf is not None:
        rec["dnf"] = {
            "clauses": len(t.clauses),
            "selected": [t.clauses[c].describe() for c in t.dnf.selected],
            "f1": _num(t.dnf.f1),
            "lambda_trace": [_num(x) for x in t.dnf.lambda_trace],
            "iterations": t.dnf.iterations,
        }
    return rec, metrics


def _process(args: tuple[dict[str, Any], Instance]) -> tuple[str, dict | None, dict | None, dict | None]:
    cfg_dict, instance = args
    config = PipelineConfig.from_dict(cfg_dict)
    try:
        rec, metrics = trajectory_record(optimize_instance(instance, config), config)
        return instance.instance_id, rec, metrics, None
    except CirplanError as exc:
        err = {"instance_id": instance.instance_id, "error": type(exc).__name__,
               "message": str(exc), "exit_code": exc.exit_code}
        return instance.instance_id, None, None, err


def run_pipeline(config: PipelineConfig, instances: Iterable[Instance],
                 library: GoldenLibrary | None = None) -> dict[str, Any]:
    """Optimize every instance and assemble the run report.

    Records are ordered by instance id whatever the completion order. If a
    library is given, each trajectory is added to it as a case.
    """
    instances = list(instances)
    ids = [i.instance_id for i in instances]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate instance ids in input")
    cfg_dict = config.to_dict()
    jobs = [(cfg_dict, inst) for inst in instances]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_process, jobs, chunksize=max(1, len(jobs) // (4 * config.workers))))
    else:
        results = [_process(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    by_inst = {i.instance_id: i for i in instances}
    records, rows, failures = [], [], []
    for iid, rec, metrics, err in results:
        if err is not None:
            failures.append(err)
            continue
        records.append(rec)
        rows.append(metrics)
        if library is not None and rec["plan"] is not None:
            inst = by_inst[iid]
            library.add_case(ProblemContext(inst.query_text, inst.caption), rec["plan"])
    names = metric_names(config)
    return {
        "format": RUN_FORMAT,
        "version": RUN_VERSION,
        "code_version": __version__,
        "config": cfg_dict,
        "records": records,
        "metrics": {k: _round(v) for k, v in mean_metrics(rows, names).items()},
        "n_instances": len(instances),
        "n_budget_exhausted": sum(1 for r in records if r["budget_exhausted"]),
        "failures": failures,
    }


def report_bytes(report: dict[str, Any]) -> bytes:
    return (json.dumps(report, sort_keys=True, indent=1) + "\n").encode("utf-8")
