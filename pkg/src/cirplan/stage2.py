"""Precision-oriented two-clause composition.

The final set is ``(union of chosen positives) minus (intersection of chosen
negatives)``, restricted to the candidate universe produced by selection.
An image is only excluded when every chosen negative retrieval contains it;
choosing no negatives excludes nothing.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

from .bip import BinaryProgram, SolveLimits, Status, as_fraction, solve_exact
from .errors import ConfigError, InternalSolverError, ModelError, UnknownReferenceError
from .model import AtomicRetrieval, CandidateSet, Instance
from .stage1 import DECISION_PRIORITY, Stage1Solution


@dataclass(frozen=True)
class Stage2Weights:
    lambda_reg: Fraction = Fraction(1, 10)

    def __post_init__(self):
        object.__setattr__(self, "lambda_reg", as_fraction(self.lambda_reg))
        if self.lambda_reg < 0:
            raise ConfigError("lambda_reg must be non-negative")


class PlanStatus(str, enum.Enum):
    OK = "ok"
    EMPTY_UNIVERSE = "empty_universe"


@dataclass(frozen=True)
class TwoClausePlan:
    positives: tuple[int, ...]
    negatives: tuple[int, ...]
    final: CandidateSet
    objective: Fraction = Fraction(0)
    status: PlanStatus = PlanStatus.OK
    solver_status: Status | None = None
    nodes: int = 0
    excluded: int = 0  # images the negative clause removed from the positive union


def evaluate_two_clause(
    positives: Sequence[int], negatives: Sequence[int], sets: Mapping[int, CandidateSet]
) -> CandidateSet:
    try:
        pos = CandidateSet.union_all(sets[r] for r in positives)
        neg = CandidateSet.intersect_all(sets[r] for r in negatives)
    except KeyError as exc:
        raise UnknownReferenceError(f"unknown retrieval id {exc.args[0]}") from None
    return pos - neg


def score_final(final: CandidateSet, ground_truth: CandidateSet, lambda_reg: Fraction) -> Fraction:
    hit = len(final & ground_truth)
    return hit - lambda_reg * (len(final) - hit)


def build_stage2_model(
    universe: CandidateSet,
    positives: Sequence[AtomicRetrieval],
    negatives: Sequence[AtomicRetrieval],
    ground_truth: CandidateSet,
    weights: Stage2Weights,
) -> BinaryProgram:
    """Composition model over the images of ``universe``.

    Besides the textbook links, extra rows pin the image indicators to their
    logical values: ``|cov_i| e_i >= sum_cov x_r - |cov_i| g_i`` keeps any image
    covered by a chosen positive and not excluded; ``g_i <= sum of chosen
    negatives containing i`` and ``|in_i| g_i >= sum_in w_s - |in_i| sum_out w_r``
    make the intersection indicator exact. With them, zero chosen negatives
    excludes nothing, and the objective cannot drop noise images unless a
    negative clause actually removes them.
    """
    if not positives:
        raise ModelError("composition model needs at least one positive retrieval")
    prog = BinaryProgram("stage2")
    x = {r.id: prog.add_var(f"x_{r.id}", 0, DECISION_PRIORITY) for r in positives}
    w = {r.id: prog.add_var(f"w_{r.id}", 0, DECISION_PRIORITY) for r in negatives}
    e, g = {}, {}
    for i in universe:
        e[i] = prog.add_var(f"e_{i}", 1 if i in ground_truth else -weights.lambda_reg)
    for i in universe:
        g[i] = prog.add_var(f"g_{i}")

    pos_sets = {r.id: r.results & universe for r in positives}
    neg_sets = {r.id: r.results & universe for r in negatives}
    for i in universe:
        covering = [rid for rid, s in pos_sets.items() if i in s]
        inside = [rid for rid, s in neg_sets.items() if i in s]
        outside = [rid for rid, s in neg_sets.items() if i not in s]
        m = len(covering)
        prog.add_constraint([(e[i], 1)] + [(x[r], -1) for r in covering], "<=", 0, f"pos_{i}")
        prog.add_constraint([(e[i], 1), (g[i], 1)], "<=", 1, f"diff_{i}")
        prog.add_constraint([(x[r], 1) for r in covering] + [(g[i], -m), (e[i], -m)], "<=", 0, f"keep_{i}")
        for r in outside:
            prog.add_constraint([(g[i], 1), (w[r], 1)], "<=", 1, f"int_ub_{i}_{r}")
        prog.add_constraint([(g[i], 1)] + [(w[r], -1) for r in inside], "<=", 0, f"int_any_{i}")
        if inside:
            k = len(inside)
            prog.add_constraint(
                [(w[s], 1) for s in inside] + [(g[i], -k)] + [(w[r], -k) for r in outside],
                "<=", 0, f"int_lb_{i}",
            )
    prog.add_constraint([(x[r.id], 1) for r in positives], ">=", 1, "nonempty")
    return prog


def solve_stage2(
    stage1: Stage1Solution,
    instance: Instance,
    weights: Stage2Weights | None = None,
    limits: SolveLimits | None = None,
    negatives: Sequence[AtomicRetrieval] | None = None,
) -> TwoClausePlan:
    weights = weights or Stage2Weights()
    universe = stage1.universe
    if not universe:
        return TwoClausePlan((), (), CandidateSet(), Fraction(0), PlanStatus.EMPTY_UNIVERSE)
    by_id = instance.by_id()
    positives = [by_id[r] for r in stage1.selected]
    negatives = list(instance.negatives if negatives is None else negatives)
    program = build_stage2_model(universe, positives, negatives, instance.ground_truth, weights)
    result = solve_exact(program, limits)
    if not result.has_solution:
        if result.status is Status.INFEASIBLE:
            raise InternalSolverError("composition model infeasible with a non-empty universe")
        return TwoClausePlan((), (), CandidateSet(), Fraction(0), PlanStatus.OK, result.status, result.nodes)
    values = result.as_dict()
    pos_ids = tuple(r.id for r in positives if values[f"x_{r.id}"])
    neg_ids = tuple(r.id for r in negatives if values[f"w_{r.id}"])
    sets = {r.id: r.results & universe for r in (*positives, *negatives)}
    final = evaluate_two_clause(pos_ids, neg_ids, sets)
    solver_final = CandidateSet(i for i in universe if values[f"e_{i}"])
    if final != solver_final:
        raise InternalSolverError("final set disagrees with the solver's inclusion indicators")
    objective = score_final(final, instance.ground_truth, weights.lambda_reg)
    if objective != result.objective:
        raise InternalSolverError(f"solver objective {result.objective} != set-level {objective}")
    removed = len(CandidateSet.union_all(sets[r] for r in pos_ids)) - len(final)
    return TwoClausePlan(pos_ids, neg_ids, final, objective, PlanStatus.OK, result.status, result.nodes, removed)
