"""F1-maximizing composition in disjunctive normal form.

Clauses are intersections of literals over the candidate universe: a positive
retrieval contributes its result set, a negative retrieval contributes the
complement of its result set within the universe. The final set is the union
of at most ``M`` chosen clauses, chosen to maximize F1 against the ground
truth. The ratio objective is handled by Dinkelbach iteration: solve the
parametric program ``2 tp - lam * (|gt| + tp + fp) - alpha * length`` and move
``lam`` to the F1 of the selection it returns until it stops increasing.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .bip import BinaryProgram, SolveLimits, Status, as_fraction, solve_exact
from .errors import ClauseBudgetError, ConfigError, InternalSolverError
from .model import AtomicRetrieval, CandidateSet
from .stage1 import DECISION_PRIORITY

DEFAULT_MAX_LEN = 3
DEFAULT_MAX_NEG = 1
DEFAULT_BUDGET = 3
DEFAULT_ALPHA = Fraction(1, 1000)
CLAUSE_BUDGET = 10_000


@dataclass(frozen=True)
class Clause:
    id: int
    literals: tuple[tuple[int, str], ...]  # (retrieval id, "+" | "-")
    extension: CandidateSet

    @property
    def length(self) -> int:
        return len(self.literals)

    @property
    def n_negative(self) -> int:
        return sum(1 for _, sign in self.literals if sign == "-")

    def describe(self) -> str:
        return " & ".join(f"S{r}" if sign == "+" else f"~S{r}" for r, sign in self.literals)


@dataclass(frozen=True)
class DnfSolution:
    selected: tuple[int, ...]
    result: CandidateSet
    f1: Fraction
    lambda_trace: tuple[Fraction, ...]
    parametric_values: tuple[Fraction, ...] = ()
    statuses: tuple[Status, ...] = ()

    @property
    def iterations(self) -> int:
        return len(self.parametric_values)

    @property
    def proven(self) -> bool:
        return all(s is Status.OPTIMAL for s in self.statuses)


def count_clauses(n_pos: int, n_neg: int, max_len: int, max_neg: int) -> int:
    total = 0
    for length in range(1, max_len + 1):
        for q in range(0, min(max_neg, length - 1) + 1):
            total += math.comb(n_pos, length - q) * math.comb(n_neg, q)
    return total


def enumerate_clauses(
    universe: CandidateSet,
    positives: Sequence[AtomicRetrieval],
    negatives: Sequence[AtomicRetrieval],
    max_len: int = DEFAULT_MAX_LEN,
    max_neg: int = DEFAULT_MAX_NEG,
    budget: int = CLAUSE_BUDGET,
) -> list[Clause]:
    """All clauses with at least one positive literal, at most ``max_len``
    literals and at most ``max_neg`` complemented ones, shortest first."""
    if max_len < 1:
        raise ConfigError("max clause length must be at least 1")
    if max_neg < 0:
        raise ConfigError("negative literal cap must be non-negative")
    count = count_clauses(len(positives), len(negatives), max_len, max_neg)
    if count > budget:
        raise ClauseBudgetError(count, budget)
    pos = [(r.id, r.results & universe) for r in positives]
    neg = [(r.id, universe - r.results) for r in negatives]
    clauses: list[Clause] = []
    for length in range(1, max_len + 1):
        for q in range(0, min(max_neg, length - 1) + 1):
            for pcombo in itertools.combinations(pos, length - q):
                for ncombo in itertools.combinations(neg, q):
                    ext = CandidateSet.intersect_all([s for _, s in pcombo] + [s for _, s in ncombo])
                    lits = tuple((r, "+") for r, _ in pcombo) + tuple((r, "-") for r, _ in ncombo)
                    clauses.append(Clause(len(clauses), lits, ext))
    return clauses


def f1_of(selection: Iterable[int], clauses: Sequence[Clause], ground_truth: CandidateSet) -> Fraction:
    by_id = {c.id: c for c in clauses}
    out = CandidateSet.union_all(by_id[c].extension for c in selection)
    return f1_score(out, ground_truth)


def f1_score(result: CandidateSet, ground_truth: CandidateSet) -> Fraction:
    tp = len(result & ground_truth)
    fp = len(result) - tp
    if tp == 0:
        return Fraction(0)
    return Fraction(2 * tp, len(ground_truth) + tp + fp)


def build_parametric_model(
    clauses: Sequence[Clause],
    ground_truth: CandidateSet,
    lam: Fraction,
    budget: int,
    alpha: Fraction,
) -> BinaryProgram:
    """Parametric program at ratio ``lam``, without the constant ``-lam*|gt|``."""
    prog = BinaryProgram("dnf_f1")
    u = {c.id: prog.add_var(f"u_{c.id}", -alpha * c.length, DECISION_PRIORITY) for c in clauses}
    gt_hits: dict[int, list[int]] = {}
    noise_hits: dict[int, list[int]] = {}
    for c in clauses:
        for i in c.extension:
            (gt_hits if i in ground_truth else noise_hits).setdefault(i, []).append(c.id)
    y = {i: prog.add_var(f"y_{i}", 2 - lam) for i in sorted(gt_hits)}
    z = {i: prog.add_var(f"z_{i}", -lam) for i in sorted(noise_hits)}
    for hits, ind, tag in ((gt_hits, y, "gt"), (noise_hits, z, "ngt")):
        for i, cs in sorted(hits.items()):
            prog.add_constraint([(ind[i], 1)] + [(u[c], -1) for c in cs], "<=", 0, f"{tag}_lb_{i}")
            prog.add_constraint([(u[c], 1) for c in cs] + [(ind[i], -len(cs))], "<=", 0, f"{tag}_ub_{i}")
    if clauses:
        prog.add_constraint([(u[c.id], 1) for c in clauses], "<=", budget, "budget")
    return prog


def solve_f1_dnf(
    clauses: Sequence[Clause],
    ground_truth: CandidateSet,
    budget: int = DEFAULT_BUDGET,
    alpha: Fraction = DEFAULT_ALPHA,
    limits: SolveLimits | None = None,
    max_iter: int = 200,
) -> DnfSolution:
    if budget < 1:
        raise ConfigError("clause budget M must be at least 1")
    alpha = as_fraction(alpha)
    if alpha < 0:
        raise ConfigError("alpha must be non-negative")
    lam = Fraction(0)
    trace = [lam]
    if not clauses:
        return DnfSolution((), CandidateSet(), Fraction(0), tuple(trace))

    by_id = {c.id: c for c in clauses}
    n_gt = len(ground_truth)
    best: tuple[int, ...] = ()
    values: list[Fraction] = []
    statuses: list[Status] = []
    for _ in range(max_iter):
        prog = build_parametric_model(clauses, ground_truth, lam, budget, alpha)
        res = solve_exact(prog, limits)
        if not res.has_solution:
            raise InternalSolverError("parametric model has no solution; the empty selection is feasible")
        statuses.append(res.status)
        chosen = res.as_dict()
        sel = tuple(c.id for c in clauses if chosen[f"u_{c.id}"])
        values.append(res.objective - lam * n_gt)
        f = f1_of(sel, clauses, ground_truth)
        if f <= lam:
            break
        lam = f
        best = sel
        trace.append(lam)
    if lam == 0:
        best = ()
    result = CandidateSet.union_all(by_id[c].extension for c in best)
    return DnfSolution(best, result, lam, tuple(trace), tuple(values), tuple(statuses))
