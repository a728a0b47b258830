"""Recall-oriented selection of positive retrievals.

Chooses at most one truncation level per family so that the union of the
chosen result sets covers as much ground truth as possible, is penalized for
each retrieved non-ground-truth image, and is rewarded for every distinct tool
it uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .bip import Assignment, BinaryProgram, SolveLimits, Status, as_fraction, solve_exact
from .errors import ConfigError, InternalSolverError, ModelError
from .model import CandidateSet, IncidenceData, Instance, build_incidence

DECISION_PRIORITY = 1
WARM_START_THRESHOLD = 24


@dataclass(frozen=True)
class Stage1Weights:
    w_recall: Fraction = Fraction(1)
    w_noise: Fraction = Fraction(1, 2)
    lambda_div: Fraction = Fraction(1, 100)

    def __post_init__(self):
        for name in ("w_recall", "w_noise", "lambda_div"):
            object.__setattr__(self, name, as_fraction(getattr(self, name)))
        if self.w_recall <= 0:
            raise ConfigError("recall weight must be positive")
        if self.w_noise < 0 or self.lambda_div < 0:
            raise ConfigError("noise and diversity weights must be non-negative")

    @classmethod
    def parse(cls, text: str) -> Stage1Weights:
        """Parse ``"wR,wP,lambdaDiv"``; each entry may be ``p/q`` or a decimal."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 3:
            raise ConfigError(f"expected three comma-separated weights, got {text!r}")
        try:
            return cls(*(Fraction(p) for p in parts))
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"invalid weights {text!r}") from None

    def as_strings(self) -> list[str]:
        return [str(self.w_recall), str(self.w_noise), str(self.lambda_div)]


@dataclass(frozen=True)
class Stage1Solution:
    selected: tuple[int, ...]
    universe: CandidateSet
    objective: Fraction
    coverage: Fraction
    active_tools: tuple[str, ...]
    status: Status
    nodes: int = 0
    weights: Stage1Weights = field(default_factory=Stage1Weights)

    @property
    def proven(self) -> bool:
        return self.status is Status.OPTIMAL


def _x(rid: int) -> str:
    return f"x_{rid}"


def build_stage1_model(incidence: IncidenceData, weights: Stage1Weights) -> BinaryProgram:
    if not incidence.positive_ids:
        raise ModelError("selection model needs at least one positive retrieval")
    prog = BinaryProgram("stage1")
    n_gt = len(incidence.ground_truth)
    n_neg = incidence.n_negative_images
    x = {rid: prog.add_var(_x(rid), 0, DECISION_PRIORITY) for rid in incidence.positive_ids}
    y = {i: prog.add_var(f"y_{i}", weights.w_recall / n_gt) for i in incidence.ground_truth}
    noise_coef = -weights.w_noise / n_neg if n_neg else Fraction(0)
    z = {i: prog.add_var(f"z_{i}", noise_coef) for i in incidence.noise_hits}
    t = {f: prog.add_var(f"t_{k}", weights.lambda_div) for k, f in enumerate(incidence.tools)}

    for i, yi in y.items():
        hits = incidence.gt_hits.get(i, ())
        prog.add_constraint([(yi, 1)] + [(x[r], -1) for r in hits], "<=", 0, f"cover_lb_{i}")
        if hits:
            prog.add_constraint([(x[r], 1) for r in hits] + [(yi, -len(hits))], "<=", 0, f"cover_ub_{i}")
    for i, zi in z.items():
        hits = incidence.noise_hits[i]
        prog.add_constraint([(zi, 1)] + [(x[r], -1) for r in hits], "<=", 0, f"noise_lb_{i}")
        prog.add_constraint([(x[r], 1) for r in hits] + [(zi, -len(hits))], "<=", 0, f"noise_ub_{i}")
    for k, fam in enumerate(incidence.families):
        prog.add_constraint([(x[r], 1) for r in fam.members], "<=", 1, f"family_{k}")
    for k, f in enumerate(incidence.tools):
        members = incidence.tool_members[f]
        prog.add_constraint([(t[f], 1)] + [(x[r], -1) for r in members], "<=", 0, f"tool_lb_{k}")
        prog.add_constraint([(x[r], 1) for r in members] + [(t[f], -len(members))], "<=", 0, f"tool_ub_{k}")
    return prog


def score_selection(instance: Instance, selection: Iterable[int], weights: Stage1Weights) -> Fraction:
    """Selection objective evaluated directly on result sets."""
    by_id = instance.by_id()
    chosen = [by_id[r] for r in selection]
    union = CandidateSet.union_all(r.results for r in chosen)
    return _score(union.bits, len({r.tool for r in chosen}), instance.ground_truth.bits,
                  len(instance.ground_truth), instance.n_negative_images, weights)


def _score(union_bits: int, n_tools: int, gt_bits: int, n_gt: int, n_neg: int, w: Stage1Weights) -> Fraction:
    hit = (union_bits & gt_bits).bit_count()
    noise = union_bits.bit_count() - hit
    out = w.w_recall * Fraction(hit, n_gt) + w.lambda_div * n_tools
    if n_neg:
        out -= w.w_noise * Fraction(noise, n_neg)
    return out


def greedy_selection(instance: Instance, weights: Stage1Weights) -> list[int]:
    """Greedy additions followed by per-family swap/drop moves; a warm start only."""
    positives = instance.positives
    gt_bits = instance.ground_truth.bits
    n_gt, n_neg = len(instance.ground_truth), instance.n_negative_images
    fam_of = {r.id: r.family_key for r in positives}
    by_id = {r.id: r for r in positives}
    families: dict[tuple, list[int]] = {}
    for r in positives:
        families.setdefault(r.family_key, []).append(r.id)

    def evaluate(sel: dict) -> Fraction:
        bits = 0
        for rid in sel.values():
            bits |= by_id[rid].results.bits
        tools = {by_id[rid].tool for rid in sel.values()}
        return _score(bits, len(tools), gt_bits, n_gt, n_neg, weights)

    sel: dict[tuple, int] = {}
    current = evaluate(sel)
    bits = 0
    tools: set[str] = set()
    while True:
        best_gain, best_r = Fraction(0), None
        for r in positives:
            if fam_of[r.id] in sel:
                continue
            new_bits = bits | r.results.bits
            val = _score(new_bits, len(tools | {r.tool}), gt_bits, n_gt, n_neg, weights)
            if val - current > best_gain:
                best_gain, best_r = val - current, r
        if best_r is None:
            break
        sel[fam_of[best_r.id]] = best_r.id
        bits |= best_r.results.bits
        tools.add(best_r.tool)
        current += best_gain

    for _ in range(5):
        improved = False
        for key, members in families.items():
            options: list[int | None] = [None, *members]
            for alt in options:
                trial = dict(sel)
                if alt is None:
                    trial.pop(key, None)
                else:
                    trial[key] = alt
                val = evaluate(trial)
                if val > current:
                    sel, current, improved = trial, val, True
        if not improved:
            break
    return sorted(sel.values())


def assignment_for_selection(program: BinaryProgram, instance: Instance, selection: Sequence[int]) -> list[int]:
    """Complete 0-1 vector for ``program`` implied by a retrieval selection."""
    by_id = instance.by_id()
    chosen = [by_id[r] for r in selection]
    union = CandidateSet.union_all(r.results for r in chosen)
    tools = {r.tool for r in chosen}
    tool_index = {f"t_{k}": f for k, f in enumerate(dict.fromkeys(r.tool for r in instance.positives))}
    picked = {_x(r) for r in selection}
    values = []
    for name in program.variables:
        kind, _, ref = name.partition("_")
        if kind == "x":
            values.append(int(name in picked))
        elif kind in ("y", "z"):
            values.append(int(int(ref) in union))
        else:
            values.append(int(tool_index[name] in tools))
    return values


def solve_stage1(
    instance: Instance,
    weights: Stage1Weights | None = None,
    limits: SolveLimits | None = None,
    warm_start: bool | None = None,
) -> Stage1Solution:
    weights = weights or Stage1Weights()
    incidence = build_incidence(instance)
    program = build_stage1_model(incidence, weights)
    if warm_start is None:
        warm_start = len(incidence.positive_ids) > WARM_START_THRESHOLD
    initial = None
    if warm_start:
        initial = assignment_for_selection(program, instance, greedy_selection(instance, weights))
    result: Assignment = solve_exact(program, limits, initial=initial)
    if not result.has_solution:
        if result.status is Status.INFEASIBLE:
            raise InternalSolverError("selection model reported infeasible; all-zero is feasible")
        return Stage1Solution((), CandidateSet(), Fraction(0), Fraction(0), (), result.status, result.nodes, weights)

    values = result.as_dict()
    selected = tuple(r for r in incidence.positive_ids if values[_x(r)] == 1)
    by_id = instance.by_id()
    universe = CandidateSet.union_all(by_id[r].results for r in selected)
    objective = score_selection(instance, selected, weights)
    if objective != result.objective:
        raise InternalSolverError(f"solver objective {result.objective} != set-level objective {objective}")
    coverage = Fraction(len(universe & instance.ground_truth), len(instance.ground_truth))
    tools = tuple(dict.fromkeys(by_id[r].tool for r in selected))
    return Stage1Solution(selected, universe, objective, coverage, tools, result.status, result.nodes, weights)
