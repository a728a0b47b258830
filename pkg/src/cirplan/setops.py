"""Named set-operation step lists, in the shape the planner's set_operation
tool receives them::

    {"steps": [{"name": "positive", "op": "UNION", "operands": [0, 1, 2, 3]},
               {"name": "negative", "op": "INTERSECT", "operands": [4, 5, 6]},
               {"name": "final", "op": "DIFFERENCE", "operands": ["positive", "negative"]}]}

Integer operands index the preceding tool calls in call order; string
operands name earlier steps. A step called ``final`` is mandatory.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Iterable, Mapping, Sequence

from .errors import StepValidationError
from .model import CandidateSet

OPS = ("UNION", "INTERSECT", "DIFFERENCE")
FINAL = "final"

Operand = int | str


@dataclass(frozen=True)
class Step:
    name: str
    op: str
    operands: tuple[Operand, ...]

    def to_json(self) -> dict[str, Any]:
        return {"name": self.name, "op": self.op, "operands": list(self.operands)}


def parse_steps(payload: Mapping[str, Any] | Sequence[Mapping[str, Any]]) -> list[Step]:
    """Accept either ``{"steps": [...]}`` (the tool-call arguments) or the bare list."""
    raw = payload.get("steps") if isinstance(payload, Mapping) else payload
    if not isinstance(raw, (list, tuple)):
        raise StepValidationError(None, "expected a list of steps")
    steps = []
    for k, item in enumerate(raw):
        if not isinstance(item, Mapping):
            raise StepValidationError(None, f"step #{k} is not an object")
        name = item.get("name")
        if not isinstance(name, str) or not name:
            raise StepValidationError(None, f"step #{k} has no name")
        operands = item.get("operands")
        if not isinstance(operands, (list, tuple)):
            raise StepValidationError(name, "operands must be a list")
        for o in operands:
            if isinstance(o, bool) or not isinstance(o, (int, str)):
                raise StepValidationError(name, f"operand {o!r} is neither an index nor a step name")
        steps.append(Step(name, str(item.get("op", "")).upper(), tuple(operands)))
    return steps


def steps_to_json(steps: Iterable[Step]) -> dict[str, Any]:
    return {"steps": [s.to_json() for s in steps]}


def validate_steps(steps: Sequence[Step], n_results: int) -> None:
    seen: set[str] = set()
    for step in steps:
        if step.name in seen:
            raise StepValidationError(step.name, "duplicate step name")
        if step.op not in OPS:
            raise StepValidationError(step.name, f"unknown op {step.op!r}")
        if step.op == "DIFFERENCE" and len(step.operands) != 2:
            raise StepValidationError(step.name, f"DIFFERENCE takes exactly 2 operands, got {len(step.operands)}")
        if not step.operands:
            raise StepValidationError(step.name, f"{step.op} needs at least one operand")
        for o in step.operands:
            if isinstance(o, int):
                if not 0 <= o < n_results:
                    raise StepValidationError(step.name, f"tool result index {o} out of range (have {n_results})")
            elif o not in seen:
                raise StepValidationError(step.name, f"reference to unknown or later step {o!r}")
        seen.add(step.name)
    if FINAL not in seen:
        raise StepValidationError(None, "no step named 'final'")


def execute_steps(steps: Sequence[Step], operand_sets: Sequence[CandidateSet]) -> dict[str, CandidateSet]:
    """Validate the whole list, then evaluate it in order."""
    validate_steps(steps, len(operand_sets))
    out: dict[str, CandidateSet] = {}
    for step in steps:
        args = [operand_sets[o] if isinstance(o, int) else out[o] for o in step.operands]
        if step.op == "UNION":
            out[step.name] = CandidateSet.union_all(args)
        elif step.op == "INTERSECT":
            out[step.name] = CandidateSet.intersect_all(args)
        else:
            out[step.name] = args[0] - args[1]
    return out


def two_clause_steps(n_positive: int, n_negative: int) -> list[Step]:
    """Canonical step list for ``(union of positives) minus (intersection of negatives)``.

    Positives are tool calls ``0..n_positive-1``, negatives follow them.
    """
    if n_positive < 1:
        raise StepValidationError(None, "a two-clause plan needs at least one positive call")
    pos = tuple(range(n_positive))
    if n_negative == 0:
        return [Step(FINAL, "UNION", pos)]
    neg = tuple(range(n_positive, n_positive + n_negative))
    return [
        Step("positive", "UNION", pos),
        Step("negative", "INTERSECT", neg),
        Step(FINAL, "DIFFERENCE", ("positive", "negative")),
    ]


def drop_difference(steps: Sequence[Step]) -> list[Step]:
    """Replace every ``DIFFERENCE(a, b)`` by ``a``: nothing is ever excluded."""
    return [Step(s.name, "UNION", s.operands[:1]) if s.op == "DIFFERENCE" else s for s in steps]


def union_only(steps: Sequence[Step]) -> list[Step]:
    """Drop differences and turn intersections into unions."""
    return [Step(s.name, "UNION", s.operands) if s.op == "INTERSECT" else s for s in drop_difference(steps)]


def composition_stats(before: CandidateSet, after: CandidateSet) -> dict[str, int]:
    return {"removed": len(before) - len(after), "kept": len(after)}


def mean_removed(pairs: Iterable[tuple[CandidateSet, CandidateSet]]) -> Fraction:
    counts = [composition_stats(b, a)["removed"] for b, a in pairs]
    return Fraction(sum(counts), len(counts)) if counts else Fraction(0)
