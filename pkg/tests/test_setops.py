import pytest
from hypothesis import given
from hypothesis import strategies as st

from cirplan.errors import StepValidationError
from cirplan.model import CandidateSet
from cirplan.setops import (
    Step,
    drop_difference,
    execute_steps,
    mean_removed,
    parse_steps,
    steps_to_json,
    two_clause_steps,
    union_only,
)


def cs(*xs):
    return CandidateSet(xs)


TOOL_CALL_ARGS = {
    "steps": [
        {"name": "positive", "op": "UNION", "operands": [0, 1]},
        {"name": "negative", "op": "INTERSECT", "operands": [2, 3]},
        {"name": "final", "op": "DIFFERENCE", "operands": ["positive", "negative"]},
    ]
}


def test_tool_call_example():
    sets = [cs(1, 2), cs(2, 3), cs(3, 9), cs(3, 4)]
    out = execute_steps(parse_steps(TOOL_CALL_ARGS), sets)
    assert out["positive"] == cs(1, 2, 3)
    assert out["negative"] == cs(3)
    assert out["final"] == cs(1, 2)


def test_json_round_trip():
    steps = parse_steps(TOOL_CALL_ARGS)
    assert parse_steps(steps_to_json(steps)) == steps
    assert steps_to_json(steps) == TOOL_CALL_ARGS


def test_lowercase_op_is_accepted():
    steps = parse_steps([{"name": "final", "op": "union", "operands": [0]}])
    assert steps[0].op == "UNION"


@pytest.mark.parametrize(
    "steps, fragment",
    [
        ([{"name": "final", "op": "XOR", "operands": [0]}], "unknown op"),
        ([{"name": "final", "op": "DIFFERENCE", "operands": [0]}], "exactly 2"),
        ([{"name": "final", "op": "UNION", "operands": []}], "at least one"),
        ([{"name": "final", "op": "UNION", "operands": [5]}], "out of range"),
        ([{"name": "final", "op": "UNION", "operands": ["later"]}], "unknown or later"),
        ([{"name": "a", "op": "UNION", "operands": [0]}], "no step named"),
        ([{"name": "a", "op": "UNION", "operands": [0]}, {"name": "a", "op": "UNION", "operands": [0]}], "duplicate"),
    ],
)
def test_validation_errors(steps, fragment):
    with pytest.raises(StepValidationError, match=fragment):
        execute_steps(parse_steps(steps), [cs(1), cs(2)])


def test_malformed_payloads():
    for bad in ({"steps": 3}, [3], [{"op": "UNION"}], [{"name": "f", "operands": [True]}], [{"name": "f", "operands": 1}]):
        with pytest.raises(StepValidationError):
            parse_steps(bad)


def test_two_clause_shapes():
    assert two_clause_steps(2, 0) == [Step("final", "UNION", (0, 1))]
    assert steps_to_json(two_clause_steps(2, 2)) == TOOL_CALL_ARGS
    with pytest.raises(StepValidationError):
        two_clause_steps(0, 1)


def test_ablation_transforms():
    steps = two_clause_steps(2, 2)
    sets = [cs(1, 2), cs(2, 3), cs(3, 9), cs(3, 4)]
    assert execute_steps(drop_difference(steps), sets)["final"] == cs(1, 2, 3)
    assert execute_steps(union_only(steps), sets)["negative"] == cs(3, 4, 9)
    assert execute_steps(union_only(steps), sets)["final"] == cs(1, 2, 3)


def test_mean_removed():
    assert mean_removed([(cs(1, 2, 3), cs(1)), (cs(1), cs(1))]) == 1
    assert mean_removed([]) == 0


sets_st = st.lists(st.frozensets(st.integers(0, 30), max_size=10), min_size=2, max_size=6)


@given(sets_st, st.integers(1, 5))
def test_two_clause_matches_set_algebra(raw, split):
    split = min(split, len(raw) - 1)
    sets = [CandidateSet(s) for s in raw]
    final = execute_steps(two_clause_steps(split, len(raw) - split), sets)["final"]
    pos = frozenset().union(*raw[:split])
    neg = frozenset.intersection(*raw[split:])
    assert set(final) == pos - neg
    assert final <= execute_steps(union_only(two_clause_steps(split, len(raw) - split)), sets)["final"]
