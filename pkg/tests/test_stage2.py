import random
from fractions import Fraction

from hypothesis import given, settings
from hypothesis import strategies as st

from cirplan.bip import Status
from cirplan.model import CandidateSet
from cirplan.stage1 import Stage1Solution, solve_stage1
from cirplan.stage2 import PlanStatus, evaluate_two_clause, solve_stage2
from oracles import make_instance, random_instance, stage2_oracle


def select_all(inst):
    ids = tuple(r.id for r in inst.positives)
    universe = CandidateSet.union_all(r.results for r in inst.positives)
    return Stage1Solution(ids, universe, Fraction(0), Fraction(0), (), Status.OPTIMAL)


def oracle_for(inst, s1):
    by_id = inst.by_id()
    return stage2_oracle(
        s1.universe,
        [by_id[r].ranking for r in s1.selected],
        [r.ranking for r in inst.negatives],
        inst.ground_truth,
    )


def test_negative_clause_removes_shared_distractor():
    # positives cover gt {0,1} plus distractor 9; both negatives contain 9
    inst = make_instance(gt=[0, 1], positives=[[0, 9], [1, 9]], negatives=[[9, 0], [9, 1]], gallery=12)
    plan = solve_stage2(select_all(inst), inst)
    assert set(plan.final) == {0, 1}
    assert plan.negatives == (2, 3) and plan.excluded == 1
    assert plan.objective == 2


def test_single_negative_would_also_remove_gt():
    inst = make_instance(gt=[0, 1], positives=[[0, 1, 9]], negatives=[[9, 0]], gallery=12)
    plan = solve_stage2(select_all(inst), inst)
    assert plan.negatives == () and set(plan.final) == {0, 1, 9}


def test_no_negatives_selected_excludes_nothing():
    assert evaluate_two_clause([0], [], {0: CandidateSet({1, 2})}) == CandidateSet({1, 2})


def test_empty_universe():
    inst = make_instance(gt=[0], positives=[[]], gallery=3)
    s1 = Stage1Solution((), CandidateSet(), Fraction(0), Fraction(0), (), Status.OPTIMAL)
    assert solve_stage2(s1, inst).status is PlanStatus.EMPTY_UNIVERSE


def test_oracle_equivalence_with_stage1():
    rng = random.Random(17)
    for _ in range(60):
        inst = random_instance(rng, rng.randint(1, 4), (3, 6), neg_families=rng.randint(0, 3), gallery=25)
        s1 = solve_stage1(inst)
        if not s1.universe:
            continue
        plan = solve_stage2(s1, inst)
        assert plan.objective == oracle_for(inst, s1)
        assert plan.positives and set(plan.positives) <= set(s1.selected)
        assert plan.final <= s1.universe


def test_frozen_fixture_value():
    inst = random_instance(random.Random(5), 4, (4,), neg_families=3, gallery=20)
    plan = solve_stage2(select_all(inst), inst)
    assert plan.objective == oracle_for(inst, select_all(inst)) == Fraction(19, 10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_oracle_equivalence_property(seed):
    rng = random.Random(seed)
    inst = random_instance(rng, rng.randint(1, 5), (4,), neg_families=rng.randint(0, 3), gallery=20)
    s1 = select_all(inst)
    if not s1.universe:
        return
    plan = solve_stage2(s1, inst)
    assert plan.objective == oracle_for(inst, s1)
    by_id = inst.by_id()
    sets = {r.id: r.results for r in inst.pool}
    assert plan.final == evaluate_two_clause(plan.positives, plan.negatives, sets) & s1.universe
    assert all(by_id[r].positive for r in plan.positives)
