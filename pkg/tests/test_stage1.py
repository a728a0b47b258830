import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cirplan.bip import SolveLimits, Status
from cirplan.errors import ConfigError
from cirplan.model import build_incidence
from cirplan.stage1 import (
    Stage1Weights,
    build_stage1_model,
    greedy_selection,
    score_selection,
    solve_stage1,
)
from cirplan.synth import GeneratorConfig, generate_instance
from oracles import make_instance, random_instance, stage1_oracle, stage1_value


def test_single_worked_example():
    # gallery of 10, gt {0,1}; retrieval 0 hits 0 and 5, retrieval 1 hits 1 only
    inst = make_instance(gt=[0, 1], positives=[[0, 5], [1]], gallery=10)
    sol = solve_stage1(inst)
    assert sol.selected == (0, 1)
    assert sol.objective == 1 - Fraction(1, 2) * Fraction(1, 8) + Fraction(2, 100)
    assert sol.coverage == 1 and sol.status is Status.OPTIMAL
    assert set(sol.universe) == {0, 1, 5}


def test_noise_only_retrieval_is_dropped():
    inst = make_instance(gt=[0], positives=[[0], [3, 4, 5]], gallery=10)
    assert solve_stage1(inst).selected == (0,)


def test_family_exclusivity_picks_one_k():
    rng = random.Random(4)
    for _ in range(30):
        inst = random_instance(rng, 3, (2, 4, 6))
        sol = solve_stage1(inst)
        by_id = inst.by_id()
        keys = [(by_id[r].tool, by_id[r].query) for r in sol.selected]
        assert len(keys) == len(set(keys))


def test_weights_parse():
    w = Stage1Weights.parse("1, 1/4, 0.02")
    assert (w.w_recall, w.w_noise, w.lambda_div) == (1, Fraction(1, 4), Fraction(1, 50))
    assert w.as_strings() == ["1", "1/4", "1/50"]
    for bad in ("1,2", "0,1,1", "1,-1,0", "a,b,c"):
        with pytest.raises(ConfigError):
            Stage1Weights.parse(bad)


def test_oracle_equivalence_small():
    rng = random.Random(21)
    for _ in range(60):
        inst = random_instance(rng, rng.randint(1, 4), (2, 5), neg_families=1, n_tools=3)
        sol = solve_stage1(inst)
        assert sol.objective == stage1_oracle(inst)
        assert sol.objective == stage1_value(inst, sol.selected, 1, Fraction(1, 2), Fraction(1, 100))


def test_frozen_fixture_value():
    inst = random_instance(random.Random(0), 3, (2, 4), neg_families=1)
    assert solve_stage1(inst).objective == stage1_oracle(inst)
    assert stage1_oracle(inst) == Fraction(1793, 2775)


def test_warm_start_does_not_change_optimum():
    rng = random.Random(8)
    for _ in range(20):
        inst = random_instance(rng, 4, (3, 6))
        assert solve_stage1(inst, warm_start=True).objective == solve_stage1(inst, warm_start=False).objective


def test_greedy_is_feasible_lower_bound():
    rng = random.Random(9)
    for _ in range(20):
        inst = random_instance(rng, 4, (3, 6))
        w = Stage1Weights()
        assert score_selection(inst, greedy_selection(inst, w), w) <= solve_stage1(inst).objective


def test_budget_exhaustion_reports_status():
    inst = generate_instance(GeneratorConfig(), 0)
    sol = solve_stage1(inst, limits=SolveLimits(node_budget=20), warm_start=True)
    assert sol.status is Status.FEASIBLE and not sol.proven


def test_model_has_one_variable_per_positive_retrieval():
    inst = random_instance(random.Random(3), 2, (2, 4), neg_families=2)
    prog = build_stage1_model(build_incidence(inst), Stage1Weights())
    assert sum(1 for v in prog.variables if v.startswith("x_")) == len(inst.positives)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_oracle_equivalence_property(seed):
    rng = random.Random(seed)
    inst = random_instance(rng, rng.randint(1, 3), (1, 3, 5), gallery=20, n_gt=rng.randint(1, 4))
    assert solve_stage1(inst).objective == stage1_oracle(inst)
