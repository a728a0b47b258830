import pytest

from cirplan.evaluation import (
    AblationVariant,
    ablation_table,
    adversarial_suite_config,
    run_ablation,
    suite_instances,
    template_plan,
    transform_steps,
)
from cirplan.library import GoldenLibrary
from cirplan.pipeline import PipelineConfig, metric_names, replay_plan, run_pipeline
from cirplan.setops import parse_steps, two_clause_steps


@pytest.fixture(scope="module")
def suite():
    return suite_instances(count=12)


def test_variant_parse():
    assert AblationVariant.parse("no_diff_no_int") is AblationVariant.UNION_ONLY
    assert AblationVariant.parse("full") is AblationVariant.FULL
    with pytest.raises(ValueError):
        AblationVariant.parse("bogus")


def test_transform_steps():
    steps = two_clause_steps(1, 2)
    assert [s.op for s in transform_steps(steps, AblationVariant.FULL)] == ["UNION", "INTERSECT", "DIFFERENCE"]
    assert [s.op for s in transform_steps(steps, AblationVariant.NO_DIFF)] == ["UNION", "INTERSECT", "UNION"]
    assert [s.op for s in transform_steps(steps, AblationVariant.UNION_ONLY)] == ["UNION", "UNION", "UNION"]


def test_suite_profile(suite):
    cfg = adversarial_suite_config()
    assert cfg.adversarial_fraction == 1.0 and len(cfg.tools) == 4
    assert len(suite) == 12 and suite[0].instance_id == "synth-42-00000"


def test_template_plan_replays(suite):
    plan = template_plan(suite[0])
    assert len(plan["tool_calls"]) == 8
    assert {c["top_k"] for c in plan["tool_calls"]} == {20}
    assert not replay_plan(plan, suite[0]).flags


def test_full_beats_union_only_on_f1(suite):
    cache = {}
    full = run_ablation(suite, "full", trajectories=cache)
    union = run_ablation(suite, "union_only", trajectories=cache)
    nodiff = run_ablation(suite, "no_diff", trajectories=cache)
    assert full.means["F1"] > union.means["F1"]
    assert union.means == nodiff.means  # identical on two-clause plans
    for a, b in zip(full.rows, union.rows):
        assert a["size"] <= b["size"]  # the difference only ever removes items


def test_library_mode_and_table(suite, tmp_path):
    lib = GoldenLibrary()
    run_pipeline(PipelineConfig(), suite[:6], library=lib)
    res = [run_ablation(suite[6:], v, library=lib) for v in ("full", "union_only", "no_demos")]
    names = metric_names(PipelineConfig())
    table = ablation_table(res, names)
    lines = table.splitlines()
    assert lines[0].split("\t") == ["variant", "n", *names]
    assert [ln.split("\t")[0] for ln in lines[1:]] == ["full", "union_only", "no_demos"]
    assert all(ln.split("\t")[1] == "6" for ln in lines[1:])


def test_parse_steps_of_template(suite):
    plan = template_plan(suite[1])
    assert [s.name for s in parse_steps(plan["steps"])] == ["positive", "negative", "final"]
