"""Two-stage plan search on one small synthetic instance.

Run with ``python3 demos/walkthrough_two_stage.py``.
"""

# %% a small instance: two tools, two positive rewrites and one negative rewrite each
from cirplan.model import Polarity
from cirplan.pipeline import replay_plan, two_clause_descriptor
from cirplan.stage1 import solve_stage1
from cirplan.stage2 import solve_stage2
from cirplan.synth import GeneratorConfig, generate_instance

cfg = GeneratorConfig(gallery_size=300, tools=("emb_a", "cap_a"), hit_rates=(0.8, 0.7),
                      n_distractors=10, planted=2, grid=(5, 10, 20), adversarial_fraction=1.0)
inst = generate_instance(cfg, 0)
print(f"{inst.instance_id}: gallery {inst.gallery_size}, ground truth {sorted(inst.ground_truth)}")
print(f"query: {inst.query_text!r}, caption: {inst.caption!r}")
for r in inst.pool:
    if r.k == 20:
        hits = len(r.results & inst.ground_truth)
        print(f"  {r.polarity.value} {r.tool:6s} {r.query:20s} top-20 holds {hits} ground-truth items")

# %% stage 1: pick at most one cutoff per (tool, rewrite) to cover the ground truth cheaply
s1 = solve_stage1(inst)
by_id = inst.by_id()
print(f"\nstage 1 ({s1.status.value}, {s1.nodes} nodes): objective {s1.objective}, coverage {s1.coverage}")
for rid in s1.selected:
    r = by_id[rid]
    print(f"  selected {r.tool} / {r.query} @ k={r.k}")
print(f"  universe of {len(s1.universe)} candidates")

# %% stage 2: union of a positive subset minus the intersection of a negative subset
plan = solve_stage2(s1, inst)
print(f"\nstage 2: keep {len(plan.positives)} positive and {len(plan.negatives)} negative retrievals")
print(f"  final set of {len(plan.final)}, {len(plan.final & inst.ground_truth)} true, {plan.excluded} excluded")
negs = [by_id[r] for r in plan.negatives]
assert all(r.polarity is Polarity.NEGATIVE for r in negs)

# %% the plan as a replayable descriptor: tool calls plus named set-operation steps, no image ids
desc = two_clause_descriptor(plan, inst)
for step in desc["steps"]:
    print(f"  {step['name']:9s} = {step['op']}({', '.join(map(str, step['operands']))})")
print("replay reproduces the final set:", replay_plan(desc, inst).final == plan.final)
