"""Ablation table on the adversarial synthetic suite.

Every suite instance plants distractors at the top of each positive ranking;
only a negative clause can remove them. ``python3 demos/ablation_suite.py 50``
runs the first 50 instances (default 200, about half a minute).
"""

import sys

from cirplan.evaluation import ablation_table, run_ablation, suite_instances
from cirplan.pipeline import PipelineConfig, metric_names

count = int(sys.argv[1]) if len(sys.argv) > 1 else 200
instances = suite_instances(count, seed=42)
config = PipelineConfig()
cache: dict = {}  # offline trajectories are shared by the variants
results = [run_ablation(instances, v, config, trajectories=cache)
           for v in ("full", "no_diff", "union_only", "no_demos")]
print(ablation_table(results, metric_names(config)))

full, union = results[0].means, results[2].means
print(f"F1 full {100 * full['F1']:.2f} vs union-only {100 * union['F1']:.2f}")
print(f"mean final-set size {full['size']:.1f} vs {union['size']:.1f}: the difference step removes the decoys")
for k in (10, 50):
    print(f"R@{k}: full {100 * full[f'R@{k}']:.2f}, union-only {100 * union[f'R@{k}']:.2f}")
