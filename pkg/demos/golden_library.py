"""Build a golden library from optimal trajectories, then reuse it.

Trajectories of a training split become cases keyed by the embedding of the
query and caption; a test instance retrieves its nearest case and replays the
stored plan (its tool calls and set-operation steps) on its own retrievals.
"""

import tempfile
from pathlib import Path

from cirplan.evaluation import run_ablation
from cirplan.library import GoldenLibrary, ProblemContext, sample_training_corpus
from cirplan.pipeline import PipelineConfig, run_pipeline
from cirplan.synth import GeneratorConfig, generate_corpus

cfg = GeneratorConfig(gallery_size=400, tools=("emb_a", "cap_a"), hit_rates=(0.8, 0.7),
                      n_distractors=12, planted=2, grid=(5, 10, 20), adversarial_fraction=0.5)
pipeline = PipelineConfig(grid=(5, 10, 20))
corpus = list(generate_corpus(cfg, 60))
train = sample_training_corpus(corpus[:40], "0.5", seed=1)  # floor(40 * 0.5) = 20 cases
test = corpus[40:]

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "library.jsonl"
    library = GoldenLibrary(path=path)
    run_pipeline(pipeline, train, library=library)
    print(f"library: {library.stats()['cases']} cases, {path.stat().st_size} bytes on disk")

    inst = test[0]
    for case, sim in library.retrieve(ProblemContext(inst.query_text, inst.caption), n=2):
        calls = ", ".join(f"{c['polarity']}{c['tool']}@{c['top_k']}" for c in case.plan["tool_calls"])
        print(f"  case {case.id} (cosine {sim:.3f}): {calls}")

    reloaded = GoldenLibrary.load(path)
    print("reload is byte-identical:", reloaded.dumps() == path.read_text())

    for variant in ("full", "no_demos"):
        res = run_ablation(test, variant, pipeline, library=reloaded)
        print(f"{variant:9s} F1 {100 * res.means['F1']:.2f}  R@10 {100 * res.means['R@10']:.2f}"
              f"  substitutions on {len(res.flags)} instances")
