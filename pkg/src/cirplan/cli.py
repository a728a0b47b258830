"""Command-line entry point.

Exit codes: 0 success, 2 validation error, 3 solver budget exhausted without
a solution, 4 I/O error. Errors are also written to stderr as one JSON record.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .bip import Status, export_lp
from .errors import CirplanError, ConfigError, SolverBudgetError, StorageError
from .evaluation import AblationVariant, ablation_table, run_ablation
from .library import (
    GoldenLibrary,
    HttpEmbeddingProvider,
    ProblemContext,
    sample_training_corpus,
)
from .model import CandidateSet, Instance, build_incidence, read_instances, write_instances
from .pipeline import (
    PipelineConfig,
    Trajectory,
    load_pipeline_config,
    optimize_instance,
    rank_instance,
    replay_plan,
    report_bytes,
    run_pipeline,
    trajectory_record,
    two_clause_descriptor,
)
from .stage1 import Stage1Solution, Stage1Weights, build_stage1_model, score_selection, solve_stage1
from .stage2 import build_stage2_model, solve_stage2
from .synth import GeneratorConfig, config_json, generate_corpus, load_config


def _dumps(rec: Any) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def _write_jsonl(path: str | Path, records: Sequence[dict]) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text("".join(_dumps(r) + "\n" for r in records), encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from None


def _read_jsonl(path: str | Path) -> list[dict]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from None
    try:
        return [json.loads(line) for line in lines if line.strip()]
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON line ({exc})") from None


def _instances(path: str, only: str | None = None) -> list[Instance]:
    try:
        insts = read_instances(path)
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from None
    if only is not None:
        insts = [i for i in insts if i.instance_id == only]
        if not insts:
            raise ConfigError(f"instance {only!r} not found in {path}")
    return insts


def _pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_pipeline_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    data = cfg.to_dict()
    if getattr(args, "weights", None):
        w = Stage1Weights.parse(args.weights)
        data["stage1"] = {"w_recall": str(w.w_recall), "w_noise": str(w.w_noise), "lambda_div": str(w.lambda_div)}
    for attr, key in (("lambda_reg", None), ("composer", "composer"), ("max_len", "dnf_max_len"),
                      ("max_neg", "dnf_max_neg"), ("budget", "dnf_budget"), ("alpha", "dnf_alpha"),
                      ("node_budget", "node_budget"), ("time_budget", "time_budget"),
                      ("workers", "workers"), ("verifier_budget", "verifier_budget"), ("n_demos", "n_demos")):
        v = getattr(args, attr, None)
        if v is None:
            continue
        if attr == "lambda_reg":
            data["stage2"] = {"lambda_reg": v}
        else:
            data[key] = v
    return PipelineConfig.from_dict(data)


def _library(path: str, provider: str, dimension: int | None, create: bool = False) -> GoldenLibrary:
    embedder = HttpEmbeddingProvider(dimension or 0) if provider == "http" else None
    if Path(path).exists():
        return GoldenLibrary.load(path, embedder)
    if not create:
        raise StorageError(f"library {path} does not exist")
    return GoldenLibrary(embedder, path)


# -- subcommands ------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    if args.print_config:
        print(config_json())
        return 0
    cfg = load_config(args.config) if args.config else GeneratorConfig()
    if args.seed is not None:
        cfg = GeneratorConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    if args.out is None:
        raise ConfigError("--out is required")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "generator.json").write_text(config_json(cfg) + "\n", encoding="utf-8")
        write_instances(out / "instances.jsonl", generate_corpus(cfg, args.count, args.start))
    except OSError as exc:
        raise StorageError(f"cannot write to {out}: {exc}") from None
    print(f"wrote {args.count} instances to {out / 'instances.jsonl'}")
    return 0


def _stage1_record(inst: Instance, sol: Stage1Solution) -> dict[str, Any]:
    return {
        "type": "stage1",
        "instance_id": inst.instance_id,
        "selected": list(sol.selected),
        "objective": str(sol.objective),
        "coverage": str(sol.coverage),
        "universe": sorted(sol.universe),
        "active_tools": list(sol.active_tools),
        "status": sol.status.value,
        "nodes": sol.nodes,
        "weights": sol.weights.as_strings(),
    }


def _stage1_from_record(rec: dict, inst: Instance) -> Stage1Solution:
    weights = Stage1Weights(*(Fraction(w) for w in rec["weights"]))
    by_id = inst.by_id()
    selected = tuple(int(r) for r in rec["selected"])
    universe = CandidateSet.union_all(by_id[r].results for r in selected)
    objective = score_selection(inst, selected, weights)
    coverage = Fraction(len(universe & inst.ground_truth), len(inst.ground_truth))
    tools = tuple(dict.fromkeys(by_id[r].tool for r in selected))
    return Stage1Solution(selected, universe, objective, coverage, tools, Status(rec["status"]), rec.get("nodes", 0), weights)


def _export(path: str, inst: Instance, stage: int, config: PipelineConfig, s1: Stage1Solution | None = None) -> None:
    if stage == 1:
        prog = build_stage1_model(build_incidence(inst), config.stage1)
    else:
        s1 = s1 or solve_stage1(inst, config.stage1, config.limits)
        by_id = inst.by_id()
        prog = build_stage2_model(s1.universe, [by_id[r] for r in s1.selected], inst.negatives,
                                  inst.ground_truth, config.stage2)
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{inst.instance_id}.stage{stage}.lp").write_text(export_lp(prog), encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot write LP file under {out}: {exc}") from None


def cmd_optimize(args: argparse.Namespace) -> int:
    config = _pipeline_config(args)
    insts = _instances(args.input, args.instance_id)
    code = 0
    if args.stage == 1:
        records = []
        for inst in insts:
            sol = solve_stage1(inst, config.stage1, config.limits)
            if sol.status is Status.NO_SOLUTION:
                code = 3
            records.append(_stage1_record(inst, sol))
            if args.export_lp:
                _export(args.export_lp, inst, 1, config)
        _write_jsonl(args.out, records)
        return code
    prior = {}
    if args.stage1:
        prior = {r["instance_id"]: r for r in _read_jsonl(args.stage1)}
    records = []
    for inst in insts:
        try:
            if config.composer == "two_clause" and inst.instance_id in prior:
                s1 = _stage1_from_record(prior[inst.instance_id], inst)
                plan = solve_stage2(s1, inst, config.stage2, config.limits)
                by_id = inst.by_id()
                traj = Trajectory(inst, s1, plan, two_clause_descriptor(plan, inst) if plan.positives else None,
                                  plan.final, tuple(by_id[r] for r in (*plan.positives, *plan.negatives)))
            else:
                traj = optimize_instance(inst, config)
        except SolverBudgetError as exc:
            records.append({"type": "error", "instance_id": inst.instance_id, "error": str(exc), "exit_code": 3})
            code = 3
            continue
        rec, _ = trajectory_record(traj, config)
        rec["type"] = "trajectory"
        records.append(rec)
        if args.export_lp:
            _export(args.export_lp, inst, 2, config, traj.stage1)
    _write_jsonl(args.out, records)
    return code


def cmd_export_lp(args: argparse.Namespace) -> int:
    config = _pipeline_config(args)
    insts = _instances(args.input, args.instance_id)
    for inst in insts:
        _export(args.out, inst, args.stage, config)
    print(f"wrote {len(insts)} LP file(s) to {args.out}")
    return 0


def cmd_library(args: argparse.Namespace) -> int:
    if args.action == "build":
        config = _pipeline_config(args)
        insts = _instances(args.input)
        if args.fraction is not None:
            insts = sample_training_corpus(insts, args.fraction, args.seed)
        lib = _library(args.library, args.provider, args.dimension, create=True)
        report = run_pipeline(config, insts, lib)
        print(json.dumps({"added": len(report["records"]), "failures": report["failures"], **lib.stats()},
                         sort_keys=True))
        return max([f["exit_code"] for f in report["failures"]], default=0)
    lib = _library(args.library, args.provider, args.dimension)
    if args.action == "stats":
        print(json.dumps(lib.stats(), sort_keys=True, indent=1))
        return 0
    hits = lib.retrieve(ProblemContext(args.query, args.caption), args.n)
    for case, sim in hits:
        print(_dumps({"id": case.id, "similarity": round(sim, 12), "query_text": case.context.query_text,
                      "caption": case.context.caption, "plan": case.plan}))
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    insts = _instances(args.input, args.instance_id)
    if args.plan:
        try:
            plan = json.loads(Path(args.plan).read_text(encoding="utf-8"))
        except OSError as exc:
            raise StorageError(f"cannot read {args.plan}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.plan}: invalid JSON ({exc})") from None
    else:
        if args.library is None or args.case is None:
            raise ConfigError("give either --plan or both --library and --case")
        lib = _library(args.library, args.provider, args.dimension)
        cases = lib.cases
        if not 0 <= args.case < len(cases):
            raise ConfigError(f"no case {args.case} (library has {len(cases)})")
        plan = cases[args.case].plan
    records = []
    for inst in insts:
        res = replay_plan(plan, inst)
        ranking = rank_instance(res.final, inst, res.retrievals, args.verifier_budget)
        records.append({"instance_id": inst.instance_id, "final": sorted(res.final), "ranking": ranking,
                        "flags": list(res.flags)})
    if args.out:
        _write_jsonl(args.out, records)
    else:
        for r in records:
            print(_dumps(r))
    return 0


def parse_metrics(tokens: Sequence[str]) -> dict[str, tuple[int, ...]]:
    """``["recall@1,5,10,50", "map@5,10", "ndcg@10"]`` -> cutoff lists."""
    out = {"recall_ks": (), "map_ks": (), "ndcg_ks": ()}
    keys = {"recall": "recall_ks", "r": "recall_ks", "map": "map_ks", "ndcg": "ndcg_ks"}
    for tok in tokens:
        name, _, ks = tok.partition("@")
        key = keys.get(name.lower())
        if key is None or not ks:
            raise ConfigError(f"cannot parse metric {tok!r}")
        try:
            out[key] = tuple(sorted(set(out[key]) | {int(k) for k in ks.split(",")}))
        except ValueError:
            raise ConfigError(f"cannot parse cutoffs in {tok!r}") from None
    return out


def cmd_eval(args: argparse.Namespace) -> int:
    config = _pipeline_config(args)
    if args.metrics:
        parsed = parse_metrics(args.metrics)
        config = PipelineConfig.from_dict({**config.to_dict(), **{k: list(v) for k, v in parsed.items() if v}})
    insts = _instances(args.input)
    lib = _library(args.library, args.provider, args.dimension) if args.library else None
    variants = [AblationVariant.parse(v) for v in (args.variant or ["full"])]
    cache: dict = {}
    results = [run_ablation(insts, v, config, lib, cache) for v in variants]
    names = [f"R@{k}" for k in config.recall_ks] + [f"mAP@{k}" for k in config.map_ks] + \
            [f"NDCG@{k}" for k in config.ndcg_ks] + ["F1"]
    table = ablation_table(results, names)
    header = f"# cirplan {__version__} config={_dumps(config.to_dict())}\n"
    if args.report:
        try:
            Path(args.report).parent.mkdir(parents=True, exist_ok=True)
            Path(args.report).write_text(header + table, encoding="utf-8")
        except OSError as exc:
            raise StorageError(f"cannot write {args.report}: {exc}") from None
    sys.stdout.write(table)
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    config = _pipeline_config(args)
    insts = _instances(args.input)
    lib = _library(args.library, args.provider, args.dimension, create=True) if args.library else None
    report = run_pipeline(config, insts, lib)
    data = report_bytes(report)
    if args.out:
        try:
            Path(args.out).parent.mkdir(parents=True, exist_ok=True)
            Path(args.out).write_bytes(data)
        except OSError as exc:
            raise StorageError(f"cannot write {args.out}: {exc}") from None
    else:
        sys.stdout.write(data.decode("utf-8"))
    for f in report["failures"]:
        print(_dumps(f), file=sys.stderr)
    return max([f["exit_code"] for f in report["failures"]], default=0)


# -- parser -----------------------------------------------------------------


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="pipeline config JSON (defaults for every flag below)")
    p.add_argument("--weights", help="selection weights wR,wP,lambdaDiv (fractions or decimals)")
    p.add_argument("--lambda-reg", dest="lambda_reg", help="composition noise penalty (default 1/10)")
    p.add_argument("--node-budget", dest="node_budget", type=int, help="branch-and-bound node budget per solve")
    p.add_argument("--time-budget", dest="time_budget", type=float, help="wall-clock budget per solve, seconds")


def _add_library_flags(p: argparse.ArgumentParser, required: bool) -> None:
    p.add_argument("--library", required=required, help="library file (line-delimited JSON)")
    p.add_argument("--provider", choices=("fallback", "http"), default="fallback",
                   help="embedder; http reads CIRPLAN_EMBED_URL and CIRPLAN_EMBED_TOKEN")
    p.add_argument("--dimension", type=int, help="embedding dimension of the http provider")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cirplan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"cirplan {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic instances")
    p.add_argument("--config", help="generator config JSON; omitted keys take defaults")
    p.add_argument("--count", type=int, default=10, help="number of instances")
    p.add_argument("--start", type=int, default=0, help="index of the first instance")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory (instances.jsonl, generator.json)")
    p.add_argument("--print-config", action="store_true", help="print the default config and exit")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("optimize", help="solve selection (stage 1) or composition (stage 2)")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True, help="1 = selection, 2 = composition")
    p.add_argument("--in", dest="input", required=True, help="instance file")
    p.add_argument("--out", required=True, help="output file (line-delimited JSON)")
    p.add_argument("--stage1", help="stage-1 solutions to compose from (default: solve them)")
    p.add_argument("--instance-id", dest="instance_id", help="only this instance")
    p.add_argument("--composer", choices=("two_clause", "dnf"), help="composition form for stage 2")
    p.add_argument("--max-len", dest="max_len", type=int, help="DNF: literals per clause (default 3)")
    p.add_argument("--max-neg", dest="max_neg", type=int, help="DNF: negated literals per clause (default 1)")
    p.add_argument("--budget", type=int, help="DNF: clauses in the union (default 3)")
    p.add_argument("--alpha", help="DNF: per-literal length penalty (default 1/1000)")
    p.add_argument("--export-lp", dest="export_lp", help="directory for <instance>.stage<N>.lp files")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("export-lp", help="write selection or composition models in LP format")
    p.add_argument("--stage", type=int, choices=(1, 2), default=1, help="1 = selection (default), 2 = composition")
    p.add_argument("--in", dest="input", required=True, help="instance file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--instance-id", dest="instance_id", help="only this instance")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_export_lp)

    p = sub.add_parser("library", help="build, query or summarize a golden library")
    p.add_argument("action", choices=("build", "query", "stats"), help="build from instances, query by context, or print stats")
    _add_library_flags(p, required=True)
    p.add_argument("--in", dest="input", help="build: training instances")
    p.add_argument("--fraction", help="build: sample this fraction of the instances (floor)")
    p.add_argument("--seed", type=int, default=0, help="build: sampling seed")
    p.add_argument("--query", default="", help="query: modification text")
    p.add_argument("--caption", default="", help="query: reference caption")
    p.add_argument("-n", type=int, default=2, help="query: number of cases")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_library)

    p = sub.add_parser("replay", help="execute a stored case or a planner plan on instances")
    p.add_argument("--in", dest="input", required=True, help="instance file")
    p.add_argument("--instance-id", dest="instance_id", help="only this instance")
    p.add_argument("--plan", help="plan descriptor JSON ({tool_calls, steps})")
    p.add_argument("--case", type=int, help="case id in --library")
    p.add_argument("--verifier-budget", dest="verifier_budget", type=int,
                   help="score only this many candidates (by best retrieval rank)")
    p.add_argument("--out", help="output file (default stdout)")
    _add_library_flags(p, required=False)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("eval", help="ablation metrics table")
    p.add_argument("--in", dest="input", required=True, help="instance file")
    p.add_argument("--metrics", nargs="+", help="e.g. recall@1,5,10,50 map@5,10,25,50 ndcg@10")
    p.add_argument("--variant", action="append",
                   help="full|no_diff|union_only|no_demos (repeatable; default full)")
    p.add_argument("--report", help="write the tab-separated table here")
    p.add_argument("--verifier-budget", dest="verifier_budget", type=int,
                   help="score only this many candidates (by best retrieval rank)")
    p.add_argument("--n-demos", dest="n_demos", type=int, help="cases retrieved per query")
    _add_library_flags(p, required=False)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="optimize every instance and write the run report")
    p.add_argument("--in", dest="input", required=True, help="instance file")
    p.add_argument("--out", help="report path (default stdout)")
    p.add_argument("--composer", choices=("two_clause", "dnf"), help="composition form (default two_clause)")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("--verifier-budget", dest="verifier_budget", type=int,
                   help="score only this many candidates (by best retrieval rank)")
    _add_library_flags(p, required=False)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CirplanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(_dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(_dumps({"error": "OSError", "message": str(exc), "exit_code": 4}), file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
