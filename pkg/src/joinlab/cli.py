"""Command-line interface.

Subcommands: ``gen`` (synthetic dataset), ``stats`` (build/persist synopses,
optionally precompute true cardinalities), ``optimize`` (plan one query),
``run`` (full workload report), ``distribution`` (QuickPick cost/runtime
distribution), ``sweep-threads`` (worker sweep), ``census`` (operator
counts).  Exit code 0 means no internal errors; query timeouts are results,
not errors.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness
from .cardinality import (EstimateProvider, StatsCatalog, TrueCardProvider,
                          build_stats_catalog)
from .catalog import INDEXED, NON_INDEXED
from .costmodel import CostParams
from .executor import ExecConfig, execute_plan
from .frontend import parse_query
from .generator import GeneratorConfig, generate_dataset, load_dataset
from .harness import (METHODS, SETTINGS, load_workload, operator_census,
                      precompute_truecards, prepare_queries, run_workload,
                      truecards_from_json, truecards_to_json)
from .planir import annotate, render_sql, render_tree, validate_plan


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data-dir", default="data", help="dataset directory")
    parser.add_argument("--setting", choices=["indexed", "nonindexed", "both"],
                        default="nonindexed")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--tau", type=float, default=0.2, help="scan cost factor")
    parser.add_argument("--lambda", dest="lam", type=float, default=2.0,
                        help="index lookup cost factor")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--runs", type=int, default=11)
    parser.add_argument("--timeout-ms", type=int, default=None)


def _settings(args) -> list[str]:
    if args.setting == "both":
        return [NON_INDEXED, INDEXED]
    return [INDEXED if args.setting == "indexed" else NON_INDEXED]


def _catalogs(args, settings):
    return {s: load_dataset(args.data_dir, setting=s) for s in settings}


def _stats(args, catalogs) -> StatsCatalog:
    stats_path = Path(args.data_dir) / "stats.json"
    if stats_path.exists():
        return StatsCatalog.from_json(stats_path.read_text(encoding="utf-8"))
    return build_stats_catalog(next(iter(catalogs.values())))


def _exec_config(args) -> ExecConfig:
    timeout = args.timeout_ms / 1000.0 if args.timeout_ms else None
    return ExecConfig(workers=args.workers, runs=args.runs, timeout_s=timeout)


def _truecard_memos(args):
    path = Path(args.data_dir) / "truecard.json"
    if path.exists():
        return truecards_from_json(path.read_text(encoding="utf-8"))
    return None


def cmd_gen(args) -> int:
    config = GeneratorConfig.from_json(Path(args.config).read_text(encoding="utf-8"))
    out = generate_dataset(config, args.data_dir)
    print(f"dataset written to {out}")
    return 0


def cmd_stats(args) -> int:
    catalogs = _catalogs(args, [NON_INDEXED])
    catalog = catalogs[NON_INDEXED]
    stats = build_stats_catalog(catalog, mcv_slots=args.mcv, buckets=args.buckets)
    out = Path(args.data_dir) / "stats.json"
    out.write_text(stats.to_json(), encoding="utf-8")
    print(f"statistics written to {out}")
    if args.precompute_truecard:
        if not args.workload:
            print("--precompute-truecard requires --workload", file=sys.stderr)
            return 2
        queries = load_workload(args.workload)
        memos = precompute_truecards(queries, catalog)
        tc_out = Path(args.data_dir) / "truecard.json"
        tc_out.write_text(truecards_to_json(memos), encoding="utf-8")
        total = sum(len(m) for m in memos.values())
        print(f"{total} true cardinalities written to {tc_out}")
    return 0


def cmd_optimize(args) -> int:
    settings = _settings(args)
    catalogs = _catalogs(args, settings)
    stats = _stats(args, catalogs)
    cost_params = CostParams(tau=args.tau, lam=args.lam)
    text = Path(args.query).read_text(encoding="utf-8").strip()
    queries = [(Path(args.query).stem, text)]
    memos = _truecard_memos(args) or {}
    for setting in settings:
        catalog = catalogs[setting]
        contexts = prepare_queries(queries, {setting: catalog}, memos)
        ctx = contexts[0]
        plan, provider = harness.optimize_query(
            args.method, ctx, setting, catalog, stats, cost_params,
            quickpick_seed=args.seed)
        violations = validate_plan(plan, ctx.spec, ctx.graphs[setting], catalog)
        if violations:
            print(f"invalid plan: {violations}", file=sys.stderr)
            return 1
        true_provider = TrueCardProvider(ctx.spec, catalog, memo=ctx.truecard_memo)
        annotated = annotate(plan, true_provider, cost_params)
        print(f"-- {setting} / {args.method}")
        print(render_tree(annotated, ctx.spec))
        print(f"cost under true cardinalities: {annotated.total_cost:.6g}")
        if provider is not None and provider is not true_provider:
            believed = annotate(plan, provider, cost_params)
            print(f"cost under method cardinalities: {believed.total_cost:.6g}")
        print(render_sql(plan, ctx.spec))
    return 0


def cmd_run(args) -> int:
    settings = _settings(args)
    catalogs = _catalogs(args, settings)
    stats = _stats(args, catalogs)
    queries = load_workload(args.workload)
    report = run_workload(
        queries, catalogs, stats, methods=args.methods.split(","),
        settings=settings, exec_config=_exec_config(args),
        cost_params=CostParams(tau=args.tau, lam=args.lam),
        quickpick_seed=args.seed, truecard_memos=_truecard_memos(args))
    report.write_csv(args.out)
    print(f"report written to {args.out}")
    for agg in report.aggregates():
        ratio = f" (x{agg.cost_ratio:.2f})" if agg.cost_ratio else ""
        print(f"{agg.method:10s} {agg.setting:12s} workers={agg.workers} "
              f"cost={agg.total_cost_true:.4g}{ratio} "
              f"runtime={agg.total_runtime:.3f}s")
    errors = [r for r in report.rows if r.error]
    for r in errors:
        print(f"error: {r.query_id}/{r.method}/{r.setting}: {r.error}",
              file=sys.stderr)
    return 1 if errors else 0


def cmd_distribution(args) -> int:
    settings = _settings(args)
    catalogs = _catalogs(args, settings)
    stats = _stats(args, catalogs)
    text = Path(args.query).read_text(encoding="utf-8").strip()
    memos = _truecard_memos(args) or {}
    rows = harness.distribution_experiment(
        (Path(args.query).stem, text), catalogs, stats, n=args.n,
        seed=args.seed, settings=settings,
        cost_params=CostParams(tau=args.tau, lam=args.lam),
        execute_sample=args.execute_sample,
        truecard_memo=memos.get(Path(args.query).stem))
    harness.write_distribution_csv(rows, args.out)
    print(f"distribution written to {args.out}")
    return 0


def cmd_sweep_threads(args) -> int:
    settings = _settings(args)
    catalogs = _catalogs(args, settings)
    stats = _stats(args, catalogs)
    queries = load_workload(args.workload)
    worker_list = [int(w) for w in args.worker_list.split(",")]
    timeout = args.timeout_ms / 1000.0 if args.timeout_ms else None
    report = harness.thread_sweep(
        queries, catalogs, stats, worker_list,
        methods=args.methods.split(","), settings=settings, runs=args.runs,
        cost_params=CostParams(tau=args.tau, lam=args.lam), timeout_s=timeout,
        truecard_memos=_truecard_memos(args))
    report.write_csv(args.out)
    report.write_buckets_csv(args.buckets_out)
    print(f"sweep written to {args.out}; buckets to {args.buckets_out}")
    return 0


def cmd_census(args) -> int:
    settings = _settings(args)
    catalogs = _catalogs(args, settings)
    stats = _stats(args, catalogs)
    queries = load_workload(args.workload)
    cost_params = CostParams(tau=args.tau, lam=args.lam)
    memos = _truecard_memos(args)
    labeled = []
    contexts = prepare_queries(queries, catalogs, memos)
    for qi, ctx in enumerate(contexts):
        for setting in settings:
            for method in args.methods.split(","):
                plan, _ = harness.optimize_query(
                    method, ctx, setting, catalogs[setting], stats,
                    cost_params, quickpick_seed=args.seed + qi)
                labeled.append(((method, setting), plan))
    census = operator_census(labeled)
    import csv as _csv
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["method", "setting", "n_ss", "n_is", "n_hj", "n_nlj"])
        for (method, setting), counts in sorted(census.items()):
            writer.writerow([method, setting, counts["SS"], counts["IS"],
                             counts["HJ"], counts["NLJ"]])
    print(f"census written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="joinlab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--config", required=True, help="generator config JSON")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("stats", help="build and persist column statistics")
    _add_common(p)
    p.add_argument("--mcv", type=int, default=10, help="most-common-value slots")
    p.add_argument("--buckets", type=int, default=20, help="histogram buckets")
    p.add_argument("--precompute-truecard", action="store_true",
                   help="also execute and persist all subquery cardinalities")
    p.add_argument("--workload", default=None)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("optimize", help="plan a single query")
    _add_common(p)
    p.add_argument("--query", required=True, help="path to a .sql file")
    p.add_argument("--method", choices=list(METHODS), default="truecard")
    p.add_argument("--shape", choices=["bushy", "leftdeep"], default="bushy")
    p.add_argument("--n", type=int, default=1)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("run", help="run a workload across methods/settings")
    _add_common(p)
    p.add_argument("--workload", required=True)
    p.add_argument("--methods", default="truecard,ce,noce")
    p.add_argument("--out", default="report.csv")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("distribution", help="QuickPick plan distribution for one query")
    _add_common(p)
    p.add_argument("--query", required=True)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--execute-sample", type=int, default=0,
                   help="also execute the first N sampled plans")
    p.add_argument("--out", default="distribution.csv")
    p.set_defaults(func=cmd_distribution)

    p = sub.add_parser("sweep-threads", help="runtime across worker counts")
    _add_common(p)
    p.add_argument("--workload", required=True)
    p.add_argument("--worker-list", default="1,2,4")
    p.add_argument("--methods", default="ce,noce")
    p.add_argument("--out", default="sweep.csv")
    p.add_argument("--buckets-out", default="sweep_buckets.csv")
    p.set_defaults(func=cmd_sweep_threads)

    p = sub.add_parser("census", help="operator counts per method/setting")
    _add_common(p)
    p.add_argument("--workload", required=True)
    p.add_argument("--methods", default="truecard,ce,noce")
    p.add_argument("--out", default="census.csv")
    p.set_defaults(func=cmd_census)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
