"""Workload orchestration and the comparative metrics the lab reports.

For every (query, method, setting) combination the harness optimizes
(timing the planner), annotates the plan under both the method's own
cardinalities and the true ones, executes it (timing the median of
repeated runs), and collects per-plan operator counts.  Aggregates follow
the same shape as per-query rows, with every ratio taken against the
matching true-cardinality row.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .catalog import Catalog, INDEXED, NON_INDEXED
from .cardinality import (BaseRowsProvider, EstimateProvider, StatsCatalog,
                          TrueCardProvider, build_stats_catalog)
from .costmodel import CostParams, HJ, IS, NLJ, SS
from .executor import ExecConfig, execute_plan
from .frontend import QuerySpec, build_join_graph, parse_query
from .optimizers import (OptimizerConfig, dp_optimize, quickpick_sample,
                         simpli2_order, simpli2_plan)
from .planir import PlanNode, annotate, operator_counts, plan_digest, validate_plan

METHODS = ("truecard", "ce", "noce", "quickpick")
SETTINGS = (NON_INDEXED, INDEXED)

CSV_COLUMNS = ["query_id", "method", "setting", "workers", "plan_time",
               "exec_time_median", "cost_under_true_cards",
               "cost_under_method_cards", "result_count",
               "n_ss", "n_is", "n_hj", "n_nlj", "timed_out", "error"]


@dataclass
class MetricsRow:
    query_id: str
    method: str
    setting: str
    workers: int
    plan_time: float = 0.0
    exec_time_median: float = 0.0
    cost_under_true_cards: Optional[float] = None
    cost_under_method_cards: Optional[float] = None
    result_count: Optional[int] = None
    n_ss: int = 0
    n_is: int = 0
    n_hj: int = 0
    n_nlj: int = 0
    timed_out: bool = False
    error: str = ""

    def as_csv(self) -> list:
        return [self.query_id, self.method, self.setting, self.workers,
                f"{self.plan_time:.6f}", f"{self.exec_time_median:.6f}",
                "" if self.cost_under_true_cards is None else f"{self.cost_under_true_cards:.6g}",
                "" if self.cost_under_method_cards is None else f"{self.cost_under_method_cards:.6g}",
                "" if self.result_count is None else self.result_count,
                self.n_ss, self.n_is, self.n_hj, self.n_nlj,
                int(self.timed_out), self.error]


@dataclass
class AggregateRow:
    method: str
    setting: str
    workers: int
    total_cost_true: float
    total_runtime: float
    cost_ratio: Optional[float] = None
    runtime_ratio: Optional[float] = None


@dataclass
class WorkloadReport:
    rows: list[MetricsRow] = field(default_factory=list)

    def aggregates(self) -> list[AggregateRow]:
        groups: dict[tuple, list[MetricsRow]] = {}
        for row in self.rows:
            if row.error:
                continue
            groups.setdefault((row.method, row.setting, row.workers), []).append(row)
        out = []
        for (method, setting, workers), rows in sorted(groups.items()):
            out.append(AggregateRow(
                method=method, setting=setting, workers=workers,
                total_cost_true=sum(r.cost_under_true_cards or 0.0 for r in rows),
                total_runtime=sum(r.exec_time_median for r in rows),
            ))
        base = {(a.setting, a.workers): a for a in out if a.method == "truecard"}
        for agg in out:
            ref = base.get((agg.setting, agg.workers))
            if ref and ref.total_cost_true > 0:
                agg.cost_ratio = agg.total_cost_true / ref.total_cost_true
            if ref and ref.total_runtime > 0:
                agg.runtime_ratio = agg.total_runtime / ref.total_runtime
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for row in self.rows:
                writer.writerow(row.as_csv())


def load_workload(workload_dir) -> list[tuple[str, str]]:
    """Read a workload directory: a manifest naming .sql files in run order."""
    wd = Path(workload_dir)
    manifest = wd / "manifest.txt"
    names = [line.strip() for line in manifest.read_text(encoding="utf-8").splitlines()
             if line.strip() and not line.startswith("#")]
    out = []
    for name in names:
        out.append((Path(name).stem, (wd / name).read_text(encoding="utf-8").strip()))
    return out


@dataclass
class QueryContext:
    query_id: str
    spec: QuerySpec
    graphs: dict[str, object]  # setting -> JoinGraph
    truecard_memo: dict = field(default_factory=dict)


def prepare_queries(queries, catalogs: dict[str, Catalog],
                    truecard_memos: Optional[dict] = None) -> list[QueryContext]:
    out = []
    for query_id, text in queries:
        spec = parse_query(text)
        graphs = {setting: build_join_graph(spec, cat)
                  for setting, cat in catalogs.items()}
        memo = dict((truecard_memos or {}).get(query_id, {}))
        out.append(QueryContext(query_id, spec, graphs, memo))
    return out


def optimize_query(method: str, ctx: QueryContext, setting: str,
                   catalog: Catalog, stats: StatsCatalog,
                   cost_params: CostParams, quickpick_seed: int = 0,
                   dp_table_limit: int = 14):
    """Produce (plan, method_provider_or_None) for one method."""
    graph = ctx.graphs[setting]
    config = OptimizerConfig(setting=setting, dp_table_limit=dp_table_limit)
    true_provider = TrueCardProvider(ctx.spec, catalog, memo=ctx.truecard_memo)
    if method == "truecard":
        plan = dp_optimize(ctx.spec, graph, catalog, true_provider, cost_params, config)
        return plan, true_provider
    if method == "ce":
        est = EstimateProvider(ctx.spec, stats)
        plan = dp_optimize(ctx.spec, graph, catalog, est, cost_params, config)
        return plan, est
    if method == "noce":
        order = simpli2_order(graph, setting)
        plan = simpli2_plan(order, graph, ctx.spec, catalog, config)
        return plan, None
    if method == "quickpick":
        plans = quickpick_sample(graph, 1, quickpick_seed, config, ctx.spec,
                                 catalog, provider=true_provider,
                                 cost_params=cost_params)
        return plans[0], None
    raise ValueError(f"unknown method {method!r}")


def run_workload(queries, catalogs: dict[str, Catalog], stats: StatsCatalog,
                 methods=METHODS, settings=SETTINGS,
                 exec_config: ExecConfig = ExecConfig(),
                 cost_params: CostParams = CostParams(),
                 quickpick_seed: int = 0,
                 truecard_memos: Optional[dict] = None,
                 dp_table_limit: int = 14) -> WorkloadReport:
    """Optimize and execute every (query, method, setting) combination.

    Per-query failures are recorded on their row and the run continues.
    """
    report = WorkloadReport()
    contexts = prepare_queries(queries, {s: catalogs[s] for s in settings},
                               truecard_memos)
    for qi, ctx in enumerate(contexts):
        for setting in settings:
            catalog = catalogs[setting]
            for method in methods:
                row = MetricsRow(query_id=ctx.query_id, method=method,
                                 setting=setting, workers=exec_config.workers)
                try:
                    t0 = time.perf_counter()
                    plan, method_provider = optimize_query(
                        method, ctx, setting, catalog, stats, cost_params,
                        quickpick_seed=quickpick_seed + qi,
                        dp_table_limit=dp_table_limit)
                    row.plan_time = time.perf_counter() - t0
                    violations = validate_plan(plan, ctx.spec,
                                               ctx.graphs[setting], catalog)
                    if violations:
                        raise ValueError(f"invalid plan: {violations}")
                    true_provider = TrueCardProvider(ctx.spec, catalog,
                                                     memo=ctx.truecard_memo)
                    row.cost_under_true_cards = annotate(
                        plan, true_provider, cost_params).total_cost
                    if method_provider is not None:
                        row.cost_under_method_cards = annotate(
                            plan, method_provider, cost_params).total_cost
                    counts = operator_counts(plan)
                    row.n_ss, row.n_is = counts[SS], counts[IS]
                    row.n_hj, row.n_nlj = counts[HJ], counts[NLJ]
                    summary = execute_plan(plan, ctx.spec, catalog, exec_config)
                    row.exec_time_median = summary.elapsed_median
                    row.timed_out = summary.timed_out
                    row.result_count = summary.row_count
                except Exception as exc:  # recorded, run continues
                    row.error = f"{type(exc).__name__}: {exc}"
                report.rows.append(row)
    return report


# -- QuickPick distribution -----------------------------------------------------

DISTRIBUTION_COLUMNS = ["kind", "method", "setting", "digest", "cost_true",
                        "normalized_cost", "exec_time_median"]


@dataclass
class DistributionRow:
    kind: str  # "sample" or "marker"
    method: str
    setting: str
    digest: str
    cost_true: float
    normalized_cost: float
    exec_time_median: Optional[float] = None

    def as_csv(self) -> list:
        return [self.kind, self.method, self.setting, self.digest,
                f"{self.cost_true:.6g}", f"{self.normalized_cost:.6g}",
                "" if self.exec_time_median is None else f"{self.exec_time_median:.6f}"]


def distribution_experiment(query, catalogs: dict[str, Catalog],
                            stats: StatsCatalog, n: int, seed: int,
                            settings=SETTINGS,
                            cost_params: CostParams = CostParams(),
                            execute_sample: int = 0,
                            exec_config: ExecConfig = ExecConfig(runs=3),
                            truecard_memo: Optional[dict] = None) -> list[DistributionRow]:
    """Cost (and optional runtime) distribution of random plans for one query,
    with marker rows for each optimization regime, normalized per setting by
    the true-cardinality plan's cost."""
    query_id, text = query
    rows: list[DistributionRow] = []
    contexts = prepare_queries([(query_id, text)],
                               {s: catalogs[s] for s in settings},
                               {query_id: truecard_memo or {}})
    ctx = contexts[0]
    for setting in settings:
        catalog = catalogs[setting]
        graph = ctx.graphs[setting]
        config = OptimizerConfig(setting=setting)
        true_provider = TrueCardProvider(ctx.spec, catalog, memo=ctx.truecard_memo)
        baseline_plan, _ = optimize_query("truecard", ctx, setting, catalog,
                                          stats, cost_params)
        baseline_cost = annotate(baseline_plan, true_provider, cost_params).total_cost
        for method in ("truecard", "ce", "noce"):
            plan, _ = optimize_query(method, ctx, setting, catalog, stats, cost_params)
            cost = annotate(plan, true_provider, cost_params).total_cost
            rows.append(DistributionRow(
                "marker", method, setting, plan_digest(plan), cost,
                cost / baseline_cost if baseline_cost else float("nan")))
        samples = quickpick_sample(graph, n, seed, config, ctx.spec, catalog,
                                   provider=true_provider, cost_params=cost_params)
        for i, plan in enumerate(samples):
            cost = annotate(plan, true_provider, cost_params).total_cost
            runtime = None
            if i < execute_sample:
                runtime = execute_plan(plan, ctx.spec, catalog,
                                       exec_config).elapsed_median
            rows.append(DistributionRow(
                "sample", "quickpick", setting, plan_digest(plan), cost,
                cost / baseline_cost if baseline_cost else float("nan"), runtime))
    return rows


def write_distribution_csv(rows: list[DistributionRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(DISTRIBUTION_COLUMNS)
        for row in rows:
            writer.writerow(row.as_csv())


# -- thread sweep ---------------------------------------------------------------

SWEEP_COLUMNS = ["query_id", "method", "setting", "workers", "runtime",
                 "speedup_vs_w1", "change_pct"]
BUCKETS = ("<0", "0.1-39", "40-94")


@dataclass
class SweepEntry:
    query_id: str
    method: str
    setting: str
    workers: int
    runtime: float
    speedup: Optional[float] = None
    change_pct: Optional[float] = None

    def as_csv(self) -> list:
        return [self.query_id, self.method, self.setting, self.workers,
                f"{self.runtime:.6f}",
                "" if self.speedup is None else f"{self.speedup:.4f}",
                "" if self.change_pct is None else f"{self.change_pct:.2f}"]


def change_bucket(change_pct: float) -> str:
    """Table-style change buckets; an exactly-0% change lands in the middle
    bucket's closed lower edge."""
    if change_pct < 0:
        return "<0"
    if change_pct < 40:
        return "0.1-39"
    return "40-94"


@dataclass
class SweepReport:
    entries: list[SweepEntry] = field(default_factory=list)

    def bucket_counts(self) -> dict[tuple, dict[str, int]]:
        out: dict[tuple, dict[str, int]] = {}
        for e in self.entries:
            if e.change_pct is None:
                continue
            key = (e.method, e.setting, e.workers)
            counts = out.setdefault(key, {b: 0 for b in BUCKETS})
            counts[change_bucket(e.change_pct)] += 1
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(SWEEP_COLUMNS)
            for e in self.entries:
                writer.writerow(e.as_csv())

    def write_buckets_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "setting", "workers"] + list(BUCKETS))
            for (method, setting, workers), counts in sorted(self.bucket_counts().items()):
                writer.writerow([method, setting, workers]
                                + [counts[b] for b in BUCKETS])


def thread_sweep(queries, catalogs: dict[str, Catalog], stats: StatsCatalog,
                 worker_list: list[int], methods=("ce", "noce"),
                 settings=SETTINGS, runs: int = 5,
                 cost_params: CostParams = CostParams(),
                 timeout_s: Optional[float] = None,
                 truecard_memos: Optional[dict] = None) -> SweepReport:
    """Execute each query's plan at every worker count; the first list entry
    (which must be 1) is the speed-up baseline.  Plans are optimized once per
    (query, method, setting) and reused across worker counts."""
    if worker_list[0] != 1:
        raise ValueError("worker list must start with 1")
    report = SweepReport()
    contexts = prepare_queries(queries, {s: catalogs[s] for s in settings},
                               truecard_memos)
    for ctx in contexts:
        for setting in settings:
            catalog = catalogs[setting]
            for method in methods:
                plan, _ = optimize_query(method, ctx, setting, catalog,
                                         stats, cost_params)
                baseline = None
                for pos, workers in enumerate(worker_list):
                    cfg = ExecConfig(workers=workers, runs=runs,
                                     timeout_s=timeout_s)
                    summary = execute_plan(plan, ctx.spec, catalog, cfg)
                    runtime = summary.elapsed_median
                    entry = SweepEntry(ctx.query_id, method, setting,
                                       workers, runtime)
                    if pos == 0:
                        baseline = runtime
                    else:
                        entry.speedup = baseline / runtime if runtime > 0 else None
                        entry.change_pct = ((baseline - runtime) / baseline * 100.0
                                            if baseline > 0 else None)
                    report.entries.append(entry)
    return report


# -- operator census --------------------------------------------------------------

def operator_census(plans: list[tuple[tuple, PlanNode]]) -> dict[tuple, dict[str, int]]:
    """Aggregate operator counts; ``plans`` pairs a group key (for example
    ``(method, setting)``) with each plan."""
    out: dict[tuple, dict[str, int]] = {}
    for key, plan in plans:
        counts = out.setdefault(key, {SS: 0, IS: 0, HJ: 0, NLJ: 0})
        for op, c in operator_counts(plan).items():
            counts[op] += c
    return out


# -- true-cardinality precompute ---------------------------------------------------

def precompute_truecards(queries, catalog: Catalog,
                         budget_s: Optional[float] = None) -> dict[str, dict]:
    """Eagerly compute exact cardinalities of every connected alias subset of
    every query; the result can be persisted and injected into later runs."""
    from .frontend import connected as graph_connected
    from itertools import combinations

    out: dict[str, dict] = {}
    for query_id, text in queries:
        spec = parse_query(text)
        graph = build_join_graph(spec, catalog)
        provider = TrueCardProvider(spec, catalog, budget_s=budget_s)
        aliases = graph.aliases()
        for size in range(1, len(aliases) + 1):
            for combo in combinations(aliases, size):
                key = frozenset(combo)
                if graph_connected(graph, key):
                    provider.cardinality(key)
        out[query_id] = provider.memo
    return out


def truecards_to_json(memos: dict[str, dict]) -> str:
    doc = {qid: {",".join(sorted(k)): v for k, v in memo.items()}
           for qid, memo in memos.items()}
    return json.dumps(doc, indent=2, sort_keys=True)


def truecards_from_json(text: str) -> dict[str, dict]:
    doc = json.loads(text)
    return {qid: {frozenset(k.split(",")): v for k, v in memo.items()}
            for qid, memo in doc.items()}
