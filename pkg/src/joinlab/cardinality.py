"""Sub-expression cardinalities under three regimes.

* ``truecard`` answers every connected sub-expression exactly by executing
  it, memoizing counts per alias set.
* ``estimated`` combines per-column synopses (range, distinct count, most
  common values, equi-depth histogram) with uniformity, independence, and
  inclusion assumptions.
* ``base_only`` knows nothing beyond raw base-table sizes; it exists for
  consumers that must stay estimate-free.

Estimates are pure functions of the alias set: base rows times selection
selectivities times one selectivity factor per internal join predicate, so
the same sub-expression gets the same number regardless of any join order
that produced it.
"""
from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .catalog import Catalog, INT64, Relation
from .frontend import JoinPredicate, QuerySpec, SelectionPredicate
from . import executor

DEFAULT_MCV_SLOTS = 10
DEFAULT_BUCKETS = 20
DEFAULT_LIKE_SELECTIVITY = 0.01


class StatsUnavailable(KeyError):
    """No statistics exist for a referenced column or key shape."""


@dataclass
class ColumnStats:
    min: object = None
    max: object = None
    ndv: int = 0
    null_frac: float = 0.0
    mcv: tuple = ()  # ((value, frequency), ...) with frequencies summing <= 1
    histogram: tuple = ()  # equi-depth bucket boundaries over non-MCV values

    @property
    def mcv_frac(self) -> float:
        return float(sum(f for _, f in self.mcv))

    @property
    def rest_frac(self) -> float:
        return max(1.0 - self.mcv_frac - self.null_frac, 0.0)


def build_stats(relation: Relation, mcv_slots: int = DEFAULT_MCV_SLOTS,
                buckets: int = DEFAULT_BUCKETS) -> dict[str, ColumnStats]:
    """Exact per-column synopses for one relation."""
    out: dict[str, ColumnStats] = {}
    n = relation.row_count
    for name, values in relation.columns.items():
        if n == 0:
            out[name] = ColumnStats()
            continue
        uniq, counts = np.unique(values, return_counts=True)
        ndv = len(uniq)
        stats = ColumnStats(min=uniq[0].item(), max=uniq[-1].item(), ndv=ndv)
        k = min(mcv_slots, ndv)
        if k > 0:
            # Top-k by frequency; ties resolved toward smaller values.
            top = np.argsort(-counts, kind="stable")[:k]
            top = top[np.argsort(uniq[top], kind="stable")]
            stats.mcv = tuple((uniq[i].item(), counts[i] / n) for i in top)
        mcv_values = {v for v, _ in stats.mcv}
        rest_mask = ~np.isin(uniq, np.asarray(list(mcv_values))) if mcv_values else \
            np.ones(ndv, dtype=bool)
        rest_uniq = uniq[rest_mask]
        rest_counts = counts[rest_mask]
        if len(rest_uniq) and buckets > 0:
            expanded_ranks = np.cumsum(rest_counts)
            total = expanded_ranks[-1]
            bounds = [rest_uniq[0].item()]
            for b in range(1, buckets):
                target = b * total / buckets
                i = int(np.searchsorted(expanded_ranks, target, "left"))
                bounds.append(rest_uniq[min(i, len(rest_uniq) - 1)].item())
            bounds.append(rest_uniq[-1].item())
            stats.histogram = tuple(bounds)
        out[name] = stats
    return out


@dataclass
class StatsCatalog:
    columns: dict[tuple[str, str], ColumnStats] = field(default_factory=dict)
    base_rows: dict[str, int] = field(default_factory=dict)

    def stats(self, table: str, column: str) -> ColumnStats:
        try:
            return self.columns[(table, column)]
        except KeyError:
            raise StatsUnavailable(f"no statistics for {table}.{column}") from None

    def to_json(self) -> str:
        doc = {"base_rows": self.base_rows, "columns": []}
        for (table, column), st in sorted(self.columns.items()):
            doc["columns"].append({
                "table": table, "column": column, "min": st.min, "max": st.max,
                "ndv": st.ndv, "null_frac": st.null_frac,
                "mcv": [[v, f] for v, f in st.mcv],
                "histogram": list(st.histogram),
            })
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "StatsCatalog":
        doc = json.loads(text)
        sc = cls(base_rows={t: int(n) for t, n in doc["base_rows"].items()})
        for c in doc["columns"]:
            sc.columns[(c["table"], c["column"])] = ColumnStats(
                min=c["min"], max=c["max"], ndv=c["ndv"],
                null_frac=c["null_frac"],
                mcv=tuple((v, f) for v, f in c["mcv"]),
                histogram=tuple(c["histogram"]),
            )
        return sc


def build_stats_catalog(catalog: Catalog, mcv_slots: int = DEFAULT_MCV_SLOTS,
                        buckets: int = DEFAULT_BUCKETS) -> StatsCatalog:
    sc = StatsCatalog()
    for name in sorted(catalog.relations):
        rel = catalog.relations[name]
        sc.base_rows[name] = rel.row_count
        for column, st in build_stats(rel, mcv_slots, buckets).items():
            sc.columns[(name, column)] = st
    return sc


# -- selectivity formulas ------------------------------------------------------

def _equality_selectivity(stats: ColumnStats, value) -> float:
    for v, f in stats.mcv:
        if v == value:
            return f
    rest_ndv = stats.ndv - len(stats.mcv)
    if rest_ndv <= 0:
        return 0.0
    return stats.rest_frac / rest_ndv


def _histogram_frac_below(stats: ColumnStats, value, inclusive: bool) -> float:
    """Fraction of the non-MCV mass strictly (or weakly) below ``value``."""
    bounds = stats.histogram
    if not bounds or len(bounds) < 2:
        return 0.0
    nb = len(bounds) - 1
    if value < bounds[0]:
        return 0.0
    if value >= bounds[-1]:
        return 1.0 if (inclusive or value > bounds[-1]) else (nb - 1) / nb if nb else 0.0
    i = bisect.bisect_right(bounds, value) - 1
    i = min(max(i, 0), nb - 1)
    lo, hi = bounds[i], bounds[i + 1]
    if isinstance(lo, (int, float)) and hi != lo:
        within = (value - lo) / (hi - lo)
    else:
        within = 0.5  # no meaningful interpolation for text; charge half a bucket
    return (i + min(max(within, 0.0), 1.0)) / nb


def _range_selectivity(stats: ColumnStats, lo, hi,
                       lo_inclusive: bool = True, hi_inclusive: bool = True) -> float:
    mcv_mass = 0.0
    for v, f in stats.mcv:
        above = v > lo or (lo_inclusive and v == lo)
        below = v < hi or (hi_inclusive and v == hi)
        if above and below:
            mcv_mass += f
    hist_hi = _histogram_frac_below(stats, hi, hi_inclusive)
    hist_lo = _histogram_frac_below(stats, lo, not lo_inclusive)
    return mcv_mass + stats.rest_frac * max(hist_hi - hist_lo, 0.0)


_UNBOUNDED_LOW = object()


def selectivity_selection(pred: SelectionPredicate, stats: ColumnStats,
                          like_selectivity: float = DEFAULT_LIKE_SELECTIVITY) -> float:
    """Selectivity of a selection predicate under uniformity assumptions."""
    if stats.ndv == 0:
        return 0.0
    op = pred.op
    if op == "=":
        sel = _equality_selectivity(stats, pred.operands[0])
    elif op == "<>":
        sel = 1.0 - stats.null_frac - _equality_selectivity(stats, pred.operands[0])
    elif op == "IN":
        sel = sum(_equality_selectivity(stats, v) for v in pred.operands)
    elif op == "BETWEEN":
        sel = _range_selectivity(stats, pred.operands[0], pred.operands[1])
    elif op in ("<", "<="):
        sel = _range_selectivity(stats, stats.min, pred.operands[0],
                                 hi_inclusive=(op == "<="))
    elif op in (">", ">="):
        sel = _range_selectivity(stats, pred.operands[0], stats.max,
                                 lo_inclusive=(op == ">="))
    elif op == "LIKE":
        sel = like_selectivity
    else:
        raise ValueError(f"unknown selection operator {op!r}")
    return min(max(sel, 0.0), 1.0)


def selectivity_join(stats_left: ColumnStats, stats_right: ColumnStats) -> float:
    """Equi-join selectivity ``1 / max(ndv_left, ndv_right)``."""
    biggest = max(stats_left.ndv, stats_right.ndv)
    if biggest == 0:
        return 1.0
    return min(1.0 / biggest, 1.0)


def key_aliases_connected(spec: QuerySpec, aliases: frozenset) -> bool:
    members = set(aliases)
    if len(members) <= 1:
        return True
    adj: dict[str, set] = {a: set() for a in members}
    for p in spec.joins:
        if p.left_alias in members and p.right_alias in members:
            adj[p.left_alias].add(p.right_alias)
            adj[p.right_alias].add(p.left_alias)
    start = next(iter(members))
    seen, frontier = {start}, [start]
    while frontier:
        a = frontier.pop()
        for b in adj[a]:
            if b not in seen:
                seen.add(b)
                frontier.append(b)
    return seen == members


def estimate_cardinality(aliases: frozenset, spec: QuerySpec,
                         stats_catalog: StatsCatalog,
                         like_selectivity: float = DEFAULT_LIKE_SELECTIVITY) -> float:
    """Estimated rows of the connected sub-expression over ``aliases``.

    Clamped below at 1 unless some base table is empty (then 0).
    """
    members = frozenset(aliases)
    if not members:
        raise ValueError("alias set must be non-empty")
    if not key_aliases_connected(spec, members):
        raise ValueError(f"alias set {sorted(members)!r} is not connected")
    rows = 1.0
    empty_base = False
    for alias in members:
        base = stats_catalog.base_rows[spec.aliases[alias]]
        if base == 0:
            empty_base = True
        rows *= base
    for pred in spec.selections:
        if pred.alias in members:
            st = stats_catalog.stats(spec.aliases[pred.alias], pred.column)
            rows *= selectivity_selection(pred, st, like_selectivity)
    for pred in spec.joins:
        if pred.left_alias in members and pred.right_alias in members:
            ls = stats_catalog.stats(spec.aliases[pred.left_alias], pred.left_column)
            rs = stats_catalog.stats(spec.aliases[pred.right_alias], pred.right_column)
            rows *= selectivity_join(ls, rs)
    if empty_base:
        return 0.0
    return max(rows, 1.0)


# -- providers -----------------------------------------------------------------

class EstimateProvider:
    """CE regime: synopsis-backed estimates, join-order invariant."""

    provider_id = "estimated"
    regime = "estimated"

    def __init__(self, spec: QuerySpec, stats_catalog: StatsCatalog,
                 like_selectivity: float = DEFAULT_LIKE_SELECTIVITY):
        self.spec = spec
        self.stats_catalog = stats_catalog
        self.like_selectivity = like_selectivity
        self._memo: dict[frozenset, float] = {}

    def cardinality(self, aliases: frozenset) -> float:
        key = frozenset(aliases)
        if key not in self._memo:
            self._memo[key] = estimate_cardinality(
                key, self.spec, self.stats_catalog, self.like_selectivity)
        return self._memo[key]

    def base_rows(self, alias: str) -> int:
        return self.stats_catalog.base_rows[self.spec.aliases[alias]]


class TrueCardProvider:
    """TrueCard regime: exact counts by executing each sub-expression once."""

    provider_id = "truecard"
    regime = "true_card"

    def __init__(self, spec: QuerySpec, catalog: Catalog,
                 memo: Optional[dict[frozenset, int]] = None,
                 budget_s: Optional[float] = None):
        self.spec = spec
        self.catalog = catalog
        self.memo = memo if memo is not None else {}
        self.budget_s = budget_s

    def cardinality(self, aliases: frozenset) -> int:
        key = frozenset(aliases)
        if key not in self.memo:
            self.memo[key] = executor.execute_subset(
                key, self.spec, self.catalog, budget_s=self.budget_s)
        return self.memo[key]

    def base_rows(self, alias: str) -> int:
        return self.catalog.row_count(self.spec.aliases[alias])


class BaseRowsProvider:
    """no-CE regime's only input: raw base-table sizes.

    Answers singleton alias sets on tables with no query selections; any
    other shape means a consumer is asking for an estimate that this regime
    does not have.
    """

    provider_id = "base_only"
    regime = "base_only"

    def __init__(self, spec: QuerySpec, catalog: Catalog):
        self.spec = spec
        self.catalog = catalog

    def cardinality(self, aliases: frozenset):
        members = frozenset(aliases)
        if len(members) != 1:
            raise StatsUnavailable("base_only answers singleton keys only")
        (alias,) = members
        if self.spec.selections_for(alias):
            raise StatsUnavailable(
                f"base_only cannot answer the filtered key {alias!r}")
        return self.base_rows(alias)

    def base_rows(self, alias: str) -> int:
        return self.catalog.row_count(self.spec.aliases[alias])


def q_error(estimate: float, truth: float) -> float:
    """max(est/true, true/est); 1.0 means exact."""
    if estimate <= 0 or truth <= 0:
        return float("inf") if estimate != truth else 1.0
    return max(estimate / truth, truth / estimate)
