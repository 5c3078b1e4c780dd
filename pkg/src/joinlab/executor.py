"""In-memory plan execution over the columnar catalog.

Intermediate results are frames: per-alias arrays of base-table row
positions, all of equal length.  Hash joins build an equality lookup
structure on the designated build side (a sorted key array with grouped
positions; semantics of a hash table, but probe-partitionable with numpy
kernels) and stream the probe side through it.  Index nested-loop joins
drive the outer side through the inner leaf's equality index.

The probe phase of every hash join and the outer loop of every NLJ
partition their input rows across ``workers`` independent units; build
phases and result merges stay sequential, and merge order is fixed so row
counts and digests never depend on the worker count.
"""
from __future__ import annotations

import hashlib
import re
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .catalog import Catalog
from .costmodel import HJ, IS, NLJ, SS
from .frontend import (JoinPredicate, QuerySpec, SelectionPredicate,
                       build_join_graph)
from .planir import Join, Leaf, PlanNode, nlj_probe_column

_DIGEST_MOD = 1 << 128


class BudgetExceeded(RuntimeError):
    """A per-run deadline or subquery budget ran out."""


@dataclass
class ExecConfig:
    workers: int = 1
    runs: int = 11  # odd keeps the median a single observation
    timeout_s: Optional[float] = None

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")


@dataclass
class AggregateResult:
    kind: str  # "count" or "min"
    values: tuple


@dataclass
class ResultSummary:
    row_count: Optional[int]
    digest: Optional[str]
    elapsed_each: list[float] = field(default_factory=list)
    elapsed_median: float = 0.0
    timed_out: bool = False


Frame = dict[str, np.ndarray]


# -- predicate evaluation ----------------------------------------------------

def _like_regex(pattern: str) -> re.Pattern:
    parts = []
    for ch in pattern:
        if ch == "%":
            parts.append(".*")
        elif ch == "_":
            parts.append(".")
        else:
            parts.append(re.escape(ch))
    return re.compile("^" + "".join(parts) + "$")


def predicate_mask(values: np.ndarray, pred: SelectionPredicate) -> np.ndarray:
    """Boolean mask of ``values`` rows satisfying one selection predicate."""
    op = pred.op
    if op == "=":
        return values == pred.operands[0]
    if op == "<>":
        return values != pred.operands[0]
    if op == "<":
        return values < pred.operands[0]
    if op == "<=":
        return values <= pred.operands[0]
    if op == ">":
        return values > pred.operands[0]
    if op == ">=":
        return values >= pred.operands[0]
    if op == "IN":
        return np.isin(values, np.asarray(pred.operands))
    if op == "BETWEEN":
        lo, hi = pred.operands
        return (values >= lo) & (values <= hi)
    if op == "LIKE":
        rx = _like_regex(pred.operands[0])
        return np.fromiter((rx.match(v) is not None for v in values),
                           dtype=bool, count=len(values))
    raise ValueError(f"unknown selection operator {op!r}")


def _chunk_bounds(n: int, workers: int) -> list[tuple[int, int]]:
    bounds = [round(i * n / workers) for i in range(workers + 1)]
    return [(bounds[i], bounds[i + 1]) for i in range(workers) if bounds[i] < bounds[i + 1]]


def _expand_ranges(starts: np.ndarray, counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flatten per-row match ranges: returns (positions-into-grouped-array,
    repeated row numbers)."""
    total = int(counts.sum())
    if total == 0:
        empty = np.array([], dtype=np.int64)
        return empty, empty
    offsets = np.zeros(len(counts), dtype=np.int64)
    np.cumsum(counts[:-1], out=offsets[1:])
    idx = np.arange(total, dtype=np.int64) - np.repeat(offsets, counts) + np.repeat(starts, counts)
    rows = np.repeat(np.arange(len(counts), dtype=np.int64), counts)
    return idx, rows


class _Engine:
    def __init__(self, spec: QuerySpec, catalog: Catalog, workers: int = 1,
                 pool: Optional[ThreadPoolExecutor] = None,
                 deadline: Optional[float] = None):
        self.spec = spec
        self.catalog = catalog
        self.workers = workers
        self.pool = pool
        self.deadline = deadline

    def _check_deadline(self):
        if self.deadline is not None and time.perf_counter() > self.deadline:
            raise BudgetExceeded("execution budget exceeded")

    def _column(self, alias: str, column: str) -> np.ndarray:
        return self.catalog.column(self.spec.aliases[alias], column)

    def _run_chunks(self, task, n: int):
        chunks = _chunk_bounds(n, self.workers)
        if self.pool is None or len(chunks) <= 1:
            return [task(lo, hi) for lo, hi in chunks]
        return list(self.pool.map(lambda b: task(*b), chunks))

    # -- operators -----------------------------------------------------------

    def eval(self, node: PlanNode) -> Frame:
        self._check_deadline()
        if isinstance(node, Leaf):
            return self.eval_leaf(node)
        if node.operator == NLJ:
            return self.eval_nlj(node)
        return self.eval_hj(node)

    def eval_leaf(self, leaf: Leaf) -> Frame:
        rel = self.catalog.relation(self.spec.aliases[leaf.alias])
        if not leaf.selections:
            return {leaf.alias: np.arange(rel.row_count, dtype=np.int64)}
        mask = None
        for pred in leaf.selections:
            m = predicate_mask(rel.columns[pred.column], pred)
            mask = m if mask is None else (mask & m)
        return {leaf.alias: np.flatnonzero(mask).astype(np.int64)}

    def eval_hj(self, node: Join, left: Optional[Frame] = None,
                right: Optional[Frame] = None) -> Frame:
        if left is None:
            left = self.eval(node.left)
        if right is None:
            right = self.eval(node.right)
        if node.build_side == "left":
            build_frame, probe_frame = left, right
        else:
            build_frame, probe_frame = right, left
        build_aliases = set(node.build_child.aliases)

        preds = node.predicates
        key_pred = preds[0]
        if key_pred.left_alias in build_aliases:
            b_alias, b_col = key_pred.left_alias, key_pred.left_column
            p_alias, p_col = key_pred.right_alias, key_pred.right_column
        else:
            b_alias, b_col = key_pred.right_alias, key_pred.right_column
            p_alias, p_col = key_pred.left_alias, key_pred.left_column

        build_keys = self._column(b_alias, b_col)[build_frame[b_alias]]
        order = np.argsort(build_keys, kind="stable")
        sorted_keys = build_keys[order]
        probe_keys = self._column(p_alias, p_col)[probe_frame[p_alias]]

        residuals = []
        for pred in preds[1:]:
            if pred.left_alias in build_aliases:
                residuals.append(((pred.left_alias, pred.left_column),
                                  (pred.right_alias, pred.right_column)))
            else:
                residuals.append(((pred.right_alias, pred.right_column),
                                  (pred.left_alias, pred.left_column)))

        def probe_chunk(lo: int, hi: int):
            self._check_deadline()
            keys = probe_keys[lo:hi]
            left_pos = np.searchsorted(sorted_keys, keys, "left")
            right_pos = np.searchsorted(sorted_keys, keys, "right")
            idx, rows = _expand_ranges(left_pos, right_pos - left_pos)
            b_rows = order[idx]
            p_rows = rows + lo
            if residuals and len(b_rows):
                mask = None
                for (ba, bc), (pa, pc) in residuals:
                    bvals = self._column(ba, bc)[build_frame[ba][b_rows]]
                    pvals = self._column(pa, pc)[probe_frame[pa][p_rows]]
                    m = bvals == pvals
                    mask = m if mask is None else (mask & m)
                b_rows = b_rows[mask]
                p_rows = p_rows[mask]
            return b_rows, p_rows

        parts = self._run_chunks(probe_chunk, len(probe_keys))
        b_all = (np.concatenate([p[0] for p in parts]) if parts
                 else np.array([], dtype=np.int64))
        p_all = (np.concatenate([p[1] for p in parts]) if parts
                 else np.array([], dtype=np.int64))
        frame: Frame = {}
        for alias in sorted(node.aliases):
            if alias in build_aliases:
                frame[alias] = build_frame[alias][b_all]
            else:
                frame[alias] = probe_frame[alias][p_all]
        return frame

    def eval_nlj(self, node: Join) -> Frame:
        outer = self.eval(node.left)
        inner: Leaf = node.right  # validated: IS leaf
        inner_alias = inner.alias
        table = self.spec.aliases[inner_alias]
        probe_col = nlj_probe_column(node, self.catalog, self.spec)
        if probe_col is None:
            raise ValueError(f"NLJ inner {inner_alias!r} has no usable index")
        index = self.catalog.index(table, probe_col)

        probe_pred = None
        for pred in node.predicates:
            try:
                if pred.side(inner_alias) == probe_col:
                    probe_pred = pred
                    break
            except KeyError:
                continue
        o_alias = (probe_pred.left_alias if probe_pred.right_alias == inner_alias
                   else probe_pred.right_alias)
        o_col = probe_pred.side(o_alias)
        outer_keys = self._column(o_alias, o_col)[outer[o_alias]]

        residual_joins = [p for p in node.predicates if p is not probe_pred]
        inner_selections = inner.selections

        def outer_chunk(lo: int, hi: int):
            self._check_deadline()
            keys = outer_keys[lo:hi]
            starts, ends = index.batch_ranges(keys)
            idx, rows = _expand_ranges(starts, ends - starts)
            i_pos = index.positions[idx]
            o_rows = rows + lo
            mask = None
            for pred in inner_selections:
                vals = self.catalog.column(table, pred.column)[i_pos]
                m = predicate_mask(vals, pred)
                mask = m if mask is None else (mask & m)
            for pred in residual_joins:
                icol = pred.side(inner_alias)
                oa = (pred.left_alias if pred.right_alias == inner_alias
                      else pred.right_alias)
                ocol = pred.side(oa)
                ivals = self.catalog.column(table, icol)[i_pos]
                ovals = self._column(oa, ocol)[outer[oa][o_rows]]
                m = ivals == ovals
                mask = m if mask is None else (mask & m)
            if mask is not None and len(i_pos):
                i_pos = i_pos[mask]
                o_rows = o_rows[mask]
            return i_pos, o_rows

        parts = self._run_chunks(outer_chunk, len(outer_keys))
        i_all = (np.concatenate([p[0] for p in parts]) if parts
                 else np.array([], dtype=np.int64))
        o_all = (np.concatenate([p[1] for p in parts]) if parts
                 else np.array([], dtype=np.int64))
        frame: Frame = {inner_alias: i_all}
        for alias in sorted(node.left.aliases):
            frame[alias] = outer[alias][o_all]
        return frame


def _frame_rows(frame: Frame) -> int:
    return len(next(iter(frame.values())))


def compute_aggregate(frame: Frame, spec: QuerySpec, catalog: Catalog) -> AggregateResult:
    n = _frame_rows(frame)
    if spec.output.kind == "count":
        return AggregateResult("count", (n,))
    values = []
    for alias, column in spec.output.columns:
        if n == 0:
            values.append(None)
        else:
            col = catalog.column(spec.aliases[alias], column)
            values.append(col[frame[alias]].min().item())
    return AggregateResult("min", tuple(values))


def result_digest(result) -> str:
    """Order-insensitive digest of a row multiset, or a canonical digest of
    an aggregate value."""
    if isinstance(result, AggregateResult):
        payload = repr((result.kind, result.values)).encode()
        return hashlib.blake2b(payload, digest_size=16).hexdigest()
    acc = 0
    for row in result:
        h = hashlib.blake2b(repr(tuple(row)).encode(), digest_size=16).digest()
        acc = (acc + int.from_bytes(h, "big")) % _DIGEST_MOD
    return f"{acc:032x}"


def execute_plan(plan: PlanNode, spec: QuerySpec, catalog: Catalog,
                 config: ExecConfig = ExecConfig()) -> ResultSummary:
    """Run a validated plan ``config.runs`` times; report the median wall time.

    A run that exceeds the timeout discards its partial results: the summary
    is flagged and the median is pinned to the timeout value.
    """
    pool = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    elapsed: list[float] = []
    row_count = None
    digest = None
    try:
        for _ in range(config.runs):
            start = time.perf_counter()
            deadline = start + config.timeout_s if config.timeout_s else None
            engine = _Engine(spec, catalog, config.workers, pool, deadline)
            try:
                frame = engine.eval(plan)
                aggregate = compute_aggregate(frame, spec, catalog)
            except BudgetExceeded:
                elapsed.append(config.timeout_s)
                return ResultSummary(row_count=None, digest=None,
                                     elapsed_each=elapsed,
                                     elapsed_median=config.timeout_s,
                                     timed_out=True)
            elapsed.append(time.perf_counter() - start)
            row_count = _frame_rows(frame)
            digest = result_digest(aggregate)
    finally:
        if pool is not None:
            pool.shutdown(wait=False)
    return ResultSummary(row_count=row_count, digest=digest,
                         elapsed_each=elapsed,
                         elapsed_median=statistics.median(elapsed),
                         timed_out=False)


def execute_subset(key: Iterable[str], spec: QuerySpec, catalog: Catalog,
                   budget_s: Optional[float] = None,
                   order: Optional[list[str]] = None) -> int:
    """Exact row count of the connected sub-join over ``key``.

    The internal execution order is chosen greedily (1:n edges first,
    smaller base tables first) and never affects the count; an explicit
    ``order`` may be supplied to cross-check that property.
    """
    members = sorted(set(key))
    graph = build_join_graph(spec, catalog)
    deadline = time.perf_counter() + budget_s if budget_s else None
    engine = _Engine(spec, catalog, workers=1, pool=None, deadline=deadline)

    if order is None:
        order = _subset_order(graph, members, spec, catalog)
    else:
        order = list(order)
        if sorted(order) != members:
            raise ValueError("explicit order must be a permutation of the key")

    def leaf_frame(alias: str) -> Frame:
        return engine.eval_leaf(Leaf(alias, SS, spec.selections_for(alias)))

    frame = leaf_frame(order[0])
    current = {order[0]}
    for alias in order[1:]:
        preds = spec.crossing_predicates(frozenset(current), frozenset((alias,)))
        if not preds:
            raise ValueError(
                f"execution order {order!r} introduces a cross product at {alias!r}")
        nxt = leaf_frame(alias)
        left, right = frame, nxt
        build = "left" if _frame_rows(left) <= _frame_rows(right) else "right"
        node = Join(left=_FrameStub(frozenset(current)),
                    right=_FrameStub(frozenset((alias,))),
                    operator=HJ, build_side=build, predicates=preds)
        frame = engine.eval_hj(node, left, right)
        current.add(alias)
    return _frame_rows(frame)


def _subset_order(graph, members: list[str], spec, catalog) -> list[str]:
    member_set = set(members)
    start = min(members, key=lambda a: (graph.vertices[a], a))
    order = [start]
    current = {start}
    while len(order) < len(members):
        best = None
        for alias in members:
            if alias in current:
                continue
            edges = [e for e in graph.edges_of(alias)
                     if e.other(alias) in current]
            if not edges:
                continue
            has_1n = any(e.kind == "one_to_many" for e in edges)
            rank = (0 if has_1n else 1, graph.vertices[alias], alias)
            if best is None or rank < best[0]:
                best = (rank, alias)
        if best is None:
            raise ValueError(f"key {sorted(member_set)!r} is not connected")
        order.append(best[1])
        current.add(best[1])
    return order


class _FrameStub:
    """Stands in for a plan subtree when joining pre-computed frames."""

    def __init__(self, aliases: frozenset):
        self.aliases = aliases
