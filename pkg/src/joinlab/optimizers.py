"""Plan producers: exhaustive dynamic programming, the estimate-free
foreign-key heuristic, and QuickPick random sampling.

The DP enumerates connected subsets against connected complements, so it
searches every cross-product-free binary tree (or the left-deep subset)
with every operator/build-side choice the setting allows.  The heuristic
reads nothing but the join graph's shape and base-table sizes: foreign-key
tables are ranked by a score that is their cardinality when no indexes
exist and their cardinality discounted by ``2**(adjacent key tables)`` when
indexes do, and each one pulls in its key-side neighbors smallest-first.
QuickPick grows a random spanning forest, merging two partial trees through
a uniformly random connecting edge.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from . import costmodel
from .catalog import Catalog, INDEXED, NON_INDEXED
from .costmodel import CostParams, HJ, IS, NLJ, SS
from .frontend import JoinGraph, ONE_TO_MANY, QuerySpec, connected
from .planir import Join, Leaf, PlanNode, make_join, make_leaf, plan_digest

BUSHY = "bushy"
LEFT_DEEP = "left_deep"
HASH_ONLY = "hash_only"
INDEXED_CHOICE = "indexed_choice"


class PlanSpaceError(ValueError):
    """Query exceeds the DP table limit or its graph is disconnected."""


@dataclass(frozen=True)
class OptimizerConfig:
    setting: str = NON_INDEXED
    shape: str = BUSHY
    operator_policy: Optional[str] = None  # derived from setting when omitted
    dp_table_limit: int = 14

    def __post_init__(self):
        if self.operator_policy is None:
            policy = HASH_ONLY if self.setting == NON_INDEXED else INDEXED_CHOICE
            object.__setattr__(self, "operator_policy", policy)
        if self.setting == NON_INDEXED and self.operator_policy != HASH_ONLY:
            raise ValueError("the non-indexed setting is hash-join exclusive")


@dataclass
class JoinOrderResult:
    jo: list[str]
    components: list[tuple[int, int]]  # [start, end) index ranges into jo
    trailing_start: int  # aliases past this index joined at the top level
    fk_order: list[tuple[str, float]] = field(default_factory=list)


def c_s2(fk_alias: str, graph: JoinGraph, setting: str) -> float:
    """Ranking score of a foreign-key table.

    Cardinality in the non-indexed setting; cardinality divided by two to
    the number of adjacent key-side tables when indexes are available.
    """
    pk_adj = graph.pk_neighbors(fk_alias)
    if not pk_adj:
        raise ValueError(f"{fk_alias!r} is not on the foreign-key side of any 1:n edge")
    size = float(graph.vertices[fk_alias])
    if setting == INDEXED:
        return size / (2 ** len(pk_adj))
    return size


def simpli2_order(graph: JoinGraph, setting: str) -> JoinOrderResult:
    """Estimate-free join order from graph structure and base sizes alone.

    Foreign-key tables open components in ascending score order, each
    followed by its not-yet-placed key-side neighbors smallest-first.
    Whatever remains is appended once adjacent to the order so far.  Ties
    break on ascending alias name throughout.
    """
    aliases = graph.aliases()
    if not connected(graph, aliases):
        raise PlanSpaceError("join graph is disconnected")
    jo: list[str] = []
    placed: set[str] = set()
    components: list[tuple[int, int]] = []
    fk_order: list[tuple[str, float]] = []

    fks = graph.fk_tables()
    if fks:
        ranked = sorted(fks, key=lambda a: (c_s2(a, graph, setting), a))
        fk_order = [(a, c_s2(a, graph, setting)) for a in ranked]
        for f in ranked:
            if f in placed:
                # Already consumed as a key-side member of an earlier
                # component; its leftover neighbors fall to the trailing loop.
                continue
            start = len(jo)
            jo.append(f)
            placed.add(f)
            for c in sorted(graph.pk_neighbors(f),
                            key=lambda a: (graph.vertices[a], a)):
                if c not in placed:
                    jo.append(c)
                    placed.add(c)
            components.append((start, len(jo)))
        trailing_start = len(jo)
        while len(jo) < len(aliases):
            candidates = sorted(a for a in aliases if a not in placed
                                and graph.neighbors(a) & placed)
            if not candidates:
                raise PlanSpaceError("join graph is disconnected")
            jo.append(candidates[0])
            placed.add(candidates[0])
    else:
        # No 1:n edge anywhere: greedy ascending-cardinality order,
        # constrained to stay adjacent so no cross product can arise.
        start = min(aliases, key=lambda a: (graph.vertices[a], a))
        jo = [start]
        placed = {start}
        while len(jo) < len(aliases):
            candidates = [a for a in aliases if a not in placed
                          and graph.neighbors(a) & placed]
            if not candidates:
                raise PlanSpaceError("join graph is disconnected")
            nxt = min(candidates, key=lambda a: (graph.vertices[a], a))
            jo.append(nxt)
            placed.add(nxt)
        components = [(0, len(jo))]
        trailing_start = len(jo)
    return JoinOrderResult(jo=jo, components=components,
                           trailing_start=trailing_start, fk_order=fk_order)


def _subtree_base_rows(node: PlanNode, graph: JoinGraph) -> int:
    return sum(graph.vertices[a] for a in node.aliases)


def _hj_smaller_build(spec: QuerySpec, graph: JoinGraph, left: PlanNode,
                      right: PlanNode) -> Join:
    """Hash join with the build on the side holding fewer base rows (ties
    build left) -- the only size signal available without estimates."""
    build = "left" if _subtree_base_rows(left, graph) <= _subtree_base_rows(right, graph) \
        else "right"
    return make_join(spec, left, right, HJ, build)


def _indexed_join_column(spec: QuerySpec, catalog: Catalog,
                         outer_aliases: frozenset, inner_alias: str) -> Optional[str]:
    table = spec.aliases[inner_alias]
    for p in spec.crossing_predicates(outer_aliases, frozenset((inner_alias,))):
        try:
            col = p.side(inner_alias)
        except KeyError:
            continue
        if catalog.has_index(table, col):
            return col
    return None


def simpli2_plan(order: JoinOrderResult, graph: JoinGraph, spec: QuerySpec,
                 catalog: Catalog, config: OptimizerConfig) -> PlanNode:
    """Turn a heuristic join order into an executable plan.

    Non-indexed: each component becomes a left-deep hash-join subtree and
    the components combine left-deep in order (a bushy plan overall), with
    sequential scans everywhere.  Indexed: one left-deep chain over the
    whole order, preferring an index nested-loop join whenever the incoming
    base table has an index on a join column.  Either way, an item whose
    turn arrives without a connecting edge to the plan built so far is
    deferred until one exists, so no cross product is ever emitted.
    """
    if sorted(order.jo) != graph.aliases():
        raise ValueError("join order does not cover the query's aliases")

    if config.setting == INDEXED:
        pending = list(order.jo)
        plan: PlanNode = make_leaf(spec, pending.pop(0), SS)
        while pending:
            idx = next((i for i, a in enumerate(pending)
                        if spec.crossing_predicates(plan.aliases, frozenset((a,)))),
                       None)
            if idx is None:
                raise PlanSpaceError("join graph is disconnected")
            alias = pending.pop(idx)
            col = _indexed_join_column(spec, catalog, plan.aliases, alias)
            if col is not None:
                plan = make_join(spec, plan, make_leaf(spec, alias, IS), NLJ)
            else:
                plan = _hj_smaller_build(spec, graph, plan, make_leaf(spec, alias, SS))
        return plan

    subtrees: list[PlanNode] = []
    for start, end in order.components:
        node: PlanNode = make_leaf(spec, order.jo[start], SS)
        for alias in order.jo[start + 1:end]:
            node = _hj_smaller_build(spec, graph, node, make_leaf(spec, alias, SS))
        subtrees.append(node)
    for alias in order.jo[order.trailing_start:]:
        subtrees.append(make_leaf(spec, alias, SS))

    plan = subtrees.pop(0)
    while subtrees:
        idx = next((i for i, t in enumerate(subtrees)
                    if spec.crossing_predicates(plan.aliases, t.aliases)), None)
        if idx is None:
            raise PlanSpaceError("join graph is disconnected")
        plan = _hj_smaller_build(spec, graph, plan, subtrees.pop(idx))
    return plan


def dp_optimize(spec: QuerySpec, graph: JoinGraph, catalog: Catalog, provider,
                cost_params: CostParams = CostParams(),
                config: OptimizerConfig = OptimizerConfig()) -> PlanNode:
    """Exhaustive connected-subset dynamic programming.

    For every connected alias subset, in increasing size, every connected
    complementary split with a crossing edge is evaluated under every
    operator choice the policy allows (hash join with both build sides;
    additionally NLJ when one side is a base table with an index on a join
    column).  Equal-cost candidates resolve to the smaller plan digest so
    runs are reproducible.
    """
    aliases = graph.aliases()
    n = len(aliases)
    if n > config.dp_table_limit:
        raise PlanSpaceError(
            f"{n} tables exceed the DP limit of {config.dp_table_limit}")
    if not connected(graph, aliases):
        raise PlanSpaceError("join graph is disconnected")

    bit = {a: 1 << i for i, a in enumerate(aliases)}
    neighbor_mask = [0] * n
    for i, a in enumerate(aliases):
        for b in graph.neighbors(a):
            neighbor_mask[i] |= bit[b]

    def members(mask: int) -> frozenset:
        return frozenset(a for a in aliases if mask & bit[a])

    conn_cache: dict[int, bool] = {}

    def is_connected(mask: int) -> bool:
        cached = conn_cache.get(mask)
        if cached is not None:
            return cached
        low = mask & -mask
        seen = low
        frontier = low
        while frontier:
            lowest = frontier & -frontier
            i = lowest.bit_length() - 1
            frontier ^= lowest
            grow = neighbor_mask[i] & mask & ~seen
            seen |= grow
            frontier |= grow
        conn_cache[mask] = seen == mask
        return seen == mask

    card_cache: dict[int, float] = {}

    def card(mask: int) -> float:
        if mask not in card_cache:
            card_cache[mask] = provider.cardinality(members(mask))
        return card_cache[mask]

    def crossing(sub: int, comp: int) -> bool:
        m = sub
        while m:
            lowest = m & -m
            m ^= lowest
            if neighbor_mask[lowest.bit_length() - 1] & comp:
                return True
        return False

    best_cost: dict[int, float] = {}
    best_plan: dict[int, PlanNode] = {}
    for a in aliases:
        leaf = make_leaf(spec, a, SS)
        best_plan[bit[a]] = leaf
        best_cost[bit[a]] = costmodel.cost_node(SS, (provider.base_rows(a),), cost_params)

    indexed_ops = (config.operator_policy == INDEXED_CHOICE
                   and catalog.setting == INDEXED)

    full = (1 << n) - 1
    for mask in range(3, full + 1):
        if mask & (mask - 1) == 0 or not is_connected(mask):
            continue
        low = mask & -mask
        out_card = card(mask)
        chosen_cost = None
        chosen_plan = None

        def consider(cost: float, build_plan) -> None:
            nonlocal chosen_cost, chosen_plan
            if chosen_cost is None or cost < chosen_cost:
                chosen_cost, chosen_plan = cost, build_plan()
            elif cost == chosen_cost:
                candidate = build_plan()
                if plan_digest(candidate) < plan_digest(chosen_plan):
                    chosen_plan = candidate

        sub = (mask - 1) & mask
        while sub:
            comp = mask ^ sub
            if (sub & low) and sub in best_cost and comp in best_cost \
                    and crossing(sub, comp):
                sub_single = sub & (sub - 1) == 0
                comp_single = comp & (comp - 1) == 0
                if config.shape != LEFT_DEEP or sub_single or comp_single:
                    base = best_cost[sub] + best_cost[comp]
                    for build, build_card in (("left", card(sub)), ("right", card(comp))):
                        own = costmodel.cost_node(HJ, (build_card, out_card), cost_params)
                        consider(
                            base + own,
                            lambda b=build, s=sub, c=comp: make_join(
                                spec, best_plan[s], best_plan[c], HJ, b))
                    if indexed_ops:
                        for outer, inner in ((sub, comp), (comp, sub)):
                            if inner & (inner - 1):
                                continue
                            (inner_alias,) = members(inner)
                            col = _indexed_join_column(
                                spec, catalog, members(outer), inner_alias)
                            if col is None:
                                continue
                            own = costmodel.cost_node(
                                NLJ, (card(outer), out_card), cost_params)
                            consider(
                                best_cost[outer] + own,
                                lambda o=outer, ia=inner_alias: make_join(
                                    spec, best_plan[o],
                                    make_leaf(spec, ia, IS), NLJ))
            sub = (sub - 1) & mask

        if chosen_plan is None:
            raise PlanSpaceError("join graph is disconnected")
        best_cost[mask] = chosen_cost
        best_plan[mask] = chosen_plan
    return best_plan[full]


def quickpick_sample(graph: JoinGraph, n: int, seed: int,
                     config: OptimizerConfig, spec: QuerySpec, catalog: Catalog,
                     provider=None,
                     cost_params: CostParams = CostParams()) -> list[PlanNode]:
    """Sample ``n`` random cross-product-free plans.

    Each plan grows by drawing a uniformly random edge whose endpoints sit
    in different partial trees and merging them.  Hash joins get a random
    build side; under the indexed policy the locally cheaper operator is
    taken instead, priced by ``provider``.  Fixed seeds give identical plan
    sequences.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    aliases = graph.aliases()
    if not connected(graph, aliases):
        raise PlanSpaceError("join graph is disconnected")
    indexed_ops = (config.operator_policy == INDEXED_CHOICE
                   and catalog.setting == INDEXED)
    if indexed_ops and provider is None:
        raise ValueError("the indexed operator rule needs a cardinality provider")
    rng = random.Random(seed)
    plans: list[PlanNode] = []
    for _ in range(n):
        trees: dict[str, PlanNode] = {a: make_leaf(spec, a, SS) for a in aliases}
        owner = {a: a for a in aliases}
        while len(trees) > 1:
            candidates = [e for e in graph.edges
                          if owner[e.left] != owner[e.right]]
            edge = rng.choice(candidates)
            left_root, right_root = owner[edge.left], owner[edge.right]
            left, right = trees.pop(left_root), trees.pop(right_root)
            if indexed_ops:
                node = _quickpick_indexed_join(spec, catalog, provider,
                                               cost_params, left, right)
            else:
                build = rng.choice(("left", "right"))
                node = make_join(spec, left, right, HJ, build)
            new_root = min(left_root, right_root)
            trees[new_root] = node
            for a in node.aliases:
                owner[a] = new_root
        plans.append(next(iter(trees.values())))
    return plans


def _quickpick_indexed_join(spec, catalog, provider, cost_params,
                            left: PlanNode, right: PlanNode) -> Join:
    out_card = provider.cardinality(left.aliases | right.aliases)
    left_card = provider.cardinality(left.aliases)
    right_card = provider.cardinality(right.aliases)
    hj_left = costmodel.cost_node(HJ, (left_card, out_card), cost_params)
    hj_right = costmodel.cost_node(HJ, (right_card, out_card), cost_params)
    build, hj_cost = ("left", hj_left) if hj_left <= hj_right else ("right", hj_right)

    nlj_choice = None
    nlj_cost = None
    for outer, inner, outer_card in ((left, right, left_card),
                                     (right, left, right_card)):
        if not isinstance(inner, Leaf):
            continue
        col = _indexed_join_column(spec, catalog, outer.aliases, inner.alias)
        if col is None:
            continue
        cost = costmodel.cost_node(NLJ, (outer_card, out_card), cost_params)
        if nlj_cost is None or cost < nlj_cost:
            nlj_cost = cost
            nlj_choice = (outer, inner)
    if nlj_cost is not None and nlj_cost < hj_cost:
        outer, inner = nlj_choice
        return make_join(spec, outer, make_leaf(spec, inner.alias, IS), NLJ)
    return make_join(spec, left, right, HJ, build)
