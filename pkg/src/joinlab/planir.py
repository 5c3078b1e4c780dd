"""Executable plans: binary operator trees with access paths and join operators.

A plan is a binary tree of frozen nodes.  Leaves name an alias, its access
path (SS everywhere except the inner of an index nested-loop join, which is
IS), and the query selections on that alias.  Join nodes carry the operator
(HJ with an explicit build side, or NLJ whose inner child must be a base
leaf), plus every query join predicate crossing the left/right partition.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from . import costmodel
from .catalog import Catalog, INDEXED, NON_INDEXED
from .costmodel import CostParams, SS, IS, HJ, NLJ
from .frontend import JoinGraph, JoinPredicate, QuerySpec, SelectionPredicate, connected


@dataclass(frozen=True)
class Leaf:
    alias: str
    access: str = SS
    selections: tuple[SelectionPredicate, ...] = ()

    @property
    def aliases(self) -> frozenset[str]:
        return frozenset((self.alias,))


@dataclass(frozen=True)
class Join:
    left: "PlanNode"
    right: "PlanNode"
    operator: str  # HJ or NLJ
    build_side: Optional[str] = None  # "left"/"right" for HJ, None for NLJ
    predicates: tuple[JoinPredicate, ...] = ()

    @property
    def aliases(self) -> frozenset[str]:
        return self.left.aliases | self.right.aliases

    @property
    def build_child(self) -> "PlanNode":
        return self.left if self.build_side == "left" else self.right

    @property
    def probe_child(self) -> "PlanNode":
        return self.right if self.build_side == "left" else self.left


PlanNode = Union[Leaf, Join]


def make_leaf(spec: QuerySpec, alias: str, access: str = SS) -> Leaf:
    return Leaf(alias=alias, access=access, selections=spec.selections_for(alias))


def make_join(spec: QuerySpec, left: PlanNode, right: PlanNode, operator: str,
              build_side: Optional[str] = None) -> Join:
    """Join two subtrees, attaching every crossing query predicate."""
    preds = spec.crossing_predicates(left.aliases, right.aliases)
    return Join(left=left, right=right, operator=operator,
                build_side=build_side, predicates=preds)


def walk(plan: PlanNode):
    """Postorder traversal."""
    if isinstance(plan, Join):
        yield from walk(plan.left)
        yield from walk(plan.right)
    yield plan


def operator_counts(plan: PlanNode) -> dict[str, int]:
    counts = {SS: 0, IS: 0, HJ: 0, NLJ: 0}
    for node in walk(plan):
        if isinstance(node, Leaf):
            counts[node.access] += 1
        else:
            counts[node.operator] += 1
    return counts


def nlj_probe_column(node: Join, catalog: Catalog, spec: QuerySpec) -> Optional[str]:
    """The indexed inner column an NLJ probes: first crossing predicate whose
    inner-side column has an equality index."""
    inner = node.right
    if not isinstance(inner, Leaf):
        return None
    table = spec.aliases[inner.alias]
    for p in node.predicates:
        try:
            col = p.side(inner.alias)
        except KeyError:
            continue
        if catalog.has_index(table, col):
            return col
    return None


def validate_plan(plan: PlanNode, spec: QuerySpec, graph: JoinGraph,
                  catalog: Catalog) -> list[str]:
    """Structural validation; violations come back as data, nothing raises."""
    violations: list[str] = []
    seen: list[str] = []
    for node in walk(plan):
        if isinstance(node, Leaf):
            seen.append(node.alias)
    expected = set(spec.aliases)
    if len(seen) != len(set(seen)):
        violations.append(f"alias appears more than once: {sorted(seen)!r}")
    if set(seen) != expected:
        violations.append(
            f"plan aliases {sorted(set(seen))!r} do not match query aliases "
            f"{sorted(expected)!r}")

    applied: list[JoinPredicate] = []
    for node in walk(plan):
        if isinstance(node, Leaf):
            if node.alias in spec.aliases:
                want = spec.selections_for(node.alias)
                if tuple(node.selections) != want:
                    violations.append(
                        f"leaf {node.alias!r} selections differ from the query's")
            if node.access not in (SS, IS):
                violations.append(f"leaf {node.alias!r} has unknown access {node.access!r}")
            continue
        crossing = spec.crossing_predicates(node.left.aliases, node.right.aliases)
        if tuple(node.predicates) != crossing:
            violations.append(
                f"join over {sorted(node.aliases)!r} must apply exactly the "
                f"crossing predicates")
        if not crossing:
            violations.append(
                f"cross product: no predicate connects {sorted(node.left.aliases)!r} "
                f"and {sorted(node.right.aliases)!r}")
        applied.extend(node.predicates)
        if node.operator == HJ:
            if node.build_side not in ("left", "right"):
                violations.append("hash join requires an explicit build side")
        elif node.operator == NLJ:
            if catalog.setting != INDEXED:
                violations.append("NLJ requires the indexed setting")
            inner = node.right
            if not isinstance(inner, Leaf):
                violations.append("NLJ inner must be a base-relation leaf")
            elif inner.access != IS:
                violations.append("NLJ inner leaf must use an index scan")
            elif nlj_probe_column(node, catalog, spec) is None:
                violations.append(
                    f"NLJ inner {inner.alias!r} has no index on a join column")
        else:
            violations.append(f"unknown join operator {node.operator!r}")
    if catalog.setting == NON_INDEXED:
        for node in walk(plan):
            if isinstance(node, Join) and node.operator != HJ:
                violations.append("non-indexed setting permits hash joins only")
            if isinstance(node, Leaf) and node.access != SS:
                violations.append("non-indexed setting permits sequential scans only")

    want = sorted(p.normalized() for p in spec.joins)
    have = sorted(p.normalized() for p in applied)
    if want != have:
        violations.append("each query join predicate must be applied at exactly one node")
    for node in walk(plan):
        if isinstance(node, Join):
            if not connected(graph, node.aliases):
                violations.append(
                    f"subtree {sorted(node.aliases)!r} is not connected in the join graph")
    return sorted(set(violations))


class AnnotatedPlan:
    """A plan with per-node cardinalities and cumulative costs.

    Nodes are keyed by their alias set (unique within one plan).  The stored
    cost of a node is the cost of its whole subtree, so costs are
    non-decreasing from child to parent.
    """

    def __init__(self, plan: PlanNode, cards: dict[frozenset, float],
                 costs: dict[frozenset, float], provider_id: str):
        self.plan = plan
        self.cards = cards
        self.costs = costs
        self.provider_id = provider_id

    def card_of(self, node: PlanNode) -> float:
        return self.cards[node.aliases]

    def cost_of(self, node: PlanNode) -> float:
        return self.costs[node.aliases]

    @property
    def total_cost(self) -> float:
        return self.costs[self.plan.aliases]

    @property
    def root_cardinality(self) -> float:
        return self.cards[self.plan.aliases]


def annotate(plan: PlanNode, provider, params: CostParams = CostParams()) -> AnnotatedPlan:
    """Annotate every node with a cardinality from ``provider`` and its cost.

    ``provider`` supplies ``cardinality(frozenset_of_aliases)`` for filtered
    sub-expressions and ``base_rows(alias)`` for raw scan inputs.
    """
    cards: dict[frozenset, float] = {}
    costs: dict[frozenset, float] = {}

    def visit(node: PlanNode) -> None:
        key = node.aliases
        if isinstance(node, Leaf):
            cards[key] = provider.cardinality(key)
            if node.access == SS:
                costs[key] = costmodel.cost_node(SS, (provider.base_rows(node.alias),), params)
            else:
                costs[key] = costmodel.cost_node(IS, (), params)
            return
        visit(node.left)
        visit(node.right)
        out = provider.cardinality(key)
        cards[key] = out
        if node.operator == HJ:
            build = cards[node.build_child.aliases]
            own = costmodel.cost_node(HJ, (build, out), params)
        else:
            outer = cards[node.left.aliases]
            own = costmodel.cost_node(NLJ, (outer, out), params)
        costs[key] = costs[node.left.aliases] + costs[node.right.aliases] + own

    visit(plan)
    return AnnotatedPlan(plan, cards, costs, getattr(provider, "provider_id", "unknown"))


def plan_digest(plan: PlanNode) -> str:
    """Canonical string: equal iff join tree, operators, and build sides match."""
    if isinstance(plan, Leaf):
        return f"{plan.alias}[{plan.access}]"
    op = plan.operator if plan.operator == NLJ else f"{plan.operator}.{plan.build_side}"
    return f"{op}({plan_digest(plan.left)},{plan_digest(plan.right)})"


def render_tree(annotated: AnnotatedPlan, spec: QuerySpec) -> str:
    """Indented text form of a plan with cardinality/cost annotations."""
    lines: list[str] = []

    def visit(node: PlanNode, depth: int) -> None:
        pad = "  " * depth
        card = annotated.card_of(node)
        cost = annotated.cost_of(node)
        if isinstance(node, Leaf):
            sels = (" | " + " AND ".join(p.render() for p in node.selections)
                    if node.selections else "")
            lines.append(f"{pad}{node.access} {node.alias}"
                         f" [rows={card:.6g} cost={cost:.6g}]{sels}")
            return
        label = node.operator + (f" build={node.build_side}" if node.operator == HJ else "")
        preds = " AND ".join(p.render() for p in node.predicates)
        lines.append(f"{pad}{label} ON {preds} [rows={card:.6g} cost={cost:.6g}]")
        visit(node.left, depth + 1)
        visit(node.right, depth + 1)

    visit(annotated.plan, 0)
    return "\n".join(lines)


def render_sql(plan: PlanNode, spec: QuerySpec) -> str:
    """Render a plan as SQL with explicit JOIN nesting.

    Left-deep segments come out as plain JOIN chains.  Whenever the right
    child of a join is itself a join, that whole component is rendered as an
    inline subquery projecting the columns the enclosing query still needs,
    so the text pins down the tree shape while staying re-parseable.
    """
    counter = [0]
    # Columns needed above a subquery boundary: all join-predicate columns
    # plus any aggregate output columns.
    needed: dict[str, set] = {a: set() for a in spec.aliases}
    for p in spec.joins:
        needed[p.left_alias].add(p.left_column)
        needed[p.right_alias].add(p.right_column)
    for a, c in spec.output.columns:
        needed[a].add(c)

    rename: dict[tuple[str, str], tuple[str, str]] = {}

    def ref(alias: str, column: str) -> str:
        a, c = rename.get((alias, column), (alias, column))
        return f"{a}.{c}"

    def render_pred(p: JoinPredicate) -> str:
        return f"{ref(p.left_alias, p.left_column)} = {ref(p.right_alias, p.right_column)}"

    def render_selection(p: SelectionPredicate) -> str:
        return p.render()

    def from_expr(node: PlanNode, where: list[str]) -> str:
        if isinstance(node, Leaf):
            where.extend(render_selection(s) for s in node.selections)
            return f"{spec.aliases[node.alias]} AS {node.alias}"
        left_sql = from_expr(node.left, where)
        if isinstance(node.right, Join):
            right_sql = subquery(node.right)
        else:
            right_sql = from_expr(node.right, where)
        on = " AND ".join(render_pred(p) for p in node.predicates)
        return f"{left_sql} JOIN {right_sql} ON {on}"

    def subquery(node: Join) -> str:
        sq = f"sq{counter[0]}"
        counter[0] += 1
        while sq in spec.aliases:
            sq += "_"
        inner_where: list[str] = []
        inner_from = from_expr(node, inner_where)
        cols = sorted((a, c) for a in node.aliases for c in needed[a])
        projections = ", ".join(f"{ref(a, c)} AS {a}__{c}" for a, c in cols)
        sql = f"(SELECT {projections} FROM {inner_from}"
        if inner_where:
            sql += " WHERE " + " AND ".join(inner_where)
        sql += f") AS {sq}"
        for a, c in cols:
            rename[(a, c)] = (sq, f"{a}__{c}")
        return sql

    where: list[str] = []
    from_sql = from_expr(plan, where)
    if spec.output.kind == "count":
        select_sql = "COUNT(*)"
    else:
        select_sql = ", ".join(f"MIN({ref(a, c)})" for a, c in spec.output.columns)
    sql = f"SELECT {select_sql} FROM {from_sql}"
    if where:
        sql += " WHERE " + " AND ".join(where)
    return sql
