"""Parser for a conjunctive select-project-join SQL subset and join graphs.

The dialect covers aggregate outputs (COUNT(*) or a list of MINs), a FROM
clause of aliased tables (comma list, explicit JOIN ... ON chains, and
inline subqueries produced by the plan renderer), and a WHERE conjunction
of selection and equality-join predicates.  Subqueries in FROM are
flattened back into the enclosing query, so re-parsing rendered plans
recovers the original alias set and predicates.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from .catalog import Catalog, INT64, TEXT


class ParseError(ValueError):
    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at offset {pos})")
        self.pos = pos


class UnsupportedConstructError(ParseError):
    pass


COMPARISON_OPS = ("=", "<>", "<", "<=", ">", ">=")


@dataclass(frozen=True)
class SelectionPredicate:
    alias: str
    column: str
    op: str  # =, <>, <, <=, >, >=, LIKE, IN, BETWEEN
    operands: tuple

    def render(self) -> str:
        col = f"{self.alias}.{self.column}"
        if self.op == "IN":
            return f"{col} IN ({', '.join(_render_literal(v) for v in self.operands)})"
        if self.op == "BETWEEN":
            lo, hi = self.operands
            return f"{col} BETWEEN {_render_literal(lo)} AND {_render_literal(hi)}"
        return f"{col} {self.op} {_render_literal(self.operands[0])}"


@dataclass(frozen=True, order=True)
class JoinPredicate:
    left_alias: str
    left_column: str
    right_alias: str
    right_column: str

    def normalized(self) -> "JoinPredicate":
        if (self.left_alias, self.left_column) <= (self.right_alias, self.right_column):
            return self
        return JoinPredicate(self.right_alias, self.right_column,
                             self.left_alias, self.left_column)

    def aliases(self) -> frozenset[str]:
        return frozenset((self.left_alias, self.right_alias))

    def side(self, alias: str) -> str:
        if alias == self.left_alias:
            return self.left_column
        if alias == self.right_alias:
            return self.right_column
        raise KeyError(alias)

    def render(self) -> str:
        return f"{self.left_alias}.{self.left_column} = {self.right_alias}.{self.right_column}"


@dataclass(frozen=True)
class OutputSpec:
    kind: str  # "count" or "min"
    columns: tuple[tuple[str, str], ...] = ()

    def render(self) -> str:
        if self.kind == "count":
            return "COUNT(*)"
        return ", ".join(f"MIN({a}.{c})" for a, c in self.columns)


@dataclass
class QuerySpec:
    aliases: dict[str, str]  # alias -> table name
    selections: list[SelectionPredicate]
    joins: list[JoinPredicate]
    output: OutputSpec

    def selections_for(self, alias: str) -> tuple[SelectionPredicate, ...]:
        return tuple(p for p in self.selections if p.alias == alias)

    def crossing_predicates(self, left: frozenset[str], right: frozenset[str]) -> tuple[JoinPredicate, ...]:
        out = []
        for p in self.joins:
            a, b = p.left_alias, p.right_alias
            if (a in left and b in right) or (a in right and b in left):
                out.append(p.normalized())
        return tuple(sorted(out, key=lambda p: (p.left_alias, p.left_column,
                                                p.right_alias, p.right_column)))

    def canonical(self) -> tuple:
        """Order-insensitive form used by round-trip tests."""
        return (
            tuple(sorted(self.aliases.items())),
            tuple(sorted((p.alias, p.column, p.op, p.operands) for p in self.selections)),
            tuple(sorted((p.normalized().left_alias, p.normalized().left_column,
                          p.normalized().right_alias, p.normalized().right_column)
                         for p in self.joins)),
            (self.output.kind, tuple(sorted(self.output.columns))),
        )


ONE_TO_MANY = "one_to_many"
MANY_TO_MANY = "many_to_many"
ONE_TO_ONE = "one_to_one"


@dataclass(frozen=True)
class JoinEdge:
    left: str
    right: str  # left < right lexicographically
    predicates: tuple[JoinPredicate, ...]
    kind: str
    key_side: Optional[str] = None  # alias of the key side for 1:n edges

    def other(self, alias: str) -> str:
        return self.right if alias == self.left else self.left

    def touches(self, alias: str) -> bool:
        return alias in (self.left, self.right)


class JoinGraph:
    """Query join graph: one vertex per alias, one typed edge per joined pair."""

    def __init__(self, vertices: dict[str, int], edges: list[JoinEdge]):
        self.vertices = vertices  # alias -> base-table row count
        self.edges = sorted(edges, key=lambda e: (e.left, e.right))
        self._adj: dict[str, list[JoinEdge]] = {a: [] for a in vertices}
        for e in self.edges:
            self._adj[e.left].append(e)
            self._adj[e.right].append(e)

    def aliases(self) -> list[str]:
        return sorted(self.vertices)

    def edges_of(self, alias: str) -> list[JoinEdge]:
        return self._adj[alias]

    def neighbors(self, alias: str) -> set[str]:
        return {e.other(alias) for e in self._adj[alias]}

    def edge_between(self, a: str, b: str) -> Optional[JoinEdge]:
        lo, hi = min(a, b), max(a, b)
        for e in self._adj[lo]:
            if e.left == lo and e.right == hi:
                return e
        return None

    def fk_tables(self) -> list[str]:
        """Aliases sitting on the foreign-key (many) side of a 1:n edge."""
        out = set()
        for e in self.edges:
            if e.kind == ONE_TO_MANY:
                out.add(e.other(e.key_side))
        return sorted(out)

    def pk_neighbors(self, alias: str) -> list[str]:
        """Key-side aliases adjacent to ``alias`` through its 1:n edges."""
        out = set()
        for e in self._adj[alias]:
            if e.kind == ONE_TO_MANY and e.key_side != alias:
                out.add(e.key_side)
        return sorted(out)


def tokenize(text: str):
    token_re = re.compile(
        r"""
        (?P<ws>\s+)
        |(?P<string>'(?:[^']|'')*')
        |(?P<int>-?\d+)
        |(?P<ident>[A-Za-z_][A-Za-z0-9_]*)
        |(?P<op><>|<=|>=|!=|[=<>(),.*])
        """,
        re.VERBOSE,
    )
    pos = 0
    tokens = []
    while pos < len(text):
        m = token_re.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            kind = m.lastgroup
            value = m.group()
            if kind == "op" and value == "!=":
                value = "<>"
            tokens.append((kind, value, pos))
        pos = m.end()
    tokens.append(("eof", "", len(text)))
    return tokens


_KEYWORDS = {"SELECT", "FROM", "WHERE", "AND", "OR", "AS", "JOIN", "ON",
             "IN", "BETWEEN", "LIKE", "COUNT", "MIN", "NOT"}


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    # -- token helpers ------------------------------------------------------

    def peek(self):
        return self.tokens[self.i]

    def pos(self):
        return self.tokens[self.i][2]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def at_keyword(self, word: str) -> bool:
        kind, value, _ = self.peek()
        return kind == "ident" and value.upper() == word

    def accept_keyword(self, word: str) -> bool:
        if self.at_keyword(word):
            self.advance()
            return True
        return False

    def expect_keyword(self, word: str):
        if not self.accept_keyword(word):
            raise ParseError(f"expected {word}", self.pos())

    def accept_op(self, op: str) -> bool:
        kind, value, _ = self.peek()
        if kind == "op" and value == op:
            self.advance()
            return True
        return False

    def expect_op(self, op: str):
        if not self.accept_op(op):
            raise ParseError(f"expected {op!r}", self.pos())

    def expect_ident(self) -> str:
        kind, value, pos = self.peek()
        if kind != "ident" or value.upper() in _KEYWORDS:
            raise ParseError("expected identifier", pos)
        self.advance()
        return value

    # -- grammar -------------------------------------------------------------

    def parse_query(self, top_level: bool = True):
        self.expect_keyword("SELECT")
        output, projections = self.parse_select_list(top_level)
        self.expect_keyword("FROM")
        aliases, joins, selections, renames = self.parse_from_clause()
        if self.accept_keyword("WHERE"):
            self.parse_conjunction(aliases, renames, joins, selections)
        if top_level:
            kind, _, pos = self.peek()
            if kind != "eof":
                raise ParseError("trailing input after query", pos)
        if output is not None:
            output = self._resolve_output(output, renames, aliases)
        if projections is not None:
            projections = {
                name: self._resolve_column(col, renames, aliases, 0)
                for name, col in projections.items()
            }
        return output, projections, aliases, joins, selections, renames

    def parse_select_list(self, top_level: bool):
        if self.at_keyword("COUNT"):
            self.advance()
            self.expect_op("(")
            self.expect_op("*")
            self.expect_op(")")
            return OutputSpec("count"), None
        if self.at_keyword("MIN"):
            cols = []
            while True:
                self.expect_keyword("MIN")
                self.expect_op("(")
                cols.append(self.parse_qualified_column())
                self.expect_op(")")
                if not self.accept_op(","):
                    break
            return OutputSpec("min", tuple(cols)), None
        if top_level:
            raise UnsupportedConstructError(
                "top-level select list must be COUNT(*) or MIN(...)", self.pos())
        # Subquery projection list: alias.col AS name, ...
        projections = {}
        while True:
            col = self.parse_qualified_column()
            self.expect_keyword("AS")
            name = self.expect_ident()
            projections[name] = col
            if not self.accept_op(","):
                break
        return None, projections

    def parse_qualified_column(self) -> tuple[str, str]:
        alias = self.expect_ident()
        self.expect_op(".")
        column = self.expect_ident()
        return alias, column

    def parse_from_clause(self):
        aliases: dict[str, str] = {}
        joins: list[JoinPredicate] = []
        selections: list[SelectionPredicate] = []
        renames: dict[str, dict[str, tuple[str, str]]] = {}
        deferred_on: list[list] = []
        while True:
            self.parse_join_chain(aliases, joins, selections, renames, deferred_on)
            if not self.accept_op(","):
                break
        # ON conjuncts were collected before later subqueries existed; resolve now.
        for raw in deferred_on:
            self.classify_predicate(raw, aliases, renames, joins, selections)
        return aliases, joins, selections, renames

    def parse_join_chain(self, aliases, joins, selections, renames, deferred_on):
        self.parse_from_primary(aliases, joins, selections, renames)
        while self.accept_keyword("JOIN"):
            self.parse_from_primary(aliases, joins, selections, renames)
            self.expect_keyword("ON")
            while True:
                deferred_on.append(self.parse_raw_predicate())
                if not self.accept_keyword("AND"):
                    break

    def parse_from_primary(self, aliases, joins, selections, renames):
        if self.accept_op("("):
            if self.at_keyword("SELECT"):
                _, projections, sub_aliases, sub_joins, sub_sels, sub_renames = \
                    self.parse_query(top_level=False)
                self.expect_op(")")
                self.accept_keyword("AS")
                name = self.expect_ident()
                for a, t in sub_aliases.items():
                    if a in aliases:
                        raise ParseError(f"duplicate alias {a!r}", self.pos())
                    aliases[a] = t
                joins.extend(sub_joins)
                selections.extend(sub_sels)
                renames[name] = projections or {}
                return
            raise UnsupportedConstructError("parenthesized FROM items are not supported",
                                            self.pos())
        table = self.expect_ident()
        if self.accept_keyword("AS"):
            alias = self.expect_ident()
        else:
            kind, value, _ = self.peek()
            if kind == "ident" and value.upper() not in _KEYWORDS:
                alias = self.expect_ident()
            else:
                alias = table
        if alias in aliases:
            raise ParseError(f"duplicate alias {alias!r}", self.pos())
        aliases[alias] = table

    def parse_conjunction(self, aliases, renames, joins, selections):
        while True:
            raw = self.parse_raw_predicate()
            self.classify_predicate(raw, aliases, renames, joins, selections)
            if self.accept_keyword("AND"):
                continue
            if self.at_keyword("OR"):
                raise UnsupportedConstructError("disjunctions are not supported", self.pos())
            break

    def parse_raw_predicate(self):
        if self.at_keyword("SELECT"):
            raise UnsupportedConstructError("subqueries in predicates are not supported",
                                            self.pos())
        left = self.parse_qualified_column()
        if self.accept_keyword("IN"):
            self.expect_op("(")
            if self.at_keyword("SELECT"):
                raise UnsupportedConstructError("IN subqueries are not supported", self.pos())
            values = [self.parse_literal()]
            while self.accept_op(","):
                values.append(self.parse_literal())
            self.expect_op(")")
            if not values:
                raise ParseError("IN list must be non-empty", self.pos())
            return ("IN", left, tuple(values))
        if self.accept_keyword("BETWEEN"):
            lo = self.parse_literal()
            self.expect_keyword("AND")
            hi = self.parse_literal()
            return ("BETWEEN", left, (lo, hi))
        if self.accept_keyword("LIKE"):
            kind, value, pos = self.peek()
            if kind != "string":
                raise ParseError("LIKE pattern must be a string literal", pos)
            self.advance()
            return ("LIKE", left, (_unquote(value),))
        for op in ("<=", ">=", "<>", "=", "<", ">"):
            if self.accept_op(op):
                kind, value, pos = self.peek()
                if kind == "ident":
                    right = self.parse_qualified_column()
                    return ("join", op, left, right, pos)
                return (op, left, (self.parse_literal(),))
        raise ParseError("expected comparison operator", self.pos())

    def parse_literal(self):
        kind, value, pos = self.peek()
        if kind == "int":
            self.advance()
            return int(value)
        if kind == "string":
            self.advance()
            return _unquote(value)
        raise ParseError("expected literal", pos)

    def classify_predicate(self, raw, aliases, renames, joins, selections):
        if raw[0] == "join":
            _, op, left, right, pos = raw
            left = self._resolve_column(left, renames, aliases, pos)
            right = self._resolve_column(right, renames, aliases, pos)
            if op != "=":
                raise UnsupportedConstructError(
                    f"non-equality join predicate {op!r} is not supported", pos)
            if left[0] == right[0]:
                raise UnsupportedConstructError(
                    "column-to-column predicates within one alias are not supported", pos)
            joins.append(JoinPredicate(left[0], left[1], right[0], right[1]).normalized())
        else:
            op, col, operands = raw
            col = self._resolve_column(col, renames, aliases, self.pos())
            if op == "BETWEEN" and operands[0] > operands[1]:
                raise ParseError("BETWEEN bounds out of order", self.pos())
            selections.append(SelectionPredicate(col[0], col[1], op, tuple(operands)))

    def _resolve_column(self, col, renames, aliases, pos):
        alias, column = col
        if alias in renames:
            try:
                return renames[alias][column]
            except KeyError:
                raise ParseError(
                    f"subquery {alias!r} does not project column {column!r}", pos
                ) from None
        if alias not in aliases:
            raise ParseError(f"unknown alias {alias!r}", pos)
        return alias, column

    def _resolve_output(self, output: OutputSpec, renames, aliases) -> OutputSpec:
        if output.kind == "count":
            return output
        cols = tuple(self._resolve_column(c, renames, aliases, 0) for c in output.columns)
        return OutputSpec("min", cols)


def parse_query(text: str) -> QuerySpec:
    """Parse one statement of the dialect into a QuerySpec."""
    parser = _Parser(tokenize(text))
    output, _, aliases, joins, selections, _ = parser.parse_query(top_level=True)
    return QuerySpec(aliases=aliases, selections=selections, joins=joins, output=output)


def render_query(spec: QuerySpec) -> str:
    """Render a QuerySpec in the flat comma-FROM form of the dialect."""
    from_items = ", ".join(f"{t} AS {a}" for a, t in sorted(spec.aliases.items()))
    conjuncts = [p.render() for p in spec.joins] + [p.render() for p in spec.selections]
    sql = f"SELECT {spec.output.render()} FROM {from_items}"
    if conjuncts:
        sql += " WHERE " + " AND ".join(conjuncts)
    return sql


def _render_literal(value) -> str:
    if isinstance(value, str):
        return "'" + value.replace("'", "''") + "'"
    return str(value)


def _unquote(raw: str) -> str:
    return raw[1:-1].replace("''", "'")


def validate_spec(spec: QuerySpec, catalog: Catalog) -> None:
    """Check alias/column resolution and operand dtypes against the catalog."""
    for alias, table in spec.aliases.items():
        catalog.table(table)
    for p in spec.selections:
        table = _alias_table(spec, p.alias)
        cdef = catalog.table(table).column(p.column)
        if p.op == "LIKE" and cdef.dtype != TEXT:
            raise ParseError(f"LIKE on non-text column {p.alias}.{p.column}", 0)
        for v in p.operands:
            if cdef.dtype == INT64 and not isinstance(v, int):
                raise ParseError(
                    f"operand {v!r} does not match int64 column {p.alias}.{p.column}", 0)
            if cdef.dtype == TEXT and not isinstance(v, str):
                raise ParseError(
                    f"operand {v!r} does not match text column {p.alias}.{p.column}", 0)
    for p in spec.joins:
        lt = catalog.table(_alias_table(spec, p.left_alias)).column(p.left_column)
        rt = catalog.table(_alias_table(spec, p.right_alias)).column(p.right_column)
        if lt.dtype != rt.dtype:
            raise ParseError(
                f"join {p.render()} compares {lt.dtype} with {rt.dtype}", 0)


def _alias_table(spec: QuerySpec, alias: str) -> str:
    try:
        return spec.aliases[alias]
    except KeyError:
        raise ParseError(f"unknown alias {alias!r}", 0) from None


def build_join_graph(spec: QuerySpec, catalog: Catalog) -> JoinGraph:
    """Construct the typed join graph for a query.

    Edge typing is a pure function of declared key metadata: an endpoint is
    "keyish" when any predicate of the edge touches a declared key column on
    that side.  Exactly one keyish endpoint makes a 1:n edge directed to the
    key side; both make 1:1; neither, m:n.
    """
    validate_spec(spec, catalog)
    vertices = {a: catalog.row_count(t) for a, t in spec.aliases.items()}
    grouped: dict[tuple[str, str], list[JoinPredicate]] = {}
    for p in spec.joins:
        p = p.normalized()
        grouped.setdefault((p.left_alias, p.right_alias), []).append(p)
    edges = []
    for (a, b), preds in sorted(grouped.items()):
        preds = tuple(sorted(set(preds), key=lambda p: (p.left_column, p.right_column)))
        a_key = any(
            catalog.table(spec.aliases[a]).column(p.side(a)).is_key for p in preds
        )
        b_key = any(
            catalog.table(spec.aliases[b]).column(p.side(b)).is_key for p in preds
        )
        if a_key and b_key:
            kind, key_side = ONE_TO_ONE, None
        elif a_key or b_key:
            kind, key_side = ONE_TO_MANY, (a if a_key else b)
        else:
            kind, key_side = MANY_TO_MANY, None
        edges.append(JoinEdge(a, b, preds, kind, key_side))
    return JoinGraph(vertices, edges)


def connected(graph: JoinGraph, alias_set) -> bool:
    """True iff the induced subgraph on ``alias_set`` is connected."""
    members = set(alias_set)
    unknown = members - set(graph.vertices)
    if unknown:
        raise KeyError(f"unknown aliases {sorted(unknown)!r}")
    if len(members) <= 1:
        return True
    start = next(iter(members))
    seen = {start}
    frontier = [start]
    while frontier:
        a = frontier.pop()
        for e in graph.edges_of(a):
            other = e.other(a)
            if other in members and other not in seen:
                seen.add(other)
                frontier.append(other)
    return seen == members
