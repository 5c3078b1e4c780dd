"""Schemas, key/foreign-key constraints, and in-memory columnar relations.

A catalog holds table definitions plus column data loaded from CSV files or
built by the synthetic generator.  Storage is columnar: each column is a
numpy array and rows are addressed by position.  Key columns can carry an
equality index (value -> row positions), the only index kind the engine
uses since every join predicate in the dialect is an equality.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

import numpy as np

INT64 = "int64"
TEXT = "text"

INDEXED = "indexed"
NON_INDEXED = "non_indexed"


class SchemaError(ValueError):
    """Raised for malformed or inconsistent schema documents."""


class DataError(ValueError):
    """Raised for malformed table data (bad header, bad cell, duplicate key)."""


@dataclass(frozen=True)
class ColumnDef:
    name: str
    dtype: str  # INT64 or TEXT
    is_key: bool = False


@dataclass(frozen=True)
class ForeignKey:
    from_table: str
    from_column: str
    to_table: str
    to_column: str


@dataclass(frozen=True)
class TableDef:
    name: str
    columns: tuple[ColumnDef, ...]
    primary_key: Optional[str] = None
    foreign_keys: tuple[ForeignKey, ...] = ()

    def column(self, name: str) -> ColumnDef:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"table {self.name!r} has no column {name!r}")

    def has_column(self, name: str) -> bool:
        return any(c.name == name for c in self.columns)

    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]


@dataclass
class Relation:
    """Column data for one table.  All arrays share the same length."""

    table: TableDef
    columns: dict[str, np.ndarray]
    row_count: int

    @classmethod
    def from_columns(cls, table: TableDef, columns: dict[str, Any]) -> "Relation":
        arrays = {}
        n = None
        for cdef in table.columns:
            if cdef.name not in columns:
                raise DataError(f"missing column {cdef.name!r} for table {table.name!r}")
            arr = _as_column_array(columns[cdef.name], cdef.dtype)
            if n is None:
                n = len(arr)
            elif len(arr) != n:
                raise DataError(
                    f"column {cdef.name!r} of table {table.name!r} has "
                    f"{len(arr)} values, expected {n}"
                )
            arrays[cdef.name] = arr
        return cls(table=table, columns=arrays, row_count=n or 0)


def _as_column_array(values: Any, dtype: str) -> np.ndarray:
    if dtype == INT64:
        return np.asarray(values, dtype=np.int64)
    arr = np.asarray(values)
    if arr.dtype.kind != "U":
        arr = arr.astype(str) if arr.size else np.asarray([], dtype="<U1")
    return arr


class EqualityIndex:
    """Unclustered equality lookup: column value -> array of row positions.

    Internally a sorted-unique value array with grouped positions, so both
    scalar lookups and vectorized batch probes are cheap.
    """

    def __init__(self, table: str, column: str, values: np.ndarray):
        self.table = table
        self.column = column
        order = np.argsort(values, kind="stable")
        sorted_vals = values[order]
        if len(sorted_vals):
            uniq_mask = np.empty(len(sorted_vals), dtype=bool)
            uniq_mask[0] = True
            np.not_equal(sorted_vals[1:], sorted_vals[:-1], out=uniq_mask[1:])
            self.values = sorted_vals[uniq_mask]
            self.starts = np.flatnonzero(uniq_mask)
            self.ends = np.append(self.starts[1:], len(sorted_vals))
        else:
            self.values = sorted_vals
            self.starts = np.array([], dtype=np.int64)
            self.ends = np.array([], dtype=np.int64)
        self.positions = order  # grouped by value, ascending

    def lookup(self, value) -> np.ndarray:
        i = np.searchsorted(self.values, value)
        if i >= len(self.values) or self.values[i] != value:
            return np.array([], dtype=np.int64)
        return self.positions[self.starts[i]:self.ends[i]]

    def batch_ranges(self, keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-key (start, end) ranges into ``positions``; empty range = miss."""
        i = np.searchsorted(self.values, keys)
        i = np.minimum(i, max(len(self.values) - 1, 0))
        if len(self.values):
            hit = self.values[i] == keys
            starts = np.where(hit, self.starts[i], 0)
            ends = np.where(hit, self.ends[i], 0)
        else:
            starts = np.zeros(len(keys), dtype=np.int64)
            ends = starts
        return starts, ends


@dataclass
class KeyViolation:
    table: str
    column: str
    value: Any
    count: int


@dataclass
class InclusionViolation:
    foreign_key: ForeignKey
    missing_rows: int
    sample_values: tuple


@dataclass
class ConstraintReport:
    key_violations: list[KeyViolation] = field(default_factory=list)
    inclusion_violations: list[InclusionViolation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.key_violations and not self.inclusion_violations


class Catalog:
    """Tables, relations, and equality indexes under one setting.

    Immutable after loading and index building; safe for concurrent reads.
    """

    def __init__(self, setting: str = NON_INDEXED):
        if setting not in (INDEXED, NON_INDEXED):
            raise ValueError(f"unknown setting {setting!r}")
        self.setting = setting
        self.table_defs: dict[str, TableDef] = {}
        self.relations: dict[str, Relation] = {}
        self.indexes: dict[tuple[str, str], EqualityIndex] = {}

    # -- schema ------------------------------------------------------------

    def add_table(self, table: TableDef) -> None:
        if table.name in self.table_defs:
            raise SchemaError(f"duplicate table name {table.name!r}")
        self.table_defs[table.name] = table

    def table(self, name: str) -> TableDef:
        try:
            return self.table_defs[name]
        except KeyError:
            raise SchemaError(f"unknown table {name!r}") from None

    def table_names(self) -> list[str]:
        return sorted(self.table_defs)

    # -- data ---------------------------------------------------------------

    def set_relation(self, relation: Relation) -> None:
        self.relations[relation.table.name] = relation

    def relation(self, name: str) -> Relation:
        self.table(name)
        try:
            return self.relations[name]
        except KeyError:
            raise DataError(f"table {name!r} has no data loaded") from None

    def row_count(self, name: str) -> int:
        return self.relation(name).row_count

    def column(self, table: str, column: str) -> np.ndarray:
        rel = self.relation(table)
        if column not in rel.columns:
            raise SchemaError(f"table {table!r} has no column {column!r}")
        return rel.columns[column]

    # -- indexes -------------------------------------------------------------

    def has_index(self, table: str, column: str) -> bool:
        return (table, column) in self.indexes

    def index(self, table: str, column: str) -> EqualityIndex:
        try:
            return self.indexes[(table, column)]
        except KeyError:
            raise DataError(f"no index on {table}.{column}") from None


def load_schema(document: str | dict, setting: str = NON_INDEXED) -> Catalog:
    """Parse a schema document into a catalog with no data loaded.

    The document is JSON with the shape::

        {"tables": [{"name": ..., "columns": [{"name", "type", "key"}],
                     "primary_key": ..., "foreign_keys":
                     [{"column", "ref_table", "ref_column"}]}]}
    """
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError(
                f"schema parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
            ) from None
    else:
        doc = document
    if not isinstance(doc, dict) or "tables" not in doc:
        raise SchemaError("schema document must be an object with a 'tables' list")

    catalog = Catalog(setting=setting)
    fk_specs: list[tuple[str, dict]] = []
    for tdoc in doc["tables"]:
        name = tdoc["name"]
        cols = []
        seen = set()
        for cdoc in tdoc.get("columns", []):
            cname, ctype = cdoc["name"], cdoc.get("type", INT64)
            if ctype not in (INT64, TEXT):
                raise SchemaError(f"{name}.{cname}: unknown type {ctype!r}")
            if cname in seen:
                raise SchemaError(f"duplicate column {cname!r} in table {name!r}")
            seen.add(cname)
            cols.append(ColumnDef(cname, ctype, bool(cdoc.get("key", False))))
        pk = tdoc.get("primary_key")
        if pk is not None:
            pk_def = next((c for c in cols if c.name == pk), None)
            if pk_def is None:
                raise SchemaError(f"primary key {pk!r} is not a column of {name!r}")
            if not pk_def.is_key:
                raise SchemaError(f"primary key {name}.{pk} must be declared key")
        catalog.add_table(TableDef(name=name, columns=tuple(cols), primary_key=pk))
        for fdoc in tdoc.get("foreign_keys", []):
            fk_specs.append((name, fdoc))

    # Foreign keys resolve after all tables exist; schemas may be cyclic.
    fks_by_table: dict[str, list[ForeignKey]] = {t: [] for t in catalog.table_defs}
    for tname, fdoc in fk_specs:
        fk = ForeignKey(tname, fdoc["column"], fdoc["ref_table"], fdoc["ref_column"])
        src = catalog.table(tname)
        if not src.has_column(fk.from_column):
            raise SchemaError(f"foreign key column {tname}.{fk.from_column} does not exist")
        if fk.to_table not in catalog.table_defs:
            raise SchemaError(
                f"foreign key {tname}.{fk.from_column} references missing table {fk.to_table!r}"
            )
        target = catalog.table(fk.to_table)
        if not target.has_column(fk.to_column):
            raise SchemaError(
                f"foreign key {tname}.{fk.from_column} references missing column "
                f"{fk.to_table}.{fk.to_column}"
            )
        if not target.column(fk.to_column).is_key:
            raise SchemaError(
                f"foreign key target {fk.to_table}.{fk.to_column} is not a key column"
            )
        fks_by_table[tname].append(fk)
    for tname, fks in fks_by_table.items():
        old = catalog.table_defs[tname]
        catalog.table_defs[tname] = TableDef(
            name=old.name, columns=old.columns, primary_key=old.primary_key,
            foreign_keys=tuple(fks),
        )
    return catalog


def save_schema(catalog: Catalog) -> str:
    doc = {"tables": []}
    for name in sorted(catalog.table_defs):
        t = catalog.table_defs[name]
        doc["tables"].append({
            "name": t.name,
            "columns": [{"name": c.name, "type": c.dtype, "key": c.is_key}
                        for c in t.columns],
            "primary_key": t.primary_key,
            "foreign_keys": [{"column": f.from_column, "ref_table": f.to_table,
                              "ref_column": f.to_column}
                             for f in t.foreign_keys],
        })
    return json.dumps(doc, indent=2)


def load_table_csv(path, table: str, catalog: Catalog) -> Catalog:
    """Load one table's data from a CSV file (header row required)."""
    tdef = catalog.table(table)
    expected = tdef.column_names()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header expected") from None
        if header != expected:
            raise DataError(f"{path}: header {header!r} does not match schema columns {expected!r}")
        raw_cols: list[list[str]] = [[] for _ in expected]
        for row in reader:
            if len(row) != len(expected):
                raise DataError(f"{path}: row {reader.line_num} has {len(row)} fields, expected {len(expected)}")
            for i, cell in enumerate(row):
                raw_cols[i].append(cell)

    arrays: dict[str, np.ndarray] = {}
    for i, cdef in enumerate(tdef.columns):
        if cdef.dtype == INT64:
            try:
                arrays[cdef.name] = (
                    np.asarray(raw_cols[i], dtype=np.int64) if raw_cols[i]
                    else np.array([], dtype=np.int64)
                )
            except (ValueError, OverflowError):
                for rownum, cell in enumerate(raw_cols[i]):
                    try:
                        int(cell)
                    except ValueError:
                        raise DataError(
                            f"{path}: cannot parse {cell!r} as int64 at row "
                            f"{rownum + 2}, column {cdef.name!r}"
                        ) from None
                raise
        else:
            arrays[cdef.name] = (
                np.asarray(raw_cols[i]) if raw_cols[i] else np.array([], dtype="<U1")
            )

    relation = Relation.from_columns(tdef, arrays)
    for cdef in tdef.columns:
        if cdef.is_key:
            dup = _first_duplicate(relation.columns[cdef.name])
            if dup is not None:
                raise DataError(
                    f"{path}: duplicate value {dup!r} in key column {table}.{cdef.name}"
                )
    catalog.set_relation(relation)
    return catalog


def save_table_csv(catalog: Catalog, table: str, path) -> None:
    rel = catalog.relation(table)
    names = rel.table.column_names()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        cols = [rel.columns[n].tolist() for n in names]
        writer.writerows(zip(*cols) if rel.row_count else [])


def _first_duplicate(values: np.ndarray):
    if len(values) < 2:
        return None
    sorted_vals = np.sort(values, kind="stable")
    dup_mask = sorted_vals[1:] == sorted_vals[:-1]
    if dup_mask.any():
        return sorted_vals[1:][dup_mask][0].item()
    return None


def build_indexes(catalog: Catalog) -> Catalog:
    """Build equality indexes on every primary-key and foreign-key column.

    A no-op in the non-indexed setting.  Idempotent.
    """
    if catalog.setting != INDEXED:
        return catalog
    targets: set[tuple[str, str]] = set()
    for t in catalog.table_defs.values():
        if t.primary_key:
            targets.add((t.name, t.primary_key))
        for fk in t.foreign_keys:
            targets.add((fk.from_table, fk.from_column))
            targets.add((fk.to_table, fk.to_column))
    for table, column in sorted(targets):
        if (table, column) in catalog.indexes:
            continue
        catalog.indexes[(table, column)] = EqualityIndex(
            table, column, catalog.column(table, column)
        )
    return catalog


def validate_constraints(catalog: Catalog, check_inclusion: bool = True) -> ConstraintReport:
    """Report key-uniqueness violations and (optionally) FK-inclusion gaps.

    Report-only: partial inclusion is a legitimate dataset property that the
    estimation experiments rely on, so nothing is raised here.
    """
    report = ConstraintReport()
    for name in sorted(catalog.relations):
        rel = catalog.relations[name]
        for cdef in rel.table.columns:
            if not cdef.is_key:
                continue
            values = rel.columns[cdef.name]
            if len(values) < 2:
                continue
            sorted_vals = np.sort(values, kind="stable")
            dup_mask = sorted_vals[1:] == sorted_vals[:-1]
            if dup_mask.any():
                for v in np.unique(sorted_vals[1:][dup_mask]):
                    count = int((values == v).sum())
                    report.key_violations.append(
                        KeyViolation(name, cdef.name, v.item(), count)
                    )
    if check_inclusion:
        for name in sorted(catalog.relations):
            rel = catalog.relations[name]
            for fk in rel.table.foreign_keys:
                if fk.to_table not in catalog.relations:
                    continue
                have = rel.columns[fk.from_column]
                want = catalog.column(fk.to_table, fk.to_column)
                missing = ~np.isin(have, want)
                if missing.any():
                    samples = tuple(np.unique(have[missing])[:5].tolist())
                    report.inclusion_violations.append(
                        InclusionViolation(fk, int(missing.sum()), samples)
                    )
    return report
