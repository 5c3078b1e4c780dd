"""Deterministic synthetic datasets: dimensions, facts, skew, and inclusion.

A dataset is a star/snowflake-ish schema: dimension tables with integer key
columns, fact tables with foreign-key columns drawn from those keys, plus
optional shared key columns that connect facts to each other without any
key declaration (the m:n edges).  Zipf skew is configurable per column
(``skew == 0`` assigns values in exactly balanced counts, so frequencies
are uniform to within one row), inclusion controls the fraction of
foreign-key rows guaranteed to reference an existing dimension key, and
correlation links a value column to a foreign-key column to break the
estimator's independence assumption.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .catalog import (Catalog, ColumnDef, ForeignKey, Relation, TableDef,
                      load_schema, save_schema, save_table_csv)


@dataclass
class AttrSpec:
    name: str
    kind: str = "int"  # "int" or "text"
    domain: int = 100  # distinct values (vocabulary size for text)
    skew: float = 0.0
    correlate_with: str = ""  # fk/shared column of the same table
    correlation: float = 0.0


@dataclass
class FkSpec:
    column: str
    dim: str
    skew: float = 0.0
    inclusion: float = 1.0


@dataclass
class SharedKeySpec:
    column: str
    domain: int
    skew: float = 0.0


@dataclass
class DimSpec:
    name: str
    rows: int
    attrs: list[AttrSpec] = field(default_factory=list)


@dataclass
class FactSpec:
    name: str
    rows: int
    fks: list[FkSpec] = field(default_factory=list)
    shared: list[SharedKeySpec] = field(default_factory=list)
    attrs: list[AttrSpec] = field(default_factory=list)


@dataclass
class GeneratorConfig:
    seed: int
    dims: list[DimSpec] = field(default_factory=list)
    facts: list[FactSpec] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "GeneratorConfig":
        doc = json.loads(text)
        return cls(
            seed=doc["seed"],
            dims=[DimSpec(name=d["name"], rows=d["rows"],
                          attrs=[AttrSpec(**a) for a in d.get("attrs", [])])
                  for d in doc.get("dims", [])],
            facts=[FactSpec(name=f["name"], rows=f["rows"],
                            fks=[FkSpec(**k) for k in f.get("fks", [])],
                            shared=[SharedKeySpec(**s) for s in f.get("shared", [])],
                            attrs=[AttrSpec(**a) for a in f.get("attrs", [])])
                   for f in doc.get("facts", [])],
        )


def zipf_indices(rng: np.random.Generator, domain: int, skew: float, n: int) -> np.ndarray:
    """n draws from {0..domain-1}; balanced round-robin at skew 0, else
    Zipf(skew) via inverse-CDF sampling."""
    if domain < 1:
        raise ValueError("domain must be positive")
    if n == 0:
        return np.array([], dtype=np.int64)
    if skew == 0:
        reps = -(-n // domain)
        values = np.tile(np.arange(domain, dtype=np.int64), reps)[:n]
        return rng.permutation(values)
    weights = 1.0 / np.power(np.arange(1, domain + 1, dtype=np.float64), skew)
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    return np.searchsorted(cdf, rng.random(n)).astype(np.int64)


def _text_values(indices: np.ndarray, vocab: int) -> np.ndarray:
    width = max(len(str(vocab - 1)), 3)
    words = np.array([f"w{k:0{width}d}" for k in range(vocab)])
    return words[indices] if len(indices) else np.array([], dtype="<U4")


def _attr_column(rng, spec: AttrSpec, n: int, anchors: dict[str, np.ndarray]) -> np.ndarray:
    idx = zipf_indices(rng, spec.domain, spec.skew, n)
    if spec.correlate_with and spec.correlation > 0:
        anchor = anchors[spec.correlate_with]
        linked = rng.random(n) < spec.correlation
        idx = np.where(linked, anchor % spec.domain, idx)
    if spec.kind == "text":
        return _text_values(idx, spec.domain)
    return idx.astype(np.int64)


def build_catalog(config: GeneratorConfig, setting: str = "non_indexed") -> Catalog:
    """Generate all relations in memory.  Deterministic for a fixed config."""
    rng = np.random.default_rng(config.seed)
    catalog = Catalog(setting=setting)

    dim_keys: dict[str, np.ndarray] = {}
    for dim in config.dims:
        cols: list[ColumnDef] = [ColumnDef("id", "int64", is_key=True)]
        data: dict[str, np.ndarray] = {"id": np.arange(1, dim.rows + 1, dtype=np.int64)}
        dim_keys[dim.name] = data["id"]
        for attr in dim.attrs:
            cols.append(ColumnDef(attr.name, "text" if attr.kind == "text" else "int64"))
            data[attr.name] = _attr_column(rng, attr, dim.rows, {})
        catalog.add_table(TableDef(dim.name, tuple(cols), primary_key="id"))
        catalog.set_relation(Relation.from_columns(catalog.table(dim.name), data))

    for fact in config.facts:
        cols = []
        data = {}
        fks = []
        anchors: dict[str, np.ndarray] = {}
        for fk in fact.fks:
            keys = dim_keys[fk.dim]
            idx = zipf_indices(rng, len(keys), fk.skew, fact.rows)
            values = keys[idx]
            if fk.inclusion < 1.0:
                # Rows beyond the inclusion fraction reference ids that no
                # dimension row carries.
                n_missing = fact.rows - int(round(fact.rows * fk.inclusion))
                if n_missing > 0:
                    where = rng.permutation(fact.rows)[:n_missing]
                    phantom = len(keys) + 1 + zipf_indices(
                        rng, max(len(keys) // 10, 1), fk.skew, n_missing)
                    values = values.copy()
                    values[where] = phantom
            cols.append(ColumnDef(fk.column, "int64"))
            data[fk.column] = values
            anchors[fk.column] = values
            fks.append(ForeignKey(fact.name, fk.column, fk.dim, "id"))
        for shared in fact.shared:
            cols.append(ColumnDef(shared.column, "int64"))
            values = 1 + zipf_indices(rng, shared.domain, shared.skew, fact.rows)
            data[shared.column] = values
            anchors[shared.column] = values
        for attr in fact.attrs:
            cols.append(ColumnDef(attr.name, "text" if attr.kind == "text" else "int64"))
            data[attr.name] = _attr_column(rng, attr, fact.rows, anchors)
        catalog.add_table(TableDef(fact.name, tuple(cols), foreign_keys=tuple(fks)))
        catalog.set_relation(Relation.from_columns(catalog.table(fact.name), data))
    return catalog


def generate_dataset(config: GeneratorConfig, out_dir) -> Path:
    """Write schema.json plus one CSV per table; returns the directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    catalog = build_catalog(config)
    (out / "schema.json").write_text(save_schema(catalog), encoding="utf-8")
    for name in sorted(catalog.relations):
        save_table_csv(catalog, name, out / f"{name}.csv")
    return out


def load_dataset(data_dir, setting: str = "non_indexed") -> Catalog:
    """Load a generated dataset directory into a catalog (indexes included
    when the setting asks for them)."""
    from .catalog import build_indexes, load_table_csv

    data = Path(data_dir)
    catalog = load_schema((data / "schema.json").read_text(encoding="utf-8"),
                          setting=setting)
    for name in sorted(catalog.table_defs):
        load_table_csv(data / f"{name}.csv", name, catalog)
    build_indexes(catalog)
    return catalog
