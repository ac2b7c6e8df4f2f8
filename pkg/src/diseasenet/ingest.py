"""Loading, validating and joining the per-layer input tables.

Every CSV travels with a YAML sidecar that names the participant ID column,
the missing-value tokens and, for each data column, its group, kind and
units::

    id_column: pid
    missing_tokens: ["", "NA", "NaN"]
    columns:
      bmi07: {group: risk_factor, kind: continuous, units: kg/m2}
      SP: {group: risk_factor, kind: categorical}
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

from .errors import EmptyJoinError, ParseError, SchemaError

DEFAULT_MISSING_TOKENS = ("", "NA", "NaN")


class Group(str, enum.Enum):
    METABOLOME = "metabolome"
    LIPIDOME = "lipidome"
    CVD_PHENOTYPE = "cvd_phenotype"
    DEPRESSIVE_SYMPTOM = "depressive_symptom"
    RISK_FACTOR = "risk_factor"

    @property
    def is_biomarker(self) -> bool:
        return self in BIOMARKER_GROUPS


BIOMARKER_GROUPS = frozenset({Group.METABOLOME, Group.LIPIDOME})
PHENOTYPE_GROUPS = frozenset({Group.CVD_PHENOTYPE, Group.DEPRESSIVE_SYMPTOM})


class Kind(str, enum.Enum):
    CONTINUOUS = "continuous"
    DISCRETE_ORDINAL = "discrete_ordinal"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class VariableMeta:
    name: str
    group: Group
    kind: Kind
    units: str = ""

    def to_dict(self) -> dict[str, str]:
        out = {"group": self.group.value, "kind": self.kind.value}
        if self.units:
            out["units"] = self.units
        return out


@dataclass(frozen=True)
class TableSchema:
    id_column: str
    columns: tuple[VariableMeta, ...]
    missing_tokens: tuple[str, ...] = DEFAULT_MISSING_TOKENS

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(m.name for m in self.columns)

    def to_dict(self) -> dict:
        return {
            "id_column": self.id_column,
            "missing_tokens": list(self.missing_tokens),
            "columns": {m.name: m.to_dict() for m in self.columns},
        }


@dataclass(frozen=True, eq=False)
class Column:
    """One variable. Numeric kinds hold float64 with NaN for missing;
    categorical columns hold an object array of str with None for missing."""

    meta: VariableMeta
    values: np.ndarray

    @property
    def missing_mask(self) -> np.ndarray:
        if self.values.dtype == object:
            return np.array([v is None for v in self.values], dtype=bool)
        return np.isnan(self.values)

    @property
    def missingness(self) -> float:
        n = len(self.values)
        return float(self.missing_mask.sum()) / n if n else 0.0


@dataclass(frozen=True, eq=False)
class DataTable:
    participant_ids: tuple[str, ...]
    columns: tuple[Column, ...]
    id_column: str = "id"
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.participant_ids)
        if len(set(self.participant_ids)) != n:
            seen: set[str] = set()
            dups = sorted({p for p in self.participant_ids if p in seen or seen.add(p)})
            raise SchemaError(f"duplicate participant ids: {dups[:5]}", tuple(dups))
        names = [c.meta.name for c in self.columns]
        if len(set(names)) != len(names):
            dups = sorted({x for x in names if names.count(x) > 1})
            raise SchemaError(f"duplicate variable names: {dups}", tuple(dups))
        for col in self.columns:
            if len(col.values) != n:
                raise SchemaError(
                    f"column {col.meta.name!r} has {len(col.values)} values, expected {n}",
                    (col.meta.name,),
                )
            col.values.setflags(write=False)
        object.__setattr__(self, "_index", {name: i for i, name in enumerate(names)})

    @property
    def n_rows(self) -> int:
        return len(self.participant_ids)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.meta.name for c in self.columns)

    @property
    def meta(self) -> tuple[VariableMeta, ...]:
        return tuple(c.meta for c in self.columns)

    def column(self, name: str) -> Column:
        return self.columns[self._index[name]]

    def missingness(self) -> dict[str, float]:
        return {c.meta.name: c.missingness for c in self.columns}

    def schema(self) -> TableSchema:
        return TableSchema(self.id_column, self.meta)

    def select_rows(self, ids: Sequence[str]) -> "DataTable":
        pos = {pid: i for i, pid in enumerate(self.participant_ids)}
        idx = np.array([pos[p] for p in ids], dtype=np.intp)
        cols = tuple(Column(c.meta, c.values[idx]) for c in self.columns)
        return DataTable(tuple(ids), cols, self.id_column)


def _enum_value(enum_cls, raw, column: str, field_name: str):
    try:
        return enum_cls(raw)
    except ValueError:
        allowed = ", ".join(e.value for e in enum_cls)
        raise SchemaError(
            f"column {column!r}: invalid {field_name} {raw!r} (allowed: {allowed})", (column,)
        ) from None


def parse_schema(doc: Mapping) -> TableSchema:
    if not isinstance(doc, Mapping):
        raise SchemaError("schema must be a mapping")
    id_column = doc.get("id_column")
    if not id_column:
        raise SchemaError("schema is missing 'id_column'")
    tokens = tuple(str(t) for t in doc.get("missing_tokens", DEFAULT_MISSING_TOKENS))
    raw_cols = doc.get("columns")
    if not isinstance(raw_cols, Mapping) or not raw_cols:
        raise SchemaError("schema must declare at least one column under 'columns'")
    metas = []
    for name, spec in raw_cols.items():
        name = str(name)
        spec = spec or {}
        missing = [k for k in ("group", "kind") if k not in spec]
        if missing:
            raise SchemaError(f"column {name!r} lacks {', '.join(missing)}", (name,))
        metas.append(
            VariableMeta(
                name=name,
                group=_enum_value(Group, spec["group"], name, "group"),
                kind=_enum_value(Kind, spec["kind"], name, "kind"),
                units=str(spec.get("units", "") or ""),
            )
        )
    if id_column in {m.name for m in metas}:
        raise SchemaError(f"id column {id_column!r} is also declared as a data column", (id_column,))
    return TableSchema(str(id_column), tuple(metas), tokens)


def load_schema(path: str | Path) -> TableSchema:
    with open(path, encoding="utf-8") as fh:
        return parse_schema(yaml.safe_load(fh))


def write_schema(schema: TableSchema, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(schema.to_dict(), fh, sort_keys=False)


def _parse_numeric(raw: str, row: int, column: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ParseError(
            f"cannot parse {raw!r} as a number at row {row}, column {column!r}", row, column
        ) from None
    if math.isinf(value):
        raise ParseError(f"non-finite value {raw!r} at row {row}, column {column!r}", row, column)
    return value


def load_table(path: str | Path, meta: TableSchema | str | Path) -> DataTable:
    """Read one CSV file and type its columns according to `meta`.

    Row numbers in parse errors are 1-based data rows (the header is row 0).
    """
    schema = meta if isinstance(meta, TableSchema) else load_schema(meta)
    missing_tokens = {t.strip().lower() for t in schema.missing_tokens}

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = list(reader)

    if len(set(header)) != len(header):
        dups = sorted({h for h in header if header.count(h) > 1})
        raise SchemaError(f"{path}: duplicate header columns {dups}", tuple(dups))
    expected = [schema.id_column, *schema.names]
    absent = [c for c in expected if c not in header]
    extra = [c for c in header if c not in expected]
    if absent or extra:
        parts = []
        if absent:
            parts.append(f"declared but absent from file: {', '.join(absent)}")
        if extra:
            parts.append(f"present in file but undeclared: {', '.join(extra)}")
        raise SchemaError(f"{path}: " + "; ".join(parts), tuple(absent + extra))

    pos = {h: i for i, h in enumerate(header)}
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ParseError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}", r)

    id_pos = pos[schema.id_column]
    ids = []
    for r, row in enumerate(rows, start=1):
        pid = row[id_pos].strip()
        if not pid or pid.lower() in missing_tokens:
            raise ParseError(f"{path}: missing participant id at row {r}", r, schema.id_column)
        ids.append(pid)

    columns = []
    for m in schema.columns:
        j = pos[m.name]
        if m.kind is Kind.CATEGORICAL:
            vals = np.empty(len(rows), dtype=object)
            for r, row in enumerate(rows):
                cell = row[j].strip()
                vals[r] = None if cell.lower() in missing_tokens else cell
        else:
            vals = np.empty(len(rows), dtype=np.float64)
            for r, row in enumerate(rows):
                cell = row[j].strip()
                vals[r] = np.nan if cell.lower() in missing_tokens else _parse_numeric(cell, r + 1, m.name)
        columns.append(Column(m, vals))
    return DataTable(tuple(ids), tuple(columns), schema.id_column)


def _format_cell(value) -> str:
    if value is None:
        return "NA"
    if isinstance(value, (float, np.floating)):
        if np.isnan(value):
            return "NA"
        return repr(float(value))
    return str(value)


def write_table(table: DataTable, path: str | Path, schema_path: str | Path | None = None) -> None:
    """Write `table` as CSV (missing cells as ``NA``) plus an optional sidecar."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([table.id_column, *table.names])
        for r, pid in enumerate(table.participant_ids):
            writer.writerow([pid, *(_format_cell(c.values[r]) for c in table.columns)])
    if schema_path is not None:
        write_schema(table.schema(), schema_path)


def merge_on_participant(tables: Sequence[DataTable]) -> DataTable:
    """Inner-join tables on participant ID.

    Row order follows the first table; column order is table order, then
    schema order within each table.
    """
    if len(tables) < 2:
        raise ValueError("merge_on_participant needs at least two tables")
    seen: dict[str, int] = {}
    clashes = []
    for t_idx, table in enumerate(tables):
        for name in table.names:
            if name in seen:
                clashes.append(name)
            seen[name] = t_idx
    if clashes:
        raise SchemaError(f"variable names appear in more than one table: {sorted(set(clashes))}", tuple(clashes))

    common = set(tables[0].participant_ids)
    for table in tables[1:]:
        common &= set(table.participant_ids)
    if not common:
        raise EmptyJoinError("no participant id is present in every table")
    ids = tuple(p for p in tables[0].participant_ids if p in common)
    cols: list[Column] = []
    for table in tables:
        cols.extend(table.select_rows(ids).columns)
    return DataTable(ids, tuple(cols), tables[0].id_column)


def load_many(pairs: Iterable[tuple[str | Path, str | Path]]) -> list[DataTable]:
    return [load_table(csv_path, schema_path) for csv_path, schema_path in pairs]
