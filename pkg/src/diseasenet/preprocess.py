"""Random-sample imputation and equal-frequency discretization."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, ImputationError
from .ingest import Column, DataTable, Group, Kind, VariableMeta
from .seeding import derive_seed, run_seed

CODE_DTYPE = np.int32


@dataclass(frozen=True, eq=False)
class DiscreteMatrix:
    """Complete integer-coded observation matrix for one imputation run.

    ``codes`` has shape (n_rows, n_cols); column ``j`` takes values in
    ``range(n_levels[j])`` and ``labels[j][c]`` describes code ``c``.
    """

    meta: tuple[VariableMeta, ...]
    codes: np.ndarray
    n_levels: np.ndarray
    run_id: int = 0
    seed_trace: dict = field(default_factory=dict)
    labels: tuple[tuple[str, ...], ...] = ()
    participant_ids: tuple[str, ...] = ()

    def __post_init__(self):
        codes = np.ascontiguousarray(self.codes, dtype=CODE_DTYPE)
        levels = np.asarray(self.n_levels, dtype=np.int64)
        if codes.ndim != 2 or codes.shape[1] != len(self.meta) or levels.shape != (len(self.meta),):
            raise DomainError("codes, n_levels and meta disagree in shape")
        if codes.size:
            if codes.min() < 0:
                raise DomainError("negative category code")
            if np.any(codes.max(axis=0) >= levels):
                raise DomainError("category code exceeds recorded level count")
        codes.setflags(write=False)
        levels.setflags(write=False)
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "n_levels", levels)

    @property
    def n_rows(self) -> int:
        return self.codes.shape[0]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(m.name for m in self.meta)

    def column_index(self) -> dict[str, int]:
        return {m.name: j for j, m in enumerate(self.meta)}

    def subset(self, names: Sequence[str]) -> "DiscreteMatrix":
        index = self.column_index()
        idx = [index[n] for n in names]
        return DiscreteMatrix(
            meta=tuple(self.meta[j] for j in idx),
            codes=self.codes[:, idx],
            n_levels=self.n_levels[idx],
            run_id=self.run_id,
            seed_trace=dict(self.seed_trace),
            labels=tuple(self.labels[j] for j in idx) if self.labels else (),
            participant_ids=self.participant_ids,
        )

    def content_bytes(self) -> bytes:
        return self.codes.tobytes() + self.n_levels.tobytes()


def impute_random_sample(table: DataTable, run_seed: int) -> DataTable:
    """Fill every missing cell with a uniform draw from that column's observed values.

    Column ``j`` uses its own generator seeded from ``(run_seed, j)``, so the
    result does not depend on which other columns are present or the order
    they are processed in.
    """
    out = []
    for j, col in enumerate(table.columns):
        mask = col.missing_mask
        n_missing = int(mask.sum())
        if n_missing == 0:
            out.append(col)
            continue
        observed = col.values[~mask]
        if observed.size == 0:
            raise ImputationError(f"column {col.meta.name!r} has no observed values to sample from")
        rng = np.random.default_rng(derive_seed(run_seed, "impute", j))
        donors = observed[rng.integers(0, observed.size, size=n_missing)]
        values = col.values.copy()
        values[mask] = donors
        out.append(Column(col.meta, values))
    return DataTable(table.participant_ids, tuple(out), table.id_column)


def sturges_bins(n: int) -> int:
    if n < 1:
        raise DomainError(f"Sturges' rule needs n >= 1, got {n}")
    # exact integer form of ceil(log2(n)); float log2 misrounds near powers of two
    return (n - 1).bit_length() + 1


def quantile_edges(column: np.ndarray, k: int) -> np.ndarray:
    """Interior cut points at the empirical i/k quantiles (lower interpolation)."""
    s = np.sort(np.asarray(column, dtype=np.float64))
    n = s.size
    idx = [(i * (n - 1)) // k for i in range(1, k)]
    return s[idx]


def discretize_quantile(column, k: int) -> np.ndarray:
    """Equal-frequency codes for a complete numeric column.

    A value goes to the bin whose lower edge it strictly exceeds, so equal
    values always share a bin. Bins emptied by ties are squeezed out and the
    returned codes are dense in ``range(occupied)``.
    """
    x = np.asarray(column, dtype=np.float64)
    if k < 1:
        raise DomainError(f"bin count must be >= 1, got {k}")
    bad = np.flatnonzero(~np.isfinite(x))
    if bad.size:
        raise DomainError(f"non-finite value {x[bad[0]]!r} at position {int(bad[0])}")
    if x.size == 0:
        return np.zeros(0, dtype=CODE_DTYPE)
    raw = np.searchsorted(quantile_edges(x, k), x, side="left")
    _, dense = np.unique(raw, return_inverse=True)
    return dense.astype(CODE_DTYPE)


def _level_order_key(value: str):
    try:
        return (0, float(value), value)
    except ValueError:
        return (1, 0.0, value)


def _encode_levels(col: Column) -> tuple[np.ndarray, tuple[str, ...]]:
    if col.values.dtype == object:
        levels = sorted(set(col.values.tolist()), key=_level_order_key)
        lookup = {v: i for i, v in enumerate(levels)}
        codes = np.fromiter((lookup[v] for v in col.values), dtype=CODE_DTYPE, count=len(col.values))
        return codes, tuple(levels)
    levels, codes = np.unique(col.values, return_inverse=True)
    return codes.astype(CODE_DTYPE), tuple(_fmt(v) for v in levels)


def _fmt(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def _bin_labels(values: np.ndarray, codes: np.ndarray) -> tuple[str, ...]:
    out = []
    for c in range(int(codes.max()) + 1 if codes.size else 0):
        members = values[codes == c]
        out.append(f"[{_fmt(members.min())}, {_fmt(members.max())}]")
    return tuple(out)


def discretize_dataset(table: DataTable, run_id: int = 0, seed_trace: dict | None = None) -> DiscreteMatrix:
    k = sturges_bins(table.n_rows)
    codes = np.empty((table.n_rows, len(table.columns)), dtype=CODE_DTYPE)
    n_levels = np.empty(len(table.columns), dtype=np.int64)
    labels = []
    for j, col in enumerate(table.columns):
        if col.missing_mask.any():
            raise DomainError(f"column {col.meta.name!r} still has missing values; impute first")
        if col.meta.kind is Kind.CONTINUOUS:
            try:
                c = discretize_quantile(col.values, k)
            except DomainError as exc:
                raise DomainError(f"column {col.meta.name!r}: {exc}") from None
            lab = _bin_labels(col.values, c)
        else:
            c, lab = _encode_levels(col)
        codes[:, j] = c
        n_levels[j] = max(len(lab), 1)
        labels.append(lab)
    return DiscreteMatrix(
        meta=table.meta,
        codes=codes,
        n_levels=n_levels,
        run_id=run_id,
        seed_trace=dict(seed_trace or {}),
        labels=tuple(labels),
        participant_ids=table.participant_ids,
    )


def preprocess_run(table: DataTable, master_seed: int, run_id: int) -> DiscreteMatrix:
    """Impute then discretize; the seed for ``run_id`` derives from ``master_seed``."""
    seed = run_seed(master_seed, run_id)
    imputed = impute_random_sample(table, seed)
    return discretize_dataset(imputed, run_id, {"master_seed": int(master_seed), "run_id": run_id, "run_seed": seed})


def write_discrete(dm: DiscreteMatrix, directory: str | Path) -> None:
    """Dump codes as CSV plus a JSON manifest of level labels."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "codes.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["participant_id", *dm.names])
        ids = dm.participant_ids or tuple(str(i) for i in range(dm.n_rows))
        for pid, row in zip(ids, dm.codes.tolist()):
            writer.writerow([pid, *row])
    manifest = {
        "run_id": dm.run_id,
        "seed_trace": dm.seed_trace,
        "columns": [
            {**m.to_dict(), "name": m.name, "n_levels": int(dm.n_levels[j]), "labels": list(dm.labels[j]) if dm.labels else []}
            for j, m in enumerate(dm.meta)
        ],
    }
    with open(directory / "levels.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def read_discrete(directory: str | Path) -> DiscreteMatrix:
    directory = Path(directory)
    with open(directory / "levels.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    cols = manifest["columns"]
    meta = tuple(VariableMeta(c["name"], Group(c["group"]), Kind(c["kind"]), c.get("units", "")) for c in cols)
    with open(directory / "codes.csv", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[1:] != [m.name for m in meta]:
            raise DomainError(f"{directory}: codes.csv header does not match levels.json")
        ids, rows = [], []
        for row in reader:
            ids.append(row[0])
            rows.append(row[1:])
    codes = np.array(rows, dtype=CODE_DTYPE).reshape(len(rows), len(meta))
    return DiscreteMatrix(
        meta=meta,
        codes=codes,
        n_levels=np.array([c["n_levels"] for c in cols], dtype=np.int64),
        run_id=int(manifest["run_id"]),
        seed_trace=manifest["seed_trace"],
        labels=tuple(tuple(c["labels"]) for c in cols),
        participant_ids=tuple(ids),
    )

