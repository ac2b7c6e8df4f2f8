"""Pipeline configuration file (YAML).

Relative table paths resolve against the directory holding the config file.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError
from .projection import Definition, PairScope

# keys that steer execution only; they never reach artifacts, so outputs are
# byte-identical across output locations and worker counts
RUNTIME_KEYS = ("output_dir", "parallelism")


@dataclass(frozen=True)
class TableInput:
    csv: str
    schema: str


@dataclass(frozen=True)
class PipelineConfig:
    tables: tuple[TableInput, ...]
    master_seed: int = 0
    n_imputations: int = 20
    alpha: float = 0.01
    permutations: int = 200
    redundancy_threshold: float = 0.8
    protected: tuple[str, ...] = ()
    pre_excluded: tuple[str, ...] = ()
    projection_definition: str = Definition.AVERAGE.value
    extended_lambda: float = 0.5
    pair_scope: str = PairScope.CVD_X_DEPRESSION.value
    include_risk_pairs: bool = False
    top_k: int = 10
    output_dir: str = "out"
    parallelism: int | None = None
    base_dir: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        if not self.tables:
            raise ConfigError("config lists no input tables")
        if self.n_imputations < 1:
            raise ConfigError("n_imputations must be >= 1")
        if not (0.0 < self.alpha < 1.0):
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.permutations < 1:
            raise ConfigError("permutations must be >= 1")
        if 1.0 / (self.permutations + 1) >= self.alpha:
            # the smallest attainable p-value is 1/(B+1); no edge could ever pass
            raise ConfigError(f"permutations={self.permutations} cannot produce a p-value below alpha={self.alpha}")
        if not (0.0 < self.redundancy_threshold <= 1.0):
            raise ConfigError(f"redundancy_threshold must lie in (0, 1], got {self.redundancy_threshold}")
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if self.extended_lambda < 0:
            raise ConfigError("extended_lambda must be non-negative")
        if self.parallelism is not None and self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        for value, enum_cls, key in ((self.projection_definition, Definition, "projection_definition"),
                                     (self.pair_scope, PairScope, "pair_scope")):
            try:
                enum_cls(value)
            except ValueError:
                allowed = ", ".join(e.value for e in enum_cls)
                raise ConfigError(f"{key} must be one of {allowed}; got {value!r}") from None
        overlap = set(self.protected) & set(self.pre_excluded)
        if overlap:
            raise ConfigError(f"variables both protected and pre-excluded: {sorted(overlap)}")

    @property
    def definition(self) -> Definition:
        return Definition(self.projection_definition)

    @property
    def scope(self) -> PairScope:
        return PairScope(self.pair_scope)

    @property
    def within_layer(self) -> bool:
        return self.definition is Definition.EXTENDED

    def table_paths(self) -> list[tuple[Path, Path]]:
        return [(self.base_dir / t.csv, self.base_dir / t.schema) for t in self.tables]

    def output_path(self) -> Path:
        return self.base_dir / self.output_dir

    def workers(self) -> int:
        return self.parallelism or os.cpu_count() or 1

    def resolved(self) -> dict[str, Any]:
        """All analysis settings with defaults filled in (runtime keys left out)."""
        out: dict[str, Any] = {}
        for f in fields(self):
            if f.name in RUNTIME_KEYS or f.name == "base_dir":
                continue
            value = getattr(self, f.name)
            if f.name == "tables":
                value = [{"csv": t.csv, "schema": t.schema} for t in value]
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def config_from_mapping(doc: Mapping[str, Any], base_dir: Path | str = ".") -> PipelineConfig:
    if not isinstance(doc, Mapping):
        raise ConfigError("config must be a mapping")
    known = {f.name for f in fields(PipelineConfig)} - {"base_dir"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    kw = dict(doc)
    try:
        kw["tables"] = tuple(TableInput(str(t["csv"]), str(t["schema"])) for t in doc.get("tables") or ())
    except (KeyError, TypeError):
        raise ConfigError("each table entry needs 'csv' and 'schema'") from None
    for key in ("protected", "pre_excluded"):
        if key in kw:
            kw[key] = tuple(str(v) for v in kw[key] or ())
    try:
        return PipelineConfig(**kw, base_dir=Path(base_dir))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path, **overrides: Any) -> PipelineConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_mapping(doc, path.parent)


def dump_resolved(cfg: PipelineConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.resolved(), fh, sort_keys=True)
