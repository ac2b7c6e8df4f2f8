"""Synthetic multi-omics data with planted mediating biomarkers.

Each planted mediator owns a latent factor that also loads on the phenotypes,
symptoms and risk factors it is linked to, so it shares information with
both ends of every link it mediates. All other biomarkers are pure noise.
The module also holds the brute-force oracles the test-suite checks the
pipeline against.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import ConfigError, DomainError
from .infonet import JointDistribution, MiNetwork
from .ingest import BIOMARKER_GROUPS, Column, DataTable, Group, Kind, VariableMeta, write_table
from .projection import ContributionRanking, Definition

LAYER_PREFIX = {"metabolome": "met", "lipidome": "lip"}
# cumulative probabilities at which a symptom liability crosses into levels 1, 2, 3
SYMPTOM_CUTS = (0.55, 0.80, 0.93)


@dataclass(frozen=True)
class Mediator:
    biomarker: str
    links: tuple[str, ...]
    effect: float = 1.0


@dataclass(frozen=True)
class PlantedConfig:
    n_rows: int = 1500
    layer_sizes: Mapping[str, int] = field(default_factory=lambda: {"metabolome": 200, "lipidome": 200})
    phenotype_count: int = 5
    symptom_count: int = 5
    risk_factor_count: int = 3
    mediators: tuple[Mediator, ...] = ()
    noise_sd: float = 1.0
    missing_rate: float = 0.0
    seed: int = 0

    def variable_names(self) -> dict[str, list[str]]:
        out = {}
        for layer, size in self.layer_sizes.items():
            prefix = LAYER_PREFIX.get(layer, layer[:3])
            out[layer] = [f"{prefix}_{i:03d}" for i in range(1, size + 1)]
        out["cvd_phenotype"] = [f"cvd_{i:02d}" for i in range(1, self.phenotype_count + 1)]
        out["depressive_symptom"] = [f"b{i}" for i in range(1, self.symptom_count + 1)]
        out["risk_factor"] = [f"rf_{i:02d}" for i in range(1, self.risk_factor_count + 1)]
        return out

    def validate(self) -> None:
        if self.n_rows < 2:
            raise ConfigError("n_rows must be at least 2")
        if not (0.0 <= self.missing_rate < 1.0):
            raise ConfigError(f"missing_rate must lie in [0, 1), got {self.missing_rate}")
        if self.noise_sd <= 0:
            raise ConfigError("noise_sd must be positive")
        for layer, size in self.layer_sizes.items():
            try:
                g = Group(layer)
            except ValueError:
                raise ConfigError(f"unknown layer {layer!r}") from None
            if g not in BIOMARKER_GROUPS or size < 0:
                raise ConfigError(f"bad layer entry {layer!r}: {size}")
        names = self.variable_names()
        biomarkers = {n for layer in self.layer_sizes for n in names[layer]}
        others = {n for key in ("cvd_phenotype", "depressive_symptom", "risk_factor") for n in names[key]}
        seen = set()
        for m in self.mediators:
            if m.biomarker not in biomarkers:
                raise ConfigError(f"mediator {m.biomarker!r} is not a generated biomarker")
            if m.biomarker in seen:
                raise ConfigError(f"mediator {m.biomarker!r} listed twice")
            seen.add(m.biomarker)
            # zero is allowed so that null mediators can be planted on purpose
            if not (m.effect >= 0 and math.isfinite(m.effect)):
                raise ConfigError(f"mediator {m.biomarker!r} has invalid effect size {m.effect}")
            bad = [x for x in m.links if x not in others]
            if bad:
                raise ConfigError(f"mediator {m.biomarker!r} links to unknown variables {bad}")


def planted_config(n_mediators: int = 10, n_rows: int = 1500, layer_sizes: Mapping[str, int] | None = None,
                   phenotype_count: int = 5, symptom_count: int = 5, risk_factor_count: int = 3,
                   cvd_links: int = 2, symptom_links: int = 2, risk_link_prob: float = 0.5,
                   effect: float = 1.0, noise_sd: float = 1.0, missing_rate: float = 0.05,
                   seed: int = 0) -> PlantedConfig:
    """Draw a random mediator layout: `n_mediators` per layer, each linked to
    `cvd_links` CVD phenotypes, `symptom_links` symptoms and, with probability
    `risk_link_prob`, one risk factor."""
    base = PlantedConfig(n_rows, dict(layer_sizes or {"metabolome": 200, "lipidome": 200}), phenotype_count,
                         symptom_count, risk_factor_count, (), noise_sd, missing_rate, seed)
    names = base.variable_names()
    rng = np.random.default_rng([seed, 0x5EED])
    mediators = []
    for layer in base.layer_sizes:
        chosen = rng.choice(len(names[layer]), size=min(n_mediators, len(names[layer])), replace=False)
        for idx in sorted(chosen.tolist()):
            links = list(rng.choice(names["cvd_phenotype"], size=min(cvd_links, phenotype_count), replace=False))
            links += list(rng.choice(names["depressive_symptom"], size=min(symptom_links, symptom_count), replace=False))
            if risk_factor_count and rng.random() < risk_link_prob:
                links.append(str(rng.choice(names["risk_factor"])))
            mediators.append(Mediator(names[layer][idx], tuple(str(x) for x in links), effect))
    return PlantedConfig(base.n_rows, base.layer_sizes, phenotype_count, symptom_count, risk_factor_count,
                         tuple(mediators), noise_sd, missing_rate, seed)


@dataclass(frozen=True)
class GroundTruth:
    mediators: dict  # layer -> sorted mediator names
    links: dict  # mediator -> linked variables
    comorbid_pairs: list  # dicts: cvd, symptom, shared mediators, liability correlation and MI
    config: dict

    def mediator_set(self, layer: str | Group | None = None) -> set[str]:
        if layer is None:
            return {m for ms in self.mediators.values() for m in ms}
        layer = layer.value if isinstance(layer, Group) else layer
        return set(self.mediators.get(layer, ()))

    def to_json(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, path: str | Path) -> "GroundTruth":
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))


def _liability_moments(cfg: PlantedConfig) -> tuple[dict[str, float], dict[tuple[str, str], float]]:
    var = {}
    names = cfg.variable_names()
    for key in ("cvd_phenotype", "depressive_symptom", "risk_factor"):
        for x in names[key]:
            var[x] = cfg.noise_sd ** 2
    cov: dict[tuple[str, str], float] = {}
    for m in cfg.mediators:
        e2 = m.effect ** 2
        for x in m.links:
            var[x] += e2
        for i, a in enumerate(m.links):
            for b in m.links[i + 1:]:
                key = (a, b) if a < b else (b, a)
                cov[key] = cov.get(key, 0.0) + e2
    return var, cov


def generate(config: PlantedConfig) -> tuple[dict[str, DataTable], GroundTruth]:
    """Draw one dataset: tables ``metabolome``/``lipidome`` (per layer) and ``phenotypes``."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    n = config.n_rows
    names = config.variable_names()
    latent = {m.biomarker: rng.standard_normal(n) for m in config.mediators}
    by_bio = {m.biomarker: m for m in config.mediators}
    var, cov = _liability_moments(config)

    ids = tuple(f"P{i:05d}" for i in range(1, n + 1))
    tables: dict[str, DataTable] = {}

    for layer in config.layer_sizes:
        cols = []
        for name in names[layer]:
            value = config.noise_sd * rng.standard_normal(n)
            if name in by_bio:
                value = value + by_bio[name].effect * latent[name]
            cols.append((VariableMeta(name, Group(layer), Kind.CONTINUOUS, "a.u."), np.round(value, 6)))
        tables[layer] = _with_missing(ids, cols, config.missing_rate, rng)

    liab = {}
    for key in ("cvd_phenotype", "depressive_symptom", "risk_factor"):
        for x in names[key]:
            liab[x] = config.noise_sd * rng.standard_normal(n)
    for m in config.mediators:
        for x in m.links:
            liab[x] = liab[x] + m.effect * latent[m.biomarker]

    cuts = stats.norm.ppf(SYMPTOM_CUTS)
    cols = []
    for x in names["cvd_phenotype"]:
        cols.append((VariableMeta(x, Group.CVD_PHENOTYPE, Kind.CONTINUOUS, "a.u."), np.round(liab[x], 6)))
    for x in names["depressive_symptom"]:
        z = liab[x] / math.sqrt(var[x])
        cols.append((VariableMeta(x, Group.DEPRESSIVE_SYMPTOM, Kind.DISCRETE_ORDINAL, "score 0-3"),
                     np.searchsorted(cuts, z).astype(np.float64)))
    for i, x in enumerate(names["risk_factor"]):
        if i == 0:
            sex = np.where(liab[x] < 0, "F", "M").astype(object)
            cols.append((VariableMeta(x, Group.RISK_FACTOR, Kind.CATEGORICAL, ""), sex))
        else:
            cols.append((VariableMeta(x, Group.RISK_FACTOR, Kind.CONTINUOUS, "a.u."), np.round(liab[x], 6)))
    tables["phenotypes"] = _with_missing(ids, cols, config.missing_rate, rng)

    pairs = []
    for a in names["cvd_phenotype"]:
        for b in names["depressive_symptom"]:
            shared = sorted(m.biomarker for m in config.mediators if a in m.links and b in m.links)
            if not shared:
                continue
            key = (a, b) if a < b else (b, a)
            rho = cov.get(key, 0.0) / math.sqrt(var[a] * var[b])
            pairs.append({"cvd": a, "symptom": b, "shared_mediators": shared, "liability_correlation": rho,
                          "liability_mi_bits": -0.5 * math.log2(1.0 - rho * rho)})
    truth = GroundTruth(
        mediators={layer: sorted(m.biomarker for m in config.mediators if m.biomarker in set(names[layer]))
                   for layer in config.layer_sizes},
        links={m.biomarker: list(m.links) for m in config.mediators},
        comorbid_pairs=pairs,
        config=_config_dict(config),
    )
    return tables, truth


def _with_missing(ids, cols, rate, rng) -> DataTable:
    out = []
    for meta, values in cols:
        if rate > 0:
            mask = rng.random(len(values)) < rate
            if mask.all():
                mask[0] = False
            values = values.copy()
            if values.dtype == object:
                values[mask] = None
            else:
                values[mask] = np.nan
        out.append(Column(meta, values))
    return DataTable(ids, tuple(out), "participant_id")


def _config_dict(cfg: PlantedConfig) -> dict:
    d = asdict(cfg)
    d["layer_sizes"] = dict(cfg.layer_sizes)
    d["mediators"] = [asdict(m) | {"links": list(m.links)} for m in cfg.mediators]
    return d


def config_from_dict(d: Mapping) -> PlantedConfig:
    d = dict(d)
    d["mediators"] = tuple(Mediator(m["biomarker"], tuple(m["links"]), float(m.get("effect", 1.0)))
                           for m in d.get("mediators", ()))
    if "layer_sizes" in d:
        d["layer_sizes"] = dict(d["layer_sizes"])
    try:
        return PlantedConfig(**d)
    except TypeError as exc:
        raise ConfigError(f"bad synthetic config: {exc}") from None


def write_dataset(tables: Mapping[str, DataTable], truth: GroundTruth, directory: str | Path) -> list[tuple[Path, Path]]:
    """Write each table as CSV + schema sidecar, plus ``truth.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for name, table in tables.items():
        csv_path, schema_path = directory / f"{name}.csv", directory / f"{name}.schema.yaml"
        write_table(table, csv_path, schema_path)
        out.append((csv_path, schema_path))
    truth.to_json(directory / "truth.json")
    return out


# --- oracles ---------------------------------------------------------------

def oracle_mi(table: JointDistribution | np.ndarray) -> float:
    """Plug-in MI in bits by literal summation over cells.

    Each cell ratio p(x,y) / (p(x) p(y)) equals c*n / (c_x*c_y), formed in exact
    integers before the logarithm; terms are accumulated with fsum.
    """
    counts = table.counts if isinstance(table, JointDistribution) else np.asarray(table)
    rows = [[int(v) for v in row] for row in counts.tolist()]
    n = sum(sum(r) for r in rows)
    row_tot = [sum(r) for r in rows]
    col_tot = [sum(r[j] for r in rows) for j in range(len(rows[0]))]
    terms = []
    for i, row in enumerate(rows):
        for j, c in enumerate(row):
            if c == 0:
                continue
            terms.append(c * (math.log2(c * n) - math.log2(row_tot[i] * col_tot[j])))
    return max(0.0, math.fsum(terms) / n)


def oracle_projection(net: MiNetwork, definition: Definition | str = Definition.AVERAGE) -> dict[str, dict[tuple[str, str], float]]:
    """Naive triple loop over (X_i, X_j, Y_k) with exact rational accumulation.

    Returns, per omics layer present in the network, the score of every pair
    of non-biomarker nodes (zeros included).
    """
    definition = Definition(definition)
    if definition is Definition.EXTENDED:
        raise DomainError("the oracle covers the count and average definitions")
    f = {}
    for a, b, w, _ in net.edges():
        f[(a, b)] = w
        f[(b, a)] = w
    others = [m.name for m in net.nodes if m.group not in BIOMARKER_GROUPS]
    layers = sorted({m.group for m in net.nodes if m.group in BIOMARKER_GROUPS}, key=lambda g: g.value)
    out = {}
    for layer in layers:
        bios = [m.name for m in net.nodes if m.group is layer]
        scores = {}
        for i in range(len(others)):
            for j in range(i + 1, len(others)):
                xi, xj = others[i], others[j]
                total = Fraction(0)
                for y in bios:
                    fi, fj = f.get((xi, y), 0.0), f.get((xj, y), 0.0)
                    if fi != 0 and fj != 0:
                        if definition is Definition.COUNT:
                            total += 1
                        else:
                            total += (Fraction(fi) + Fraction(fj)) / 2
                scores[(xi, xj)] = float(total)
        out[layer.value] = scores
    return out


def recovery_metrics(ranking: ContributionRanking | Sequence[tuple[str, float]], truth: set[str] | GroundTruth,
                     k: int = 10, layer: str | None = None) -> tuple[float, float]:
    """precision@k of the top-k names, and the AUC of mean score as a mediator detector.

    The AUC is the Mann-Whitney probability with ties counted as one half.
    """
    if isinstance(ranking, ContributionRanking):
        scored = [(e.name, e.mean) for e in ranking.entries]
        layer = layer or ranking.layer
    else:
        scored = list(ranking)
    if not scored:
        raise DomainError("empty ranking")
    if not (1 <= k <= len(scored)):
        raise DomainError(f"k must lie in [1, {len(scored)}], got {k}")
    positives = truth.mediator_set(layer) if isinstance(truth, GroundTruth) else set(truth)
    precision = sum(name in positives for name, _ in scored[:k]) / k
    labels = np.array([name in positives for name, _ in scored])
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        return precision, float("nan")
    ranks = stats.rankdata([s for _, s in scored])
    auc = (ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)
    return precision, float(auc)
