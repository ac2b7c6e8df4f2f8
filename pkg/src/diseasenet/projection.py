"""Projection of the MI network onto disease/risk variables.

A projected link between two non-biomarker variables is scored through the
biomarkers of one omics layer that are significantly linked to both. Sums
go through :func:`math.fsum`, so a score does not depend on the order its
terms are visited in.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
import statistics
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

import networkx as nx
import numpy as np
from scipy import stats

from .errors import ConfigError, DomainError, InsufficientDataError
from .infonet import MiNetwork
from .ingest import BIOMARKER_GROUPS, Group

log = logging.getLogger(__name__)

DEFAULT_LAMBDA = 0.5

Pair = tuple[str, str]


class Definition(str, enum.Enum):
    COUNT = "count"
    AVERAGE = "average"
    EXTENDED = "extended"


class PairScope(str, enum.Enum):
    CVD_X_DEPRESSION = "cvd-x-depression"
    RISK_X_PHENOTYPE = "risk-x-phenotype"
    ALL = "all"


def _layer(layer) -> Group:
    try:
        g = Group(layer)
    except ValueError:
        raise ConfigError(f"unknown layer {layer!r}") from None
    if g not in BIOMARKER_GROUPS:
        raise ConfigError(f"{g.value!r} is not an omics layer")
    return g


def scope_pairs(net: MiNetwork, scope: PairScope | str, include_risk_pairs: bool = False) -> list[Pair]:
    """Ordered list of variable pairs covered by `scope`.

    ``all`` spans every pair of non-biomarker nodes; risk factor x risk
    factor pairs are left out unless `include_risk_pairs` is set.
    """
    scope = PairScope(scope)
    cvd = net.nodes_in(Group.CVD_PHENOTYPE)
    dep = net.nodes_in(Group.DEPRESSIVE_SYMPTOM)
    risk = net.nodes_in(Group.RISK_FACTOR)
    if scope is PairScope.CVD_X_DEPRESSION:
        return [(a, b) for a in cvd for b in dep]
    if scope is PairScope.RISK_X_PHENOTYPE:
        return [(z, x) for z in risk for x in cvd + dep]
    nodes = [m.name for m in net.nodes if m.group not in BIOMARKER_GROUPS]
    groups = net.partition
    out = []
    for i, a in enumerate(nodes):
        for b in nodes[i + 1:]:
            if not include_risk_pairs and groups[a] is Group.RISK_FACTOR and groups[b] is Group.RISK_FACTOR:
                continue
            out.append((a, b))
    return out


@dataclass(frozen=True, eq=False)
class _LayerView:
    """Dense slices of one network restricted to a single omics layer."""

    net: MiNetwork
    layer: Group
    rows: dict = field(default_factory=dict)
    biomarkers: tuple = ()
    F: np.ndarray = None
    G: np.ndarray = None

    @classmethod
    def build(cls, net: MiNetwork, layer) -> "_LayerView":
        layer = _layer(layer)
        W = net.weight_matrix()
        bio = [k for k, m in enumerate(net.nodes) if m.group is layer]
        other = [k for k, m in enumerate(net.nodes) if m.group not in BIOMARKER_GROUPS]
        F = W[np.ix_(other, bio)]
        G = W[np.ix_(bio, bio)]
        rows = {net.nodes[k].name: r for r, k in enumerate(other)}
        return cls(net, layer, rows, tuple(net.nodes[k].name for k in bio), F, G)

    def row(self, name: str) -> np.ndarray:
        if name not in self.rows:
            if name in self.net.names:
                raise DomainError(f"{name!r} is a biomarker; projection endpoints must be phenotypes or risk factors")
            raise DomainError(f"unknown node {name!r}")
        return self.F[self.rows[name]]

    def score(self, a: str, b: str, definition: Definition, lam: float) -> float:
        if a == b:
            raise DomainError("a projected pair needs two distinct variables")
        fa, fb = self.row(a), self.row(b)
        shared = (fa > 0) & (fb > 0)
        if definition is Definition.COUNT:
            return float(np.count_nonzero(shared))
        base = math.fsum(np.concatenate([fa[shared], fb[shared]]).tolist()) / 2.0
        if definition is Definition.AVERAGE:
            return base
        if not self.net.within_layer:
            raise ConfigError("the extended definition needs a network built with within-layer biomarker edges")
        na, nb = np.flatnonzero(fa > 0), np.flatnonzero(fb > 0)
        sub = self.G[np.ix_(na, nb)]
        mask = (sub > 0) & (na[:, None] != nb[None, :])
        terms = (fa[na][:, None] + sub + fb[nb][None, :]) / 3.0
        return base + lam * math.fsum(terms[mask].tolist())


def project_pair(net: MiNetwork, a: str, b: str, layer, definition: Definition | str = Definition.AVERAGE,
                 lam: float = DEFAULT_LAMBDA) -> float:
    """Projected score of the link a--b through biomarkers of `layer`.

    count: number of shared significant neighbours.
    average: sum over shared neighbours Y of (f(a;Y) + f(b;Y)) / 2.
    extended: average plus `lam` times the sum, over paths a-Y-Y'-b with
    distinct Y, Y' in the layer, of the mean of the three edge weights.
    """
    return _LayerView.build(net, layer).score(a, b, Definition(definition), lam)


@dataclass(frozen=True)
class ProjectedLayer:
    layer: Group
    definition: Definition
    run_id: int
    scope: str
    edges: tuple[tuple[str, str, float], ...]

    def weights(self) -> dict[Pair, float]:
        return {(a, b): w for a, b, w in self.edges}


def project_layer(net: MiNetwork, pair_scope: PairScope | str | Sequence[Pair], layer,
                  definition: Definition | str = Definition.AVERAGE, lam: float = DEFAULT_LAMBDA,
                  include_risk_pairs: bool = False) -> ProjectedLayer:
    view = _LayerView.build(net, layer)
    definition = Definition(definition)
    pairs, label = _resolve_scope(net, pair_scope, include_risk_pairs)
    edges = []
    for a, b in pairs:
        w = view.score(a, b, definition, lam)
        if w > 0:
            edges.append((a, b, w))
    return ProjectedLayer(view.layer, definition, net.run_id, label, tuple(edges))


def _resolve_scope(net, pair_scope, include_risk_pairs=False) -> tuple[list[Pair], str]:
    if isinstance(pair_scope, (str, PairScope)):
        try:
            scope = PairScope(pair_scope)
        except ValueError:
            raise ConfigError(f"unknown pair scope {pair_scope!r}") from None
        label = scope.value + ("+risk-pairs" if include_risk_pairs and scope is PairScope.ALL else "")
        return scope_pairs(net, scope, include_risk_pairs), label
    pairs = [tuple(p) for p in pair_scope]
    return pairs, ";".join(f"{a}--{b}" for a, b in pairs)


def contributions(net: MiNetwork, layer, pair_scope: PairScope | str | Sequence[Pair]) -> dict[str, float]:
    """Contribution score of every biomarker of `layer` over the scope pairs.

    For biomarker Y the score is the sum, over scope pairs (a, b) with both
    f(a;Y) and f(b;Y) non-zero, of (f(a;Y) + f(b;Y)) / 2.
    """
    view = _LayerView.build(net, layer)
    pairs, _ = _resolve_scope(net, pair_scope)
    terms: list[list[float]] = [[] for _ in view.biomarkers]
    for a, b in pairs:
        fa, fb = view.row(a), view.row(b)
        for k in np.flatnonzero((fa > 0) & (fb > 0)).tolist():
            terms[k].append(fa[k])
            terms[k].append(fb[k])
    return {name: math.fsum(t) / 2.0 for name, t in zip(view.biomarkers, terms)}


def contribution(net: MiNetwork, biomarker: str, pair_scope: PairScope | str | Sequence[Pair]) -> float:
    meta = net.meta(biomarker)
    if meta.group not in BIOMARKER_GROUPS:
        raise DomainError(f"{biomarker!r} is not a biomarker")
    return contributions(net, meta.group, pair_scope)[biomarker]


def mean_se(values: Sequence[float]) -> tuple[float, float]:
    """Mean and unbiased standard error (sample sd with n - 1, over sqrt(n))."""
    n = len(values)
    if n == 0:
        raise DomainError("no values to summarise")
    mean = math.fsum(values) / n
    if n == 1:
        return mean, 0.0
    return mean, statistics.stdev(values) / math.sqrt(n)


@dataclass(frozen=True)
class RankEntry:
    name: str
    mean: float
    se: float


@dataclass(frozen=True)
class ContributionRanking:
    layer: str
    scope: str
    n_runs: int
    entries: tuple[RankEntry, ...]
    top_k: int
    degenerate: bool = False

    @property
    def top(self) -> tuple[RankEntry, ...]:
        return self.entries[: self.top_k]

    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "name", "layer", "scope", "mean_con", "se_con", "n_runs"])
            for r, e in enumerate(self.entries, start=1):
                w.writerow([r, e.name, self.layer, self.scope, repr(e.mean), repr(e.se), self.n_runs])

    def write_plot_file(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["name", "mean", "se"])
            for e in self.top:
                w.writerow([e.name, repr(e.mean), repr(e.se)])


def rank_contributions(runs: Sequence[Mapping[str, float]], top_k: int = 10, layer: str = "",
                       scope: str = "") -> ContributionRanking:
    """Average per-run contribution maps and order biomarkers by mean score.

    A biomarker missing from a run counts as 0 there. Ties in the mean are
    broken by name.
    """
    if top_k < 1:
        raise ConfigError(f"top_k must be >= 1, got {top_k}")
    if not runs:
        raise DomainError("need at least one run")
    names = sorted(set().union(*(r.keys() for r in runs)))
    entries = []
    for name in names:
        mean, se = mean_se([float(r.get(name, 0.0)) for r in runs])
        entries.append(RankEntry(name, mean, se))
    entries.sort(key=lambda e: (-e.mean, e.name))
    degenerate = len(runs) == 1
    if degenerate:
        warnings.warn("single run: standard errors are reported as 0", RuntimeWarning, stacklevel=2)
    layer = layer.value if isinstance(layer, Group) else str(layer)
    return ContributionRanking(layer, str(scope), len(runs), tuple(entries), top_k, degenerate)


@dataclass(frozen=True)
class AggregatedEdge:
    a: str
    b: str
    mean: float
    se: float
    n_present: int


@dataclass(frozen=True)
class AggregatedLayer:
    layer: Group
    definition: Definition
    scope: str
    n_runs: int
    edges: tuple[AggregatedEdge, ...]

    def weights(self) -> dict[Pair, float]:
        return {(e.a, e.b): e.mean for e in self.edges}

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node_a", "node_b", "layer", "definition", "mean_w", "se_w", "n_runs", "n_present"])
            for e in self.edges:
                w.writerow([e.a, e.b, self.layer.value, self.definition.value, repr(e.mean), repr(e.se),
                            self.n_runs, e.n_present])

    @classmethod
    def read_csv(cls, path: str | Path, scope: str = "") -> "AggregatedLayer":
        edges, layer, definition, n_runs = [], None, None, 0
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                layer, definition, n_runs = row["layer"], row["definition"], int(row["n_runs"])
                edges.append(AggregatedEdge(row["node_a"], row["node_b"], float(row["mean_w"]),
                                            float(row["se_w"]), int(row["n_present"])))
        if layer is None:
            raise DomainError(f"{path}: no projected edges")
        return cls(Group(layer), Definition(definition), scope, n_runs, tuple(edges))

    def to_graph(self, groups: Mapping[str, Group] | None = None) -> nx.Graph:
        g = nx.Graph(layer=self.layer.value, definition=self.definition.value)
        for e in self.edges:
            for name in (e.a, e.b):
                if name not in g:
                    g.add_node(name, group=groups[name].value if groups and name in groups else "")
            g.add_edge(e.a, e.b, mean_w=e.mean, se_w=e.se, n_present=e.n_present)
        return g

    def write_graphml(self, path: str | Path, groups: Mapping[str, Group] | None = None) -> None:
        nx.write_graphml(self.to_graph(groups), path)


def aggregate_runs(layers: Sequence[ProjectedLayer]) -> AggregatedLayer:
    """Per-edge mean and standard error over runs; absent edges count as 0."""
    if not layers:
        raise DomainError("nothing to aggregate")
    first = layers[0]
    if any(l.definition is not first.definition for l in layers):
        raise ConfigError("cannot aggregate layers built with different definitions")
    if any(l.layer is not first.layer for l in layers):
        raise ConfigError("cannot aggregate different omics layers")
    order: dict[Pair, None] = {}
    for l in sorted(layers, key=lambda l: l.run_id):
        for a, b, _ in l.edges:
            order.setdefault((a, b), None)
    per_run = [l.weights() for l in sorted(layers, key=lambda l: l.run_id)]
    edges = []
    for pair in order:
        vals = [w.get(pair, 0.0) for w in per_run]
        mean, se = mean_se(vals)
        edges.append(AggregatedEdge(pair[0], pair[1], mean, se, sum(pair in w for w in per_run)))
    return AggregatedLayer(first.layer, first.definition, first.scope, len(layers), tuple(edges))


def combine_layers(layers: Iterable[Union[ProjectedLayer, AggregatedLayer]]) -> dict[Pair, float]:
    """Sum link weights over layers, i.e. the projection through all biomarkers."""
    parts: dict[Pair, list[float]] = {}
    for layer in layers:
        for pair, w in layer.weights().items():
            parts.setdefault(_canon(pair), []).append(w)
    return {pair: math.fsum(ws) for pair, ws in parts.items()}


def _canon(pair: Pair) -> Pair:
    return pair if pair[0] <= pair[1] else (pair[1], pair[0])


@dataclass(frozen=True)
class RelativeImportance:
    risk_factors: tuple[str, ...]
    per_phenotype: dict  # (risk factor, phenotype) -> share in [0, 1]
    groups: dict  # group label -> {risk factor -> percentage}
    excluded: tuple[str, ...] = ()

    GROUP_LABELS = {Group.CVD_PHENOTYPE: "CVD", Group.DEPRESSIVE_SYMPTOM: "Depression"}

    def table(self) -> list[tuple[str, ...]]:
        labels = [lab for lab in self.GROUP_LABELS.values() if lab in self.groups]
        rows = [("risk_factor", *(f"{lab}(%)" for lab in labels))]
        for z in self.risk_factors:
            rows.append((z, *(f"{self.groups[lab].get(z, 0.0):.2f}" for lab in labels)))
        return rows

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerows(self.table())

    def write_per_phenotype(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["risk_factor", "phenotype", "share"])
            for (z, x), r in self.per_phenotype.items():
                w.writerow([z, x, repr(r)])


def relative_importance(layers: Iterable[Union[ProjectedLayer, AggregatedLayer]],
                        groups: Mapping[str, Group]) -> RelativeImportance:
    """Share of each risk factor in a phenotype's total risk-factor projected score.

    Link weights are summed over the supplied layers first. A group's value is
    the unweighted mean share over its phenotypes that have at least one
    risk-factor link; the others are logged and left out.
    """
    w = combine_layers(layers)
    risk = sorted(n for n, g in groups.items() if g is Group.RISK_FACTOR)
    per_pheno: dict[Pair, float] = {}
    group_vals: dict[str, dict[str, list[float]]] = {}
    excluded = []
    any_link = False
    for group, label in RelativeImportance.GROUP_LABELS.items():
        phenos = [n for n, g in groups.items() if g is group]
        if not phenos:
            continue
        acc: dict[str, list[float]] = {z: [] for z in risk}
        for x in phenos:
            scores = {z: w.get(_canon((z, x)), 0.0) for z in risk}
            total = math.fsum(scores.values())
            if total <= 0:
                excluded.append(x)
                log.debug("phenotype %s has no risk-factor link; excluded from the %s mean", x, label)
                continue
            any_link = True
            for z in risk:
                share = scores[z] / total
                per_pheno[(z, x)] = share
                acc[z].append(share)
        if any(acc.values()):
            group_vals[label] = {z: 100.0 * math.fsum(v) / len(v) for z, v in acc.items()}
    if not any_link:
        raise InsufficientDataError("no risk factor--phenotype projected link in the supplied layers")
    return RelativeImportance(tuple(risk), per_pheno, group_vals, tuple(excluded))


@dataclass(frozen=True)
class FitReport:
    r: float
    slope: float
    intercept: float
    slope_p: float
    n_used: int
    n_excluded: int
    points: tuple[tuple[str, str, float, float], ...]  # (a, b, w, mi)

    def to_dict(self) -> dict:
        return {
            "pearson_r_loglog": self.r,
            "slope": self.slope,
            "intercept": self.intercept,
            "slope_p_value": self.slope_p,
            "n_used": self.n_used,
            "n_excluded_nonpositive": self.n_excluded,
        }

    def write_points(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node_a", "node_b", "projected_w", "direct_mi", "log10_w", "log10_mi"])
            for a, b, pw, mi in self.points:
                w.writerow([a, b, repr(pw), repr(mi), repr(math.log10(pw)), repr(math.log10(mi))])


def compare_projection_to_direct_mi(projected: Union[Mapping[Pair, float], AggregatedLayer, ProjectedLayer],
                                    direct: Mapping[Pair, float]) -> FitReport:
    """Least-squares fit of log10 projected score against log10 direct MI.

    Every pair in `direct` is considered; pairs where either value is not
    positive are excluded and counted.
    """
    if not isinstance(projected, Mapping):
        projected = projected.weights()
    w_lookup = {_canon(p): v for p, v in projected.items()}
    used, excluded = [], 0
    for (a, b), mi in direct.items():
        pw = w_lookup.get(_canon((a, b)), 0.0)
        if pw > 0 and mi > 0:
            used.append((a, b, float(pw), float(mi)))
        else:
            excluded += 1
    if len(used) < 3:
        raise InsufficientDataError(f"only {len(used)} pairs with positive projected score and MI; need 3")
    lw = np.log10([u[2] for u in used])
    lm = np.log10([u[3] for u in used])
    if np.ptp(lw) == 0 or np.ptp(lm) == 0:
        raise InsufficientDataError("zero variance on one axis; correlation undefined", zero_variance=True)
    fit = stats.linregress(lm, lw)
    return FitReport(float(fit.rvalue), float(fit.slope), float(fit.intercept), float(fit.pvalue),
                     len(used), excluded, tuple(used))
