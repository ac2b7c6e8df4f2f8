"""Mutual information, permutation significance and the multipartite MI network.

All information quantities are in bits.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import networkx as nx
import numpy as np

from ._kernels import all_pairs_clogc, joint_clogc
from .errors import ConfigError, DomainError
from .ingest import BIOMARKER_GROUPS, Group, VariableMeta
from .preprocess import DiscreteMatrix
from .seeding import derive_seed

log = logging.getLogger(__name__)

# relative slack when comparing permuted statistics with the observed one, so
# that count tables equal up to cell order register as ties
_TIE_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class JointDistribution:
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise DomainError("contingency table must be two-dimensional")
        if counts.size == 0 or np.any(counts < 0) or counts.sum() <= 0:
            raise DomainError("contingency table needs non-negative counts with a positive total")
        object.__setattr__(self, "counts", counts)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def transpose(self) -> "JointDistribution":
        return JointDistribution(self.counts.T)


def _as_codes(v) -> np.ndarray:
    v = np.asarray(v)
    if v.ndim != 1:
        raise DomainError("code vectors must be one-dimensional")
    if v.size and (not np.issubdtype(v.dtype, np.integer) or v.min() < 0):
        raise DomainError("codes must be non-negative integers")
    return v.astype(np.int64, copy=False)


def joint_counts(x, y) -> JointDistribution:
    x, y = _as_codes(x), _as_codes(y)
    if x.size != y.size:
        raise DomainError(f"length mismatch: {x.size} vs {y.size}")
    if x.size == 0:
        raise DomainError("cannot tabulate empty vectors")
    kx, ky = int(x.max()) + 1, int(y.max()) + 1
    counts = np.bincount(x * ky + y, minlength=kx * ky).reshape(kx, ky)
    return JointDistribution(counts)


def entropy(x) -> float:
    """Plug-in Shannon entropy of a code vector, in bits."""
    x = _as_codes(x)
    if x.size == 0:
        raise DomainError("entropy of an empty vector")
    c = np.bincount(x)
    c = c[c > 0]
    n = x.size
    return max(0.0, math.fsum((c / n * np.log2(n / c)).tolist()))


def mutual_information(j: JointDistribution) -> float:
    """Plug-in MI of a contingency table in bits, clamped at zero.

    Cell ratios are formed from exact integer products and the terms are
    summed with fsum, so the value does not depend on cell order and a
    transposed table gives the identical float.
    """
    counts = np.asarray(j.counts, dtype=np.int64)
    n = int(counts.sum())
    cx = counts.sum(axis=1)
    cy = counts.sum(axis=0)
    i, k = np.nonzero(counts)
    c = counts[i, k]
    ratio = (c * n).astype(np.float64) / (cx[i] * cy[k]).astype(np.float64)
    return max(0.0, math.fsum((c / n * np.log2(ratio)).tolist()))


def permutations_of(v, n_permutations: int, seed: int) -> np.ndarray:
    """(n_permutations, n) array of independent uniform shuffles of `v`."""
    v = np.asarray(v)
    rng = np.random.default_rng(seed)
    return rng.permuted(np.broadcast_to(v, (n_permutations, v.size)), axis=1)


def _pvalues_from_stats(stats: np.ndarray) -> np.ndarray:
    """stats[0] holds observed joint statistics, stats[1:] the permuted ones."""
    obs = stats[0]
    tol = _TIE_RTOL * np.maximum(1.0, np.abs(obs))
    exceed = (stats[1:] >= obs - tol).sum(axis=0)
    return (1.0 + exceed) / stats.shape[0]


def permutation_pvalue(x, y, n_permutations: int = 200, seed: int = 0) -> float:
    """Add-one permutation p-value for MI(x; y) under independence.

    `y` is shuffled; with the marginals fixed, MI is monotone in the joint
    sum of c*log2(c), which is what gets compared.
    """
    if n_permutations < 1:
        raise DomainError("need at least one permutation")
    x, y = _as_codes(x), _as_codes(y)
    if x.size != y.size:
        raise DomainError(f"length mismatch: {x.size} vs {y.size}")
    if x.size == 0 or np.all(x == x[0]) or np.all(y == y[0]):
        return 1.0
    rows = np.vstack([y, permutations_of(y, n_permutations, seed)])
    stats = joint_clogc(rows, int(y.max()) + 1, x[None, :], np.array([int(x.max()) + 1]))
    return float(_pvalues_from_stats(stats)[0])


def pairwise_mi(dm: DiscreteMatrix) -> tuple[np.ndarray, np.ndarray]:
    """All-pairs MI matrix and per-column entropies, in bits.

    Uses MI = log2 n + (S_xy - S_x - S_y) / n with S the sum of c*log2(c);
    agrees with :func:`mutual_information` to rounding.
    """
    n = dm.n_rows
    cols = np.ascontiguousarray(dm.codes.T)
    joint = all_pairs_clogc(cols, dm.n_levels)
    marg = np.array([_clogc_sum(np.bincount(c)) for c in cols])
    log_n = math.log2(n)
    h = np.maximum(0.0, log_n - marg / n)
    mi = log_n + (joint - marg[:, None] - marg[None, :]) / n
    np.fill_diagonal(mi, h)
    return np.maximum(mi, 0.0), h


def _clogc_sum(counts: np.ndarray) -> float:
    c = counts[counts > 1].astype(np.float64)
    return float(np.sum(c * np.log2(c)))


def normalized_mi(mi: np.ndarray, h: np.ndarray) -> np.ndarray:
    """MI / min(H(X), H(Y)); pairs involving a constant column score 0."""
    denom = np.minimum(h[:, None], h[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(denom > 0, mi / denom, 0.0)
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class DropRecord:
    dropped: str
    partner: str
    score: float
    reason: str = "redundant"


def redundancy_filter(
    names: Sequence[str],
    nmi: np.ndarray,
    threshold: float = 0.8,
    protected: Iterable[str] = (),
    missingness: Mapping[str, float] | None = None,
    pre_excluded: Iterable[str] = (),
) -> tuple[list[str], list[DropRecord]]:
    """Remove one member of every pair whose normalized MI reaches `threshold`.

    Pairs are visited by descending score. A pair is skipped if either member
    is already gone or both are protected. Otherwise the unprotected member
    with the higher raw missingness is dropped; ties go to the
    lexicographically larger name.
    """
    if not (0.0 < threshold <= 1.0):
        raise ConfigError(f"redundancy threshold must lie in (0, 1], got {threshold}")
    names = list(names)
    nmi = np.asarray(nmi, dtype=np.float64)
    if nmi.shape != (len(names), len(names)):
        raise DomainError("score matrix does not match the variable list")
    protected = set(protected)
    missingness = dict(missingness or {})
    pre_excluded = set(pre_excluded)
    pre = [n for n in names if n in pre_excluded]
    unknown = pre_excluded - set(names)
    if unknown:
        log.warning("pre-excluded variables not in data: %s", sorted(unknown))

    dropped: set[str] = set(pre)
    drops = [DropRecord(n, "", float("nan"), "pre-excluded") for n in pre]

    iu, ju = np.nonzero(np.triu(nmi >= threshold, k=1))
    order = sorted(
        zip(iu.tolist(), ju.tolist()),
        key=lambda ij: (-nmi[ij[0], ij[1]], names[ij[0]], names[ij[1]]),
    )
    for i, j in order:
        a, b = names[i], names[j]
        if a in dropped or b in dropped:
            continue
        if a in protected and b in protected:
            continue
        if a in protected:
            loser, keeper = b, a
        elif b in protected:
            loser, keeper = a, b
        else:
            ma, mb = missingness.get(a, 0.0), missingness.get(b, 0.0)
            if ma != mb:
                loser, keeper = (a, b) if ma > mb else (b, a)
            else:
                loser, keeper = (a, b) if a > b else (b, a)
        dropped.add(loser)
        drops.append(DropRecord(loser, keeper, float(nmi[i, j])))
    kept = [n for n in names if n not in dropped]
    return kept, drops


def write_drop_report(drops: Sequence[DropRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dropped", "partner", "normalized_mi", "reason"])
        for d in drops:
            w.writerow([d.dropped, d.partner, "" if math.isnan(d.score) else repr(d.score), d.reason])


@dataclass(frozen=True, eq=False)
class MiNetwork:
    """Significant MI edges among typed variables (node indices, i < j)."""

    nodes: tuple[VariableMeta, ...]
    edge_i: np.ndarray
    edge_j: np.ndarray
    mi: np.ndarray
    p_value: np.ndarray
    alpha: float
    run_id: int = 0
    within_layer: bool = False
    n_tested: int = 0
    _index: dict = field(default=None, init=False, repr=False)

    def __post_init__(self):
        ei = np.asarray(self.edge_i, dtype=np.int64)
        ej = np.asarray(self.edge_j, dtype=np.int64)
        mi = np.asarray(self.mi, dtype=np.float64)
        pv = np.asarray(self.p_value, dtype=np.float64)
        if not (ei.shape == ej.shape == mi.shape == pv.shape):
            raise DomainError("edge arrays differ in length")
        if np.any(ei >= ej):
            raise DomainError("edges must be stored once with i < j")
        if np.any(pv >= self.alpha):
            raise DomainError("network holds an edge with p >= alpha")
        if np.any(mi < 0):
            raise DomainError("negative MI edge weight")
        if not self.within_layer and ei.size:
            gi = np.array([self.nodes[i].group for i in ei.tolist()], dtype=object)
            gj = np.array([self.nodes[j].group for j in ej.tolist()], dtype=object)
            same = np.array([a == b and a in BIOMARKER_GROUPS for a, b in zip(gi, gj)])
            if same.any():
                raise DomainError("within-layer biomarker edge in a network built without them")
        for name, arr in (("edge_i", ei), ("edge_j", ej), ("mi", mi), ("p_value", pv)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "_index", {m.name: k for k, m in enumerate(self.nodes)})

    @property
    def n_edges(self) -> int:
        return int(self.edge_i.size)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(m.name for m in self.nodes)

    @property
    def partition(self) -> dict[str, Group]:
        return {m.name: m.group for m in self.nodes}

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise DomainError(f"unknown node {name!r}") from None

    def meta(self, name: str) -> VariableMeta:
        return self.nodes[self.index(name)]

    def nodes_in(self, *groups: Group) -> list[str]:
        wanted = set(groups)
        return [m.name for m in self.nodes if m.group in wanted]

    def weight_matrix(self) -> np.ndarray:
        """Dense symmetric f(X;Y) with zeros where no significant edge exists."""
        W = np.zeros((len(self.nodes), len(self.nodes)))
        W[self.edge_i, self.edge_j] = self.mi
        W[self.edge_j, self.edge_i] = self.mi
        return W

    def edges(self) -> Iterable[tuple[str, str, float, float]]:
        for i, j, w, p in zip(self.edge_i.tolist(), self.edge_j.tolist(), self.mi.tolist(), self.p_value.tolist()):
            yield self.nodes[i].name, self.nodes[j].name, w, p

    def scaled(self, c: float) -> "MiNetwork":
        return MiNetwork(self.nodes, self.edge_i, self.edge_j, self.mi * c, self.p_value,
                         self.alpha, self.run_id, self.within_layer, self.n_tested)

    def to_graph(self) -> nx.Graph:
        g = nx.Graph()
        for m in self.nodes:
            g.add_node(m.name, group=m.group.value, kind=m.kind.value)
        for a, b, w, p in self.edges():
            g.add_edge(a, b, mi_bits=w, p_value=p)
        return g

    def write_graphml(self, path: str | Path) -> None:
        nx.write_graphml(self.to_graph(), path)

    def write_edges_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["source", "target", "mi_bits", "p_value", "run_id"])
            for a, b, mi, p in self.edges():
                w.writerow([a, b, repr(mi), repr(p), self.run_id])

    @classmethod
    def read_edges_csv(cls, path: str | Path, nodes: Sequence[VariableMeta], alpha: float,
                       within_layer: bool = False, n_tested: int = 0, run_id: int | None = None) -> "MiNetwork":
        index = {m.name: k for k, m in enumerate(nodes)}
        ei, ej, mi, pv = [], [], [], []
        file_run = 0
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                i, j = index[row["source"]], index[row["target"]]
                if i > j:
                    i, j = j, i
                ei.append(i)
                ej.append(j)
                mi.append(float(row["mi_bits"]))
                pv.append(float(row["p_value"]))
                file_run = int(row["run_id"])
        run_id = file_run if run_id is None else run_id
        order = np.lexsort((ej, ei)) if ei else np.zeros(0, dtype=np.int64)
        take = lambda v, dt: np.asarray(v, dtype=dt)[order]  # noqa: E731
        return cls(tuple(nodes), take(ei, np.int64), take(ej, np.int64), take(mi, float), take(pv, float),
                   alpha, run_id, within_layer, n_tested)


def _stack(dm: DiscreteMatrix, names: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    idx = [dm.column_index()[n] for n in names]
    return np.ascontiguousarray(dm.codes[:, idx].T), np.asarray(dm.n_levels[idx], dtype=np.int64)


def _test_against(dm, x_name, partners, n_permutations, seed):
    """p-values and observed statistics for `x_name` against each partner.

    `x_name` is the shuffled side; its permutations derive from (seed, x_name)
    and are shared by every partner.
    """
    x, kx = _stack(dm, [x_name])
    Y, ky = _stack(dm, partners)
    rows = np.vstack([x, permutations_of(x[0], n_permutations, derive_seed(seed, "perm", x_name))])
    stats = joint_clogc(rows, int(kx[0]), Y, ky)
    p = _pvalues_from_stats(stats)
    degenerate = (kx[0] <= 1) | (ky <= 1)
    p[degenerate] = 1.0
    return p


def build_significant_network(
    dm: DiscreteMatrix,
    alpha: float = 0.01,
    n_permutations: int = 200,
    seed: int = 0,
    within_layer: bool = False,
) -> MiNetwork:
    """Test every admissible pair of `dm` and keep those with p < alpha.

    Admissible pairs are biomarker x non-biomarker, plus biomarker x
    biomarker inside one omics layer when `within_layer` is set (needed by
    the extended projection). The non-biomarker (or the earlier biomarker)
    is the shuffled side, with permutations seeded from ``(seed, name)``.
    """
    if not (0.0 < alpha < 1.0):
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    if n_permutations < 1:
        raise ConfigError("need at least one permutation")
    names = dm.names
    groups = {m.name: m.group for m in dm.meta}
    biomarkers = [n for n in names if groups[n] in BIOMARKER_GROUPS]
    others = [n for n in names if groups[n] not in BIOMARKER_GROUPS]
    index = dm.column_index()

    ei, ej, pv = [], [], []
    n_tested = 0
    jobs: list[tuple[str, list[str]]] = []
    if biomarkers:
        jobs.extend((x, biomarkers) for x in others)
    if within_layer:
        for layer in sorted({groups[b] for b in biomarkers}, key=lambda g: g.value):
            members = [b for b in biomarkers if groups[b] is layer]
            jobs.extend((members[a], members[a + 1:]) for a in range(len(members) - 1))
    for x_name, partners in jobs:
        p = _test_against(dm, x_name, partners, n_permutations, seed)
        n_tested += len(partners)
        for partner, pval in zip(partners, p.tolist()):
            if pval < alpha:
                i, j = index[x_name], index[partner]
                ei.append(min(i, j))
                ej.append(max(i, j))
                pv.append(pval)

    ei_a = np.asarray(ei, dtype=np.int64)
    ej_a = np.asarray(ej, dtype=np.int64)
    order = np.lexsort((ej_a, ei_a))
    ei_a, ej_a, pv_a = ei_a[order], ej_a[order], np.asarray(pv, dtype=np.float64)[order]
    mi = np.array(
        [mutual_information(joint_counts(dm.codes[:, i], dm.codes[:, j])) for i, j in zip(ei_a.tolist(), ej_a.tolist())],
        dtype=np.float64,
    )
    return MiNetwork(tuple(dm.meta), ei_a, ej_a, mi, pv_a, alpha, dm.run_id, within_layer, n_tested)


@dataclass(frozen=True)
class DirectMI:
    a: str
    b: str
    mi: float
    p_value: float


def direct_mi(dm: DiscreteMatrix, pairs: Sequence[tuple[str, str]], n_permutations: int = 200, seed: int = 0) -> list[DirectMI]:
    """MI and permutation p-value for explicit pairs, with no alpha filter."""
    by_first: dict[str, list[str]] = {}
    for a, b in pairs:
        by_first.setdefault(a, []).append(b)
    index = dm.column_index()
    found: dict[tuple[str, str], float] = {}
    for a, partners in by_first.items():
        for b, p in zip(partners, _test_against(dm, a, partners, n_permutations, seed).tolist()):
            found[(a, b)] = p
    out = []
    for a, b in pairs:
        mi = mutual_information(joint_counts(dm.codes[:, index[a]], dm.codes[:, index[b]]))
        out.append(DirectMI(a, b, mi, found[(a, b)]))
    return out

