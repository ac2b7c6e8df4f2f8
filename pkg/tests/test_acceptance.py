"""Acceptance criteria, one test each.

Every test appends a single ``CRITERION k: PASS|FAIL ...`` line that is
echoed in the terminal summary. Criteria 8-11 run the full command line
pipeline and take several minutes each.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from diseasenet.cli import main
from diseasenet.errors import InsufficientDataError
from diseasenet.infonet import (
    JointDistribution,
    build_significant_network,
    entropy,
    joint_counts,
    mutual_information,
    permutation_pvalue,
)
from diseasenet.ingest import Group, Kind, VariableMeta
from diseasenet.preprocess import DiscreteMatrix
from diseasenet.projection import (
    PairScope,
    contributions,
    project_layer,
    project_pair,
    rank_contributions,
    relative_importance,
    scope_pairs,
)
from diseasenet.seeding import derive_seed
from diseasenet.synth import GroundTruth, oracle_mi, oracle_projection, recovery_metrics

from conftest import ACCEPTANCE_LINES, random_network

LAYERS = (Group.METABOLOME, Group.LIPIDOME)
RECOVERY_SEEDS = tuple(range(10))


def report(k: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


# --- 1 ----------------------------------------------------------------------

def _compositions(n: int, parts: int):
    """All ways to write n as an ordered sum of `parts` non-negative integers."""
    for cuts in itertools.combinations(range(n + parts - 1), parts - 1):
        prev, out = -1, []
        for c in cuts:
            out.append(c - prev - 1)
            prev = c
        out.append(n + parts - 2 - prev)
        yield out


def _table_family():
    # exhaustive: every 2x2 table with n <= 24, every 2x3 / 3x2 with n <= 10, every 3x3 with n <= 6
    for shape, n_max in (((2, 2), 24), ((2, 3), 10), ((3, 2), 10), ((3, 3), 6)):
        cells = shape[0] * shape[1]
        for n in range(1, n_max + 1):
            for comp in _compositions(n, cells):
                yield np.array(comp, dtype=np.int64).reshape(shape)
    # random tables of every shape up to 6x6 with 1 <= n <= 24
    rng = np.random.default_rng(1)
    for _ in range(70_000):
        r, c = rng.integers(1, 7, size=2)
        n = int(rng.integers(1, 25))
        yield np.bincount(rng.integers(0, r * c, size=n), minlength=r * c).reshape(r, c)


def test_criterion_01_mi_matches_summation_oracle():
    start = time.perf_counter()
    count, worst = 0, 0.0
    for t in _table_family():
        worst = max(worst, abs(mutual_information(JointDistribution(t)) - oracle_mi(t)))
        count += 1
    elapsed = time.perf_counter() - start
    ok = count >= 100_000 and worst <= 1e-12 and elapsed < 60
    report(1, ok, f"{count} tables, max |MI - oracle| = {worst:.2e} (tol 1e-12), {elapsed:.1f} s (limit 60 s)")
    assert ok


# --- 2 ----------------------------------------------------------------------

def test_criterion_02_mi_properties():
    rng = np.random.default_rng(2)
    asym = nonneg = merge_viol = 0
    worst_self = 0.0
    for _ in range(10_000):
        r, c = rng.integers(2, 7, size=2)
        n = int(rng.integers(2, 300))
        x = rng.integers(0, r, n)
        y = np.where(rng.random(n) < rng.random(), x % c, rng.integers(0, c, n))
        j = joint_counts(x, y)
        mi = mutual_information(j)
        asym += mi != mutual_information(j.transpose())
        nonneg += mi < 0
        worst_self = max(worst_self, abs(mutual_information(joint_counts(x, x)) - entropy(x)))
        # merging two levels of x is a coarsening and cannot raise MI
        a, b = rng.choice(int(x.max()) + 1, size=2, replace=False) if x.max() > 0 else (0, 0)
        merged = np.where(x == b, a, x)
        merge_viol += mutual_information(joint_counts(merged, y)) > mi + 1e-12
    self_err = worst_self
    ok = asym == 0 and nonneg == 0 and self_err <= 1e-12 and merge_viol == 0
    report(2, ok, f"10000 tables: asymmetric={int(asym)}, negative={int(nonneg)}, "
                  f"max |MI(X;X)-H(X)|={self_err:.1e}, merge increases={int(merge_viol)}")
    assert ok


# --- 3 ----------------------------------------------------------------------

def test_criterion_03_permutation_calibration():
    rng = np.random.default_rng(3)
    pvals = []
    for t in range(500):
        x, y = rng.integers(0, 4, 200), rng.integers(0, 4, 200)
        pvals.append(permutation_pvalue(x, y, 200, seed=derive_seed(3, "trial", t)))
    ks = stats.kstest(pvals, "uniform").statistic

    n = 200
    cols = {f"y{i:03d}": (Group.METABOLOME, rng.integers(0, 4, n)) for i in range(100)}
    cols |= {f"x{i:03d}": (Group.CVD_PHENOTYPE, rng.integers(0, 4, n)) for i in range(100)}
    meta = tuple(VariableMeta(k, g, Kind.DISCRETE_ORDINAL) for k, (g, _) in cols.items())
    codes = np.column_stack([v for _, v in cols.values()])
    net = build_significant_network(DiscreteMatrix(meta, codes, np.full(200, 4)), 0.01, 200, seed=3)
    rate = net.n_edges / net.n_tested

    ok = ks < 0.05 and abs(rate - 0.01) <= 0.005 and net.n_tested == 10_000
    report(3, ok, f"KS vs uniform = {ks:.4f} (< 0.05, 500 trials); noise edge rate = {rate:.4f} "
                  f"({net.n_edges}/{net.n_tested}, target 0.01 +/- 0.005)")
    assert ok


# --- 4, 5, 6 ------------------------------------------------------------------

def _random_networks(seed: int, count: int):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        sizes = rng.integers(1, 11, size=5)  # <= 50 nodes
        yield random_network(rng, *map(int, sizes), density=float(rng.random()))


def test_criterion_04_projection_matches_triple_loop():
    mismatches = checked = direct_checked = 0
    rng = np.random.default_rng(44)
    for net in _random_networks(4, 1000):
        for definition in ("average", "count"):
            oracle = oracle_projection(net, definition)
            for layer in LAYERS:
                expected = oracle.get(layer.value)
                if expected is None:
                    continue
                got = project_layer(net, PairScope.ALL, layer, definition, include_risk_pairs=True).weights()
                for pair, w in expected.items():
                    mismatches += got.get(pair, 0.0) != w
                    checked += 1
                # the single-pair entry point on a sample of pairs
                for idx in rng.choice(len(expected), size=min(3, len(expected)), replace=False):
                    pair = list(expected)[idx]
                    mismatches += project_pair(net, *pair, layer, definition) != expected[pair]
                    direct_checked += 1
    ok = mismatches == 0
    report(4, ok, f"1000 networks, {checked} layer scores + {direct_checked} single-pair scores, "
                  f"{mismatches} not bit-identical to the oracle")
    assert ok


def test_criterion_05_exchange_identity():
    worst, count = 0.0, 0
    for net in _random_networks(5, 1000):
        for layer in LAYERS:
            for scope in PairScope:
                con = contributions(net, layer, scope)
                w = project_layer(net, scope, layer).weights()
                worst = max(worst, abs(math.fsum(con.values()) - math.fsum(w.values())))
                count += 1
    ok = worst <= 1e-12
    report(5, ok, f"{count} (network, layer, scope) cases, max |sum CON - sum w| = {worst:.1e} (tol 1e-12)")
    assert ok


@pytest.mark.filterwarnings("ignore:single run:RuntimeWarning")
def test_criterion_06_scale_equivariance():
    c = 3.7
    w_err = con_err = r_err = 0.0
    order_changes = 0
    for net in _random_networks(6, 300):
        big = net.scaled(c)
        groups = {m.name: m.group for m in net.nodes}
        layers, layers_big = [], []
        for layer in LAYERS:
            w, w2 = project_layer(net, "all", layer), project_layer(big, "all", layer)
            layers.append(w)
            layers_big.append(w2)
            a, b = w.weights(), w2.weights()
            w_err = max([w_err] + [abs(b[p] - c * a[p]) for p in a])
            order_changes += sorted(a, key=lambda p: (-a[p], p)) != sorted(b, key=lambda p: (-b[p], p))
            for scope in PairScope:
                con, con2 = contributions(net, layer, scope), contributions(big, layer, scope)
                con_err = max([con_err] + [abs(con2[k] - c * con[k]) for k in con])
                order_changes += rank_contributions([con]).names() != rank_contributions([con2]).names()
        try:
            ra, rb = relative_importance(layers, groups), relative_importance(layers_big, groups)
        except InsufficientDataError:
            continue
        r_err = max([r_err] + [abs(ra.per_phenotype[k] - rb.per_phenotype[k]) for k in ra.per_phenotype])
    ok = w_err <= 1e-9 and con_err <= 1e-9 and order_changes == 0 and r_err <= 1e-12
    report(6, ok, f"c=3.7 on 300 networks: max w error {w_err:.1e}, max CON error {con_err:.1e} (tol 1e-9), "
                  f"order changes {order_changes}, max r change {r_err:.1e} (tol 1e-12)")
    assert ok


# --- shared synthetic runs for 7, 8, 9 ---------------------------------------

@pytest.fixture(scope="session")
def recovery_runs(tmp_path_factory):
    """Full pipeline on one planted dataset per seed, default settings."""
    root = tmp_path_factory.mktemp("recovery")
    runs = {}
    for seed in RECOVERY_SEEDS:
        data = root / f"seed_{seed}"
        start = time.perf_counter()
        assert main(["synth", "--out", str(data), "--seed", str(seed)]) == 0
        assert main(["all", "--config", str(data / "pipeline.yaml")]) == 0
        runs[seed] = (data, data / "out", time.perf_counter() - start)
    return runs


@pytest.mark.slow
def test_criterion_07_relative_importance_normalization(recovery_runs):
    worst = 0.0
    for net in _random_networks(7, 300):
        groups = {m.name: m.group for m in net.nodes}
        try:
            ri = relative_importance([project_layer(net, "all", g) for g in LAYERS], groups)
        except InsufficientDataError:
            continue
        per_x: dict[str, list[float]] = {}
        for (z, x), r in ri.per_phenotype.items():
            per_x.setdefault(x, []).append(r)
        worst = max([worst] + [abs(math.fsum(v) - 1.0) for v in per_x.values()])

    # column sums of a reference 2-decimal risk-factor table, and of every emitted table
    reference = {"CVD": [4.25, 31.15, 8.03, 8.76, 40.82, 7.00], "Depression": [6.39, 27.63, 5.04, 8.71, 47.64, 4.58]}
    reference_sums = {k: round(sum(v), 2) for k, v in reference.items()}
    fmt_ok = reference_sums == {"CVD": 100.01, "Depression": 99.99}
    emitted = []
    for _, out, _ in recovery_runs.values():
        rows = list(csv.reader(open(out / "importance" / "relative_importance.csv")))
        fmt_ok &= rows[0] == ["risk_factor", "CVD(%)", "Depression(%)"]
        fmt_ok &= all(len(v.split(".")[1]) == 2 for r in rows[1:] for v in r[1:])
        for j in (1, 2):
            s = sum(float(r[j]) for r in rows[1:])
            emitted.append(s)
            fmt_ok &= abs(s - 100) <= 0.005 * (len(rows) - 1) + 1e-9
    ok = worst <= 1e-12 and fmt_ok
    report(7, ok, f"max |sum_z r - 1| = {worst:.1e} (tol 1e-12); reference sums {reference_sums}; "
                  f"emitted column sums in [{min(emitted):.2f}, {max(emitted):.2f}]")
    assert ok


@pytest.mark.slow
def test_criterion_08_mediator_recovery(recovery_runs):
    per_seed = []
    for seed, (data, out, elapsed) in recovery_runs.items():
        truth = GroundTruth.from_json(data / "truth.json")
        vals = []
        for layer in LAYERS:
            path = out / "contribute" / "cvd-x-depression" / f"{layer.value}_ranking.csv"
            scored = [(r["name"], float(r["mean_con"])) for r in csv.DictReader(open(path))]
            vals.append(recovery_metrics(scored, truth, k=10, layer=layer.value))
        per_seed.append((seed, float(np.mean([v[0] for v in vals])), float(np.mean([v[1] for v in vals])), elapsed))
    precision = float(np.mean([p for _, p, _, _ in per_seed]))
    auc = float(np.mean([a for _, _, a, _ in per_seed]))
    mean_time = float(np.mean([t for *_, t in per_seed]))
    ok = precision >= 0.8 and auc >= 0.9
    detail = ", ".join(f"s{s}:{p:.2f}/{a:.3f}" for s, p, a, _ in per_seed)
    report(8, ok, f"seeds {list(RECOVERY_SEEDS)}: mean precision@10 = {precision:.3f} (>= 0.8), mean AUC = {auc:.3f} "
                  f"(>= 0.9); per seed p@10/AUC {detail}; {mean_time:.0f} s per seed on 1 core")
    assert ok


@pytest.mark.slow
def test_criterion_09_projection_tracks_direct_mi(recovery_runs):
    fits = []
    for seed, (_, out, _) in recovery_runs.items():
        fit = json.loads((out / "compare" / "fit.json").read_text())["combined"]
        fits.append((seed, fit["pearson_r_loglog"], fit["slope_p_value"], fit["n_used"]))
    ok = all(r > 0.3 and p < 0.05 for _, r, p, _ in fits)
    detail = ", ".join(f"s{s}: r={r:.2f} p={p:.1e} n={n}" for s, r, p, n in fits)
    report(9, ok, f"every seed needs r > 0.3 and slope p < 0.05; {detail}")
    assert ok


# --- 10 -----------------------------------------------------------------------

def _tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.slow
def test_criterion_10_determinism_across_parallelism(tmp_path):
    data = tmp_path / "data"
    assert main(["synth", "--out", str(data), "--seed", "10", "--n-rows", "800", "--layer-size", "80",
                 "--n-imputations", "8"]) == 0
    trees = {}
    for label, workers in (("first", "1"), ("second", "1"), ("eight", "8")):
        out = tmp_path / label
        assert main(["all", "--config", str(data / "pipeline.yaml"), "--out", str(out), "--parallelism", workers]) == 0
        trees[label] = _tree(out)
    same = trees["first"] == trees["second"] == trees["eight"]
    report(10, same, f"3 full runs (parallelism 1, 1, 8), {len(trees['first'])} files each, "
                     f"{'byte-identical' if same else 'DIFFERENT'}")
    assert same


# --- 11 -----------------------------------------------------------------------

_MEASURE = """
import json, resource, sys, time
from diseasenet.cli import main
from diseasenet.errors import InsufficientDataError
t = time.perf_counter()
code = main(sys.argv[1:])
rss = max(resource.getrusage(resource.RUSAGE_SELF).ru_maxrss, resource.getrusage(resource.RUSAGE_CHILDREN).ru_maxrss)
print(json.dumps({"code": code, "seconds": time.perf_counter() - t, "max_rss_mb": rss / 1024}))
"""


@pytest.mark.slow
def test_criterion_11_scale(tmp_path):
    data = tmp_path / "data"
    # 200 + 350 biomarkers, 7 CVD phenotypes, 21 symptoms, 6 risk factors = 584 variables
    assert main(["synth", "--out", str(data), "--seed", "11", "--n-rows", "1686", "--layer-size", "200",
                 "--lipidome-size", "350", "--phenotypes", "7", "--symptoms", "21", "--risk-factors", "6"]) == 0
    proc = subprocess.run([sys.executable, "-c", _MEASURE, "all", "--config", str(data / "pipeline.yaml")],
                          capture_output=True, text=True)
    stats_ = json.loads(proc.stdout.strip().splitlines()[-1])
    merged = json.loads((data / "out" / "validate" / "summary.json").read_text())
    n_vars, n_rows = merged["n_variables"], merged["n_rows"]
    ok = (stats_["code"] == 0 and n_vars == 584 and n_rows == 1686 and stats_["seconds"] < 15 * 60
          and stats_["max_rss_mb"] < 4096)
    report(11, ok, f"{n_vars} variables x {n_rows} rows, 20 imputations, B=200: {stats_['seconds']:.0f} s "
                   f"(< 900 s) on 1 core, peak RSS {stats_['max_rss_mb']:.0f} MB (< 4096 MB)")
    assert ok

