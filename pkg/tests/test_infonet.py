from __future__ import annotations

import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from diseasenet._kernels import all_pairs_clogc, joint_clogc
from diseasenet.errors import ConfigError, DomainError
from diseasenet.infonet import (
    JointDistribution,
    MiNetwork,
    build_significant_network,
    direct_mi,
    entropy,
    joint_counts,
    mutual_information,
    normalized_mi,
    pairwise_mi,
    permutation_pvalue,
    permutations_of,
    redundancy_filter,
)
from diseasenet.ingest import Group, Kind, VariableMeta
from diseasenet.preprocess import DiscreteMatrix
from diseasenet.seeding import derive_seed
from diseasenet.synth import oracle_mi


def _dm(columns: dict[str, tuple[Group, np.ndarray]], run_id: int = 0) -> DiscreteMatrix:
    meta = tuple(VariableMeta(n, g, Kind.DISCRETE_ORDINAL) for n, (g, _) in columns.items())
    codes = np.column_stack([c for _, c in columns.values()])
    return DiscreteMatrix(meta, codes, codes.max(axis=0) + 1, run_id)


def test_joint_counts_examples():
    assert joint_counts([0, 0, 1, 1], [0, 0, 1, 1]).counts.tolist() == [[2, 0], [0, 2]]
    assert joint_counts([0, 1], [1, 0]).counts.tolist() == [[0, 1], [1, 0]]
    rng = np.random.default_rng(0)
    assert joint_counts(rng.integers(0, 5, 1000), rng.integers(0, 3, 1000)).n == 1000


def test_joint_counts_length_mismatch():
    with pytest.raises(DomainError):
        joint_counts([0, 1], [0])


@pytest.mark.parametrize("table,expected", [
    ([[1, 1], [1, 1]], 0.0),
    ([[2, 0], [0, 2]], 1.0),
    ([[1, 0], [0, 1]], 1.0),
    ([[3, 1], [1, 3]], 0.18872187554086717),
])
def test_mi_reference_tables(table, expected):
    mi = mutual_information(JointDistribution(np.array(table)))
    assert mi == pytest.approx(expected, abs=1e-12)
    assert mi == pytest.approx(oracle_mi(np.array(table)), abs=1e-15)


def test_mi_of_3113_to_five_decimals():
    assert abs(mutual_information(JointDistribution(np.array([[3, 1], [1, 3]]))) - 0.18872) <= 1e-5


def test_independent_product_table_has_zero_mi():
    assert mutual_information(JointDistribution(np.outer([1, 2, 3], [2, 5]))) == 0.0


tables = arrays(np.int64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.integers(0, 9)).filter(
    lambda a: a.sum() > 0)


@settings(max_examples=300, deadline=None)
@given(tables)
def test_mi_invariants(t):
    j = JointDistribution(t)
    mi = mutual_information(j)
    assert mi >= 0.0
    assert mi == mutual_information(j.transpose())
    assert abs(mi - oracle_mi(t)) <= 1e-12
    x = np.repeat(np.arange(t.shape[0]), t.sum(axis=1))
    assert mi <= entropy(x) + 1e-12


@settings(max_examples=100, deadline=None)
@given(arrays(np.int64, st.integers(1, 200), elements=st.integers(0, 7)))
def test_mi_with_itself_is_entropy(x):
    assert abs(mutual_information(joint_counts(x, x)) - entropy(x)) <= 1e-12


def test_perfectly_dependent_pair_has_minimal_pvalue():
    x = np.repeat([0, 1], 50)
    assert permutation_pvalue(x, x.copy(), 200, seed=1) == pytest.approx(1 / 201)


def test_constant_partner_gives_p_one():
    assert permutation_pvalue(np.arange(10) % 3, np.zeros(10, dtype=int), 200) == 1.0


def test_permutation_pvalue_matches_literal_loop():
    rng = np.random.default_rng(5)
    x = rng.integers(0, 3, 60)
    y = (x + rng.integers(0, 2, 60)) % 3
    seed = 77
    observed = mutual_information(joint_counts(x, y))
    perms = permutations_of(y, 200, seed)
    exceed = sum(mutual_information(joint_counts(x, p)) >= observed - 1e-12 for p in perms)
    assert permutation_pvalue(x, y, 200, seed) == (1 + exceed) / 201


def test_permutations_are_shuffles():
    v = np.arange(30)
    perms = permutations_of(v, 5, 3)
    assert all(sorted(p.tolist()) == v.tolist() for p in perms)
    assert np.array_equal(perms, permutations_of(v, 5, 3))


def _clogc_reference(a, b):
    c = joint_counts(a, b).counts.astype(float)
    c = c[c > 0]
    return float(np.sum(c * np.log2(c)))


def test_joint_kernel_matches_reference():
    rng = np.random.default_rng(9)
    rows = rng.integers(0, 4, size=(6, 120))
    fixed = rng.integers(0, 7, size=(5, 120))
    stats = joint_clogc(rows, 4, fixed, fixed.max(axis=1) + 1)
    for r in range(6):
        for k in range(5):
            assert stats[r, k] == pytest.approx(_clogc_reference(rows[r], fixed[k]), rel=1e-12)


def test_all_pairs_kernel_matches_reference():
    rng = np.random.default_rng(10)
    cols = rng.integers(0, 5, size=(7, 90))
    stats = all_pairs_clogc(cols, cols.max(axis=1) + 1)
    for i in range(7):
        assert stats[i, i] == 0.0
        for j in set(range(7)) - {i}:
            assert stats[i, j] == pytest.approx(_clogc_reference(cols[i], cols[j]), rel=1e-12)


def test_pairwise_mi_agrees_with_single_pair_estimator():
    rng = np.random.default_rng(11)
    base = rng.integers(0, 4, 300)
    dm = _dm({
        "a": (Group.METABOLOME, base),
        "b": (Group.LIPIDOME, (base + rng.integers(0, 2, 300)) % 4),
        "c": (Group.CVD_PHENOTYPE, rng.integers(0, 6, 300)),
        "k": (Group.RISK_FACTOR, np.zeros(300, dtype=int)),
    })
    mi, h = pairwise_mi(dm)
    for i in range(4):
        assert h[i] == pytest.approx(entropy(dm.codes[:, i]), abs=1e-12)
        for j in range(4):
            assert mi[i, j] == pytest.approx(mutual_information(joint_counts(dm.codes[:, i], dm.codes[:, j])), abs=1e-12)
    nmi = normalized_mi(mi, h)
    assert np.allclose(nmi, nmi.T)
    assert np.all(nmi[3] == 0) and np.all((0 <= nmi) & (nmi <= 1))


def test_duplicate_column_drops_exactly_one():
    names = ["a", "b", "c"]
    nmi = np.array([[1, 1, 0.1], [1, 1, 0.1], [0.1, 0.1, 1]])
    kept, drops = redundancy_filter(names, nmi)
    assert kept == ["a", "c"]
    assert [(d.dropped, d.partner) for d in drops] == [("b", "a")]


def test_nothing_dropped_below_threshold():
    nmi = np.full((4, 4), 0.5)
    np.fill_diagonal(nmi, 1)
    kept, drops = redundancy_filter(list("wxyz"), nmi, 0.8)
    assert kept == list("wxyz") and drops == []


def test_drop_rule_missingness_then_name_then_protection():
    nmi = np.array([[1, 0.9], [0.9, 1]])
    assert redundancy_filter(["a", "b"], nmi, missingness={"a": 0.2, "b": 0.1})[0] == ["b"]
    assert redundancy_filter(["a", "b"], nmi, missingness={"a": 0.1, "b": 0.1})[0] == ["a"]
    assert redundancy_filter(["a", "b"], nmi, protected=["b"])[0] == ["b"]
    assert redundancy_filter(["a", "b"], nmi, protected=["a", "b"])[0] == ["a", "b"]


def test_pre_excluded_variables_never_return():
    nmi = np.eye(3)
    kept, drops = redundancy_filter(["a", "b", "c"], nmi, pre_excluded=iter(["b"]))
    assert kept == ["a", "c"] and drops[0].reason == "pre-excluded"


@pytest.mark.parametrize("threshold", [0.0, -0.1, 1.5])
def test_threshold_range(threshold):
    with pytest.raises(ConfigError):
        redundancy_filter(["a"], np.eye(1), threshold)


def test_699_variables_with_115_near_duplicates_keep_584():
    rng = np.random.default_rng(584)
    n = 1686
    base = rng.integers(0, 12, size=(n, 584))
    src = rng.choice(584, size=115, replace=False)
    dups = base[:, src].copy()
    flip = rng.random(dups.shape) < 0.03
    dups[flip] = rng.integers(0, 12, size=int(flip.sum()))
    codes = np.hstack([base, dups])
    meta = tuple(VariableMeta(f"v{j:03d}", Group.METABOLOME, Kind.CONTINUOUS) for j in range(699))
    dm = DiscreteMatrix(meta, codes, np.full(699, 12))
    kept, drops = redundancy_filter(dm.names, normalized_mi(*pairwise_mi(dm)), 0.8)
    assert len(kept) == 584
    assert len(drops) == 115


def _noise_dm(n_bio, n_other, n=200, seed=0):
    rng = np.random.default_rng(seed)
    cols = {f"y{i:03d}": (Group.METABOLOME, rng.integers(0, 4, n)) for i in range(n_bio)}
    cols |= {f"x{i:03d}": (Group.CVD_PHENOTYPE, rng.integers(0, 4, n)) for i in range(n_other)}
    return _dm(cols)


def test_network_only_links_across_groups_and_respects_alpha():
    net = build_significant_network(_noise_dm(20, 20, seed=1), alpha=0.05, n_permutations=100, seed=3)
    assert net.n_tested == 400
    for a, b, w, p in net.edges():
        assert {a[0], b[0]} == {"x", "y"}
        assert p < 0.05 and w >= 0


def test_planted_strong_pair_always_retained():
    rng = np.random.default_rng(12)
    hits = 0
    for run in range(20):
        x = rng.integers(0, 4, 1500)
        y = np.where(rng.random(1500) < 0.7, x, rng.integers(0, 4, 1500))
        dm = _dm({"y": (Group.LIPIDOME, y), "x": (Group.DEPRESSIVE_SYMPTOM, x)}, run_id=run)
        assert mutual_information(joint_counts(x, y)) > 0.4
        hits += build_significant_network(dm, 0.01, 200, seed=run).n_edges
    assert hits == 20


def test_network_is_deterministic_for_a_seed():
    dm = _noise_dm(10, 5, seed=2)
    a = build_significant_network(dm, 0.2, 50, seed=5)
    b = build_significant_network(dm, 0.2, 50, seed=5)
    assert list(a.edges()) == list(b.edges())


def test_network_pvalues_match_literal_loop():
    rng = np.random.default_rng(13)
    x = rng.integers(0, 3, 80)
    ys = [np.where(rng.random(80) < s, x, rng.integers(0, 3, 80)) for s in (0.0, 0.3, 0.6)]
    dm = _dm({"x": (Group.CVD_PHENOTYPE, x)} | {f"y{i}": (Group.METABOLOME, y) for i, y in enumerate(ys)})
    net = build_significant_network(dm, alpha=0.999, n_permutations=100, seed=4)
    perms = permutations_of(x, 100, derive_seed(4, "perm", "x"))
    for a, b, _, p in net.edges():
        y = dm.codes[:, dm.column_index()[b if a == "x" else a]]
        obs = mutual_information(joint_counts(x, y))
        exceed = sum(mutual_information(joint_counts(q, y)) >= obs - 1e-12 for q in perms)
        assert p == (1 + exceed) / 101


def test_within_layer_edges_only_when_requested():
    rng = np.random.default_rng(14)
    y0 = rng.integers(0, 3, 300)
    dm = _dm({"y0": (Group.METABOLOME, y0), "y1": (Group.METABOLOME, y0.copy()),
              "x": (Group.CVD_PHENOTYPE, rng.integers(0, 3, 300))})
    assert ("y0", "y1") not in {(a, b) for a, b, _, _ in build_significant_network(dm, 0.01, 100).edges()}
    net = build_significant_network(dm, 0.01, 100, within_layer=True)
    assert ("y0", "y1") in {(a, b) for a, b, _, _ in net.edges()}


def test_network_validation():
    nodes = (VariableMeta("y", Group.METABOLOME, Kind.CONTINUOUS), VariableMeta("z", Group.METABOLOME, Kind.CONTINUOUS))
    with pytest.raises(DomainError):
        MiNetwork(nodes, [0], [1], [0.1], [0.0], 0.01)
    with pytest.raises(DomainError):
        MiNetwork(nodes, [1], [0], [0.1], [0.0], 0.01, within_layer=True)
    with pytest.raises(DomainError):
        MiNetwork(nodes, [0], [1], [0.1], [0.5], 0.01, within_layer=True)


def test_edge_list_and_graphml_round_trip(tmp_path):
    rng = np.random.default_rng(15)
    x = rng.integers(0, 3, 300)
    dm = _dm({"y": (Group.METABOLOME, x), "x": (Group.CVD_PHENOTYPE, x), "z": (Group.LIPIDOME, rng.integers(0, 3, 300))},
             run_id=4)
    net = build_significant_network(dm, 0.01, 100)
    net.write_edges_csv(tmp_path / "e.csv")
    back = MiNetwork.read_edges_csv(tmp_path / "e.csv", net.nodes, 0.01)
    assert list(back.edges()) == list(net.edges()) and back.run_id == 4
    net.write_graphml(tmp_path / "n.graphml")
    g = nx.read_graphml(tmp_path / "n.graphml")
    assert g.number_of_nodes() == 3 and g.nodes["y"]["group"] == "metabolome"
    assert g.edges["y", "x"]["mi_bits"] == pytest.approx(net.mi[0])


def test_direct_mi_keeps_every_pair():
    dm = _noise_dm(0, 4, n=150, seed=6)
    pairs = [("x000", "x001"), ("x002", "x003"), ("x000", "x003")]
    out = direct_mi(dm, pairs, 50, seed=1)
    assert [(d.a, d.b) for d in out] == pairs
    for d in out:
        codes = dm.codes[:, [dm.column_index()[d.a], dm.column_index()[d.b]]]
        assert d.mi == mutual_information(joint_counts(codes[:, 0], codes[:, 1]))
        assert 1 / 51 <= d.p_value <= 1
    assert math.isfinite(sum(d.mi for d in out))
