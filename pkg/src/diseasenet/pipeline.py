"""Stage runners behind the command line.

Every stage reads the artifacts of the stage before it from the output
directory and writes its own, then records them in ``manifest.json``
together with the config hash and the seed trace. Work inside a stage is
split into per-run tasks whose seeds are derived from the master seed, so
outputs do not depend on the number of worker processes.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .config import PipelineConfig, dump_resolved
from .errors import ConfigError, InsufficientDataError, StageOrderError
from .infonet import (
    MiNetwork,
    build_significant_network,
    direct_mi,
    normalized_mi,
    pairwise_mi,
    redundancy_filter,
    write_drop_report,
)
from .ingest import BIOMARKER_GROUPS, DataTable, Group, Kind, VariableMeta, load_table, merge_on_participant, write_table
from .preprocess import preprocess_run, read_discrete, write_discrete
from .projection import (
    AggregatedLayer,
    PairScope,
    ProjectedLayer,
    aggregate_runs,
    combine_layers,
    compare_projection_to_direct_mi,
    contributions,
    mean_se,
    project_layer,
    rank_contributions,
    relative_importance,
    scope_pairs,
)
from .seeding import derive_seed, run_seed

log = logging.getLogger(__name__)

STAGES = ("validate", "preprocess", "network", "project", "contribute", "importance", "compare")
MANIFEST = "manifest.json"
MERGED = "validate/merged.csv"
MERGED_SCHEMA = "validate/merged.schema.yaml"


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _read_json(path: Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


@dataclass
class Context:
    cfg: PipelineConfig
    out: Path
    workers: int = 1

    @classmethod
    def create(cls, cfg: PipelineConfig, out: Path | None = None, workers: int | None = None) -> "Context":
        out = Path(out) if out is not None else cfg.output_path()
        out.mkdir(parents=True, exist_ok=True)
        return cls(cfg, out, workers or cfg.workers())

    def path(self, rel: str) -> Path:
        return self.out / rel

    def run_dir(self, stage: str, run_id: int) -> Path:
        return self.out / stage / f"run_{run_id:03d}"

    def map(self, fn: Callable, items: Sequence) -> list:
        """Ordered map, in worker processes when more than one is allowed."""
        if self.workers <= 1 or len(items) <= 1:
            return [fn(x) for x in items]
        with ProcessPoolExecutor(max_workers=min(self.workers, len(items))) as pool:
            return list(pool.map(fn, items))

    # manifest -------------------------------------------------------------

    def manifest(self) -> dict:
        p = self.path(MANIFEST)
        return _read_json(p) if p.exists() else {}

    def require(self, stage: str) -> None:
        m = self.manifest()
        if stage not in m.get("stages", {}):
            raise StageOrderError(f"stage {stage!r} has not been run in {self.out}")
        if m.get("config_hash") != self.cfg.config_hash():
            raise ConfigError(
                f"artifacts in {self.out} were produced with a different configuration; rerun from {stage!r} or use a new output directory"
            )

    def record(self, stage: str, artifacts: Iterable[Path]) -> None:
        m = self.manifest()
        if m.get("config_hash") not in (None, self.cfg.config_hash()):
            # a new configuration invalidates everything downstream of this stage
            m["stages"] = {k: v for k, v in m.get("stages", {}).items() if STAGES.index(k) < STAGES.index(stage)}
        m["config_hash"] = self.cfg.config_hash()
        m["master_seed"] = self.cfg.master_seed
        m["seed_trace"] = seed_trace(self.cfg)
        m["inputs"] = {
            str(Path(t.csv)): sha256_file(c) for t, (c, _) in zip(self.cfg.tables, self.cfg.table_paths())
        } | {str(Path(t.schema)): sha256_file(s) for t, (_, s) in zip(self.cfg.tables, self.cfg.table_paths())}
        rels = sorted(str(Path(a).relative_to(self.out)) for a in artifacts)
        m.setdefault("stages", {})[stage] = {"artifacts": {r: sha256_file(self.out / r) for r in rels}}
        dump_resolved(self.cfg, self.path("config.resolved.yaml"))
        _write_json(self.path(MANIFEST), m)


def seed_trace(cfg: PipelineConfig) -> list[dict]:
    return [
        {"run_id": r, "run_seed": run_seed(cfg.master_seed, r), "network_seed": network_seed(cfg.master_seed, r)}
        for r in range(cfg.n_imputations)
    ]


def network_seed(master: int, run_id: int) -> int:
    return derive_seed(master, "network", run_id)


# --- validate ---------------------------------------------------------------

def stage_validate(ctx: Context) -> DataTable:
    tables = [load_table(c, s) for c, s in ctx.cfg.table_paths()]
    merged = tables[0] if len(tables) == 1 else merge_on_participant(tables)
    d = ctx.path("validate")
    d.mkdir(exist_ok=True)
    write_table(merged, ctx.path(MERGED), ctx.path(MERGED_SCHEMA))
    with open(d / "missingness.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variable", "group", "kind", "missing_fraction"])
        for col in merged.columns:
            w.writerow([col.meta.name, col.meta.group.value, col.meta.kind.value, repr(col.missingness)])
    summary = {
        "n_rows": merged.n_rows,
        "n_variables": len(merged.columns),
        "input_rows": {str(t.csv): tab.n_rows for t, tab in zip(ctx.cfg.tables, tables)},
        "variables_per_group": {g.value: sum(c.meta.group is g for c in merged.columns) for g in Group},
    }
    _write_json(d / "summary.json", summary)
    ctx.record("validate", [ctx.path(MERGED), ctx.path(MERGED_SCHEMA), d / "missingness.csv", d / "summary.json"])
    log.info("validate: %d participants, %d variables", merged.n_rows, len(merged.columns))
    return merged


@functools.lru_cache(maxsize=2)
def _merged(out: str) -> DataTable:
    return load_table(Path(out) / MERGED, Path(out) / MERGED_SCHEMA)


# --- preprocess -------------------------------------------------------------

def _preprocess_task(args) -> list[str]:
    out, master, run_id = args
    dm = preprocess_run(_merged(out), master, run_id)
    d = Path(out) / "preprocess" / f"run_{run_id:03d}"
    write_discrete(dm, d)
    return [str(d / "codes.csv"), str(d / "levels.json")]


def stage_preprocess(ctx: Context) -> None:
    ctx.require("validate")
    _merged.cache_clear()
    runs = range(ctx.cfg.n_imputations)
    written = ctx.map(_preprocess_task, [(str(ctx.out), ctx.cfg.master_seed, r) for r in runs])
    ctx.record("preprocess", [Path(p) for ps in written for p in ps])
    log.info("preprocess: %d imputation runs", ctx.cfg.n_imputations)


# --- network ----------------------------------------------------------------

def _nmi_task(args) -> np.ndarray:
    out, run_id = args
    dm = read_discrete(Path(out) / "preprocess" / f"run_{run_id:03d}")
    mi, h = pairwise_mi(dm)
    return normalized_mi(mi, h)


def _network_task(args):
    out, run_id, kept, alpha, n_perm, seed, within, direct_pairs = args
    dm = read_discrete(Path(out) / "preprocess" / f"run_{run_id:03d}").subset(kept)
    net = build_significant_network(dm, alpha, n_perm, seed, within)
    d = Path(out) / "network" / f"run_{run_id:03d}"
    d.mkdir(parents=True, exist_ok=True)
    net.write_edges_csv(d / "edges.csv")
    net.write_graphml(d / "network.graphml")
    direct = direct_mi(dm, direct_pairs, n_perm, derive_seed(seed, "direct"))
    return [str(d / "edges.csv"), str(d / "network.graphml")], net.n_edges, net.n_tested, direct


def write_nodes(nodes: Sequence[VariableMeta], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "group", "kind", "units"])
        for m in nodes:
            w.writerow([m.name, m.group.value, m.kind.value, m.units])


def read_nodes(path: Path) -> tuple[VariableMeta, ...]:
    with open(path, newline="", encoding="utf-8") as fh:
        return tuple(VariableMeta(r["name"], Group(r["group"]), Kind(r["kind"]), r["units"]) for r in csv.DictReader(fh))


def stage_network(ctx: Context) -> None:
    ctx.require("preprocess")
    cfg = ctx.cfg
    runs = list(range(cfg.n_imputations))
    d = ctx.path("network")
    d.mkdir(exist_ok=True)

    merged = load_table(ctx.path(MERGED), ctx.path(MERGED_SCHEMA))
    nmis = ctx.map(_nmi_task, [(str(ctx.out), r) for r in runs])
    mean_nmi = np.zeros_like(nmis[0])
    for m in nmis:
        mean_nmi += m
    mean_nmi /= len(nmis)
    kept, drops = redundancy_filter(merged.names, mean_nmi, cfg.redundancy_threshold, cfg.protected,
                                    merged.missingness(), cfg.pre_excluded)
    write_drop_report(drops, d / "drop_report.csv")
    meta = {m.name: m for m in merged.meta}
    nodes = tuple(meta[k] for k in kept)
    write_nodes(nodes, d / "nodes.csv")

    probe = MiNetwork(nodes, [], [], [], [], cfg.alpha)
    direct_pairs = scope_pairs(probe, PairScope.ALL, include_risk_pairs=True)
    results = ctx.map(_network_task, [
        (str(ctx.out), r, kept, cfg.alpha, cfg.permutations, network_seed(cfg.master_seed, r), cfg.within_layer,
         direct_pairs)
        for r in runs
    ])

    with open(d / "direct_mi.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_a", "node_b", "run_id", "mi_bits", "p_value"])
        for r, (_, _, _, direct) in zip(runs, results):
            for rec in direct:
                w.writerow([rec.a, rec.b, r, repr(rec.mi), repr(rec.p_value)])

    nets = [load_network(ctx, r, nodes) for r in runs]
    _write_mean_network(nets, nodes, d)
    summary = {
        "n_variables_in": len(merged.names),
        "n_kept": len(kept),
        "n_dropped": len(drops),
        "alpha": cfg.alpha,
        "permutations": cfg.permutations,
        "runs": [{"run_id": r, "n_edges": res[1], "n_tested": res[2]} for r, res in zip(runs, results)],
    }
    _write_json(d / "summary.json", summary)
    artifacts = [Path(p) for res in results for p in res[0]]
    artifacts += [d / n for n in ("drop_report.csv", "nodes.csv", "direct_mi.csv", "mean_edges.csv",
                                  "mean_network.graphml", "summary.json")]
    ctx.record("network", artifacts)
    log.info("network: kept %d of %d variables; mean %.1f edges per run", len(kept), len(merged.names),
             np.mean([res[1] for res in results]))


def _write_mean_network(nets: Sequence[MiNetwork], nodes, d: Path) -> None:
    import networkx as nx

    runs = [{(a, b): w for a, b, w, _ in net.edges()} for net in nets]
    per_edge = set().union(*runs)
    g = nx.Graph()
    for m in nodes:
        g.add_node(m.name, group=m.group.value, kind=m.kind.value)
    with open(d / "mean_edges.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "target", "mean_mi_bits", "se_mi_bits", "n_runs", "n_present"])
        for pair in sorted(per_edge):
            mean, se = mean_se([r.get(pair, 0.0) for r in runs])
            n_present = sum(pair in r for r in runs)
            w.writerow([pair[0], pair[1], repr(mean), repr(se), len(runs), n_present])
            g.add_edge(*pair, mean_mi_bits=mean, se_mi_bits=se, n_present=n_present)
    nx.write_graphml(g, d / "mean_network.graphml")


def load_network(ctx: Context, run_id: int, nodes=None) -> MiNetwork:
    nodes = nodes if nodes is not None else read_nodes(ctx.path("network/nodes.csv"))
    return MiNetwork.read_edges_csv(ctx.run_dir("network", run_id) / "edges.csv", nodes, ctx.cfg.alpha,
                                    ctx.cfg.within_layer, run_id=run_id)


def _layers_of(nodes) -> list[Group]:
    present = {m.group for m in nodes if m.group in BIOMARKER_GROUPS}
    return [g for g in (Group.METABOLOME, Group.LIPIDOME) if g in present]


# --- project ----------------------------------------------------------------

def _project_task(args) -> list[ProjectedLayer]:
    out, run_id, alpha, within, definition, lam, include_risk = args
    nodes = read_nodes(Path(out) / "network" / "nodes.csv")
    net = MiNetwork.read_edges_csv(Path(out) / "network" / f"run_{run_id:03d}" / "edges.csv", nodes, alpha, within,
                                run_id=run_id)
    return [project_layer(net, PairScope.ALL, layer, definition, lam, include_risk) for layer in _layers_of(nodes)]


def stage_project(ctx: Context) -> dict[Group, AggregatedLayer]:
    ctx.require("network")
    cfg = ctx.cfg
    d = ctx.path("project")
    d.mkdir(exist_ok=True)
    nodes = read_nodes(ctx.path("network/nodes.csv"))
    groups = {m.name: m.group for m in nodes}
    per_run = ctx.map(_project_task, [
        (str(ctx.out), r, cfg.alpha, cfg.within_layer, cfg.definition, cfg.extended_lambda, cfg.include_risk_pairs)
        for r in range(cfg.n_imputations)
    ])
    with open(d / "runs.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id", "layer", "definition", "node_a", "node_b", "w"])
        for layers in per_run:
            for layer in layers:
                for a, b, wt in layer.edges:
                    w.writerow([layer.run_id, layer.layer.value, layer.definition.value, a, b, repr(wt)])
    artifacts = [d / "runs.csv"]
    aggregated = {}
    for i, layer in enumerate(_layers_of(nodes)):
        agg = aggregate_runs([layers[i] for layers in per_run])
        aggregated[layer] = agg
        agg.write_csv(d / f"{layer.value}.csv")
        agg.write_graphml(d / f"{layer.value}.graphml", groups)
        artifacts += [d / f"{layer.value}.csv", d / f"{layer.value}.graphml"]
    ctx.record("project", artifacts)
    log.info("project: %s", ", ".join(f"{g.value} {len(a.edges)} links" for g, a in aggregated.items()))
    return aggregated


def read_projected_runs(path: Path) -> list[ProjectedLayer]:
    """Rebuild per-run projected layers from ``project/runs.csv``."""
    from .projection import Definition

    grouped: dict[tuple[int, str, str], list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["run_id"]), row["layer"], row["definition"])
            grouped.setdefault(key, []).append((row["node_a"], row["node_b"], float(row["w"])))
    return [ProjectedLayer(Group(layer), Definition(defn), run, PairScope.ALL.value, tuple(edges))
            for (run, layer, defn), edges in sorted(grouped.items())]


def load_aggregated(ctx: Context) -> dict[Group, AggregatedLayer]:
    nodes = read_nodes(ctx.path("network/nodes.csv"))
    out = {}
    for layer in _layers_of(nodes):
        p = ctx.path(f"project/{layer.value}.csv")
        if not p.exists():
            raise StageOrderError(f"missing projected layer {p}")
        try:
            out[layer] = AggregatedLayer.read_csv(p, PairScope.ALL.value)
        except Exception:
            # a layer without any projected link has a header-only CSV
            out[layer] = AggregatedLayer(layer, ctx.cfg.definition, PairScope.ALL.value, ctx.cfg.n_imputations, ())
    return out


# --- contribute -------------------------------------------------------------

def _contribute_task(args) -> dict[str, dict[str, float]]:
    out, run_id, alpha, within, scope = args
    nodes = read_nodes(Path(out) / "network" / "nodes.csv")
    net = MiNetwork.read_edges_csv(Path(out) / "network" / f"run_{run_id:03d}" / "edges.csv", nodes, alpha, within,
                                run_id=run_id)
    return {layer.value: contributions(net, layer, scope) for layer in _layers_of(nodes)}


def stage_contribute(ctx: Context, pair_scope: str | None = None, top_k: int | None = None,
                     link: tuple[str, str] | None = None) -> dict[str, object]:
    ctx.require("network")
    cfg = ctx.cfg
    top_k = top_k or cfg.top_k
    nodes = read_nodes(ctx.path("network/nodes.csv"))
    names = {m.name: m for m in nodes}
    if link is not None:
        for x in link:
            if x not in names:
                raise ConfigError(f"link endpoint {x!r} is not a kept variable")
            if names[x].group in BIOMARKER_GROUPS:
                raise ConfigError(f"link endpoint {x!r} is a biomarker")
        scope: object = [tuple(link)]
        label = f"link_{link[0]}--{link[1]}"
    else:
        try:
            scope = PairScope(pair_scope or cfg.pair_scope)
        except ValueError:
            raise ConfigError(f"unknown pair scope {pair_scope!r}") from None
        label = scope.value
    per_run = ctx.map(_contribute_task, [
        (str(ctx.out), r, cfg.alpha, cfg.within_layer, scope) for r in range(cfg.n_imputations)
    ])
    d = ctx.path(f"contribute/{label}")
    d.mkdir(parents=True, exist_ok=True)
    artifacts = []
    rankings = {}
    for layer in _layers_of(nodes):
        ranking = rank_contributions([run[layer.value] for run in per_run], top_k, layer.value, label)
        ranking.write_csv(d / f"{layer.value}_ranking.csv")
        ranking.write_plot_file(d / f"{layer.value}_top{top_k}.csv")
        artifacts += [d / f"{layer.value}_ranking.csv", d / f"{layer.value}_top{top_k}.csv"]
        rankings[layer.value] = ranking
    ctx.record("contribute", artifacts + _previous_artifacts(ctx, "contribute", keep_other_scopes=label))
    return rankings


def _previous_artifacts(ctx: Context, stage: str, keep_other_scopes: str) -> list[Path]:
    # rankings for other scopes stay listed in the manifest while their files exist
    old = ctx.manifest().get("stages", {}).get(stage, {}).get("artifacts", {})
    return [ctx.out / rel for rel in old if f"/{keep_other_scopes}/" not in rel and (ctx.out / rel).exists()]


# --- importance -------------------------------------------------------------

def stage_importance(ctx: Context):
    ctx.require("project")
    nodes = read_nodes(ctx.path("network/nodes.csv"))
    groups = {m.name: m.group for m in nodes if m.group not in BIOMARKER_GROUPS}
    layers = load_aggregated(ctx)
    ri = relative_importance(layers.values(), groups)
    d = ctx.path("importance")
    d.mkdir(exist_ok=True)
    ri.write_csv(d / "relative_importance.csv")
    ri.write_per_phenotype(d / "per_phenotype.csv")
    per_layer = {}
    for layer, agg in layers.items():
        try:
            per_layer[layer.value] = relative_importance([agg], groups).groups
        except InsufficientDataError as exc:
            per_layer[layer.value] = {"error": str(exc)}
    _write_json(d / "summary.json", {"combined": ri.groups, "per_layer": per_layer,
                                     "excluded_phenotypes": list(ri.excluded)})
    ctx.record("importance", [d / "relative_importance.csv", d / "per_phenotype.csv", d / "summary.json"])
    if ri.excluded:
        log.info("importance: phenotypes without a risk-factor link: %s", ", ".join(ri.excluded))
    return ri


# --- compare ----------------------------------------------------------------

def read_direct_mi(path: Path) -> dict[tuple[str, str], tuple[float, float]]:
    """Mean direct MI and mean p-value over runs for each pair."""
    acc: dict[tuple[str, str], list[tuple[float, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            acc.setdefault((row["node_a"], row["node_b"]), []).append((float(row["mi_bits"]), float(row["p_value"])))
    return {k: (math.fsum(v[0] for v in vals) / len(vals), math.fsum(v[1] for v in vals) / len(vals))
            for k, vals in acc.items()}


def stage_compare(ctx: Context):
    ctx.require("project")
    cfg = ctx.cfg
    nodes = read_nodes(ctx.path("network/nodes.csv"))
    probe = MiNetwork(nodes, [], [], [], [], cfg.alpha)
    wanted = scope_pairs(probe, cfg.scope, cfg.include_risk_pairs)
    direct_all = read_direct_mi(ctx.path("network/direct_mi.csv"))
    canon = {tuple(sorted(k)): v for k, v in direct_all.items()}
    direct = {p: canon[tuple(sorted(p))][0] for p in wanted if tuple(sorted(p)) in canon}
    layers = load_aggregated(ctx)
    d = ctx.path("compare")
    d.mkdir(exist_ok=True)

    combined = compare_projection_to_direct_mi(combine_layers(layers.values()), direct)
    combined.write_points(d / "loglog_combined.csv")
    report = {"pair_scope": cfg.scope.value, "combined": combined.to_dict(), "per_layer": {}}
    artifacts = [d / "loglog_combined.csv"]
    for layer, agg in layers.items():
        try:
            fit = compare_projection_to_direct_mi(agg, direct)
        except InsufficientDataError as exc:
            report["per_layer"][layer.value] = {"error": str(exc), "zero_variance": exc.zero_variance}
            continue
        fit.write_points(d / f"loglog_{layer.value}.csv")
        artifacts.append(d / f"loglog_{layer.value}.csv")
        report["per_layer"][layer.value] = fit.to_dict()
    _write_json(d / "fit.json", report)
    ctx.record("compare", artifacts + [d / "fit.json"])
    return combined


def run_all(ctx: Context, pair_scope: str | None = None, top_k: int | None = None) -> None:
    stage_validate(ctx)
    stage_preprocess(ctx)
    stage_network(ctx)
    stage_project(ctx)
    stage_contribute(ctx, pair_scope, top_k)
    stage_importance(ctx)
    stage_compare(ctx)
