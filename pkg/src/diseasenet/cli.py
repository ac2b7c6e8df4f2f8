"""Command line entry point: ``diseasenet <stage> --config pipeline.yaml``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 a required
earlier stage has not been run. Failures also print a one-line JSON record
to stderr and, when the output directory is known, write ``error.json``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

import yaml

from . import pipeline
from .config import load_config
from .errors import ConfigError, DiseaseNetError

log = logging.getLogger("diseasenet")

STAGE_FUNCS = {
    "validate": pipeline.stage_validate,
    "preprocess": pipeline.stage_preprocess,
    "network": pipeline.stage_network,
    "project": pipeline.stage_project,
    "importance": pipeline.stage_importance,
    "compare": pipeline.stage_compare,
}


def _link(text: str) -> tuple[str, str]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2 or not all(parts):
        raise argparse.ArgumentTypeError("expected two variable names separated by a comma")
    return parts[0], parts[1]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diseasenet", description="Multilayer disease networks from multi-omics tables.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def staged(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, type=Path, help="pipeline YAML file")
        p.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
        p.add_argument("--parallelism", type=int, help="worker processes (default: all cores)")
        return p

    staged("validate", "load, type-check and merge the input tables")
    staged("preprocess", "impute and discretize, once per imputation run")
    staged("network", "redundancy filter and significant MI networks")
    staged("project", "project phenotypes and risk factors through each omics layer")
    for name in ("contribute", "all"):
        p = staged(name, "rank mediating biomarkers" if name == "contribute" else "run every stage in order")
        p.add_argument("--pair-scope", choices=["cvd-x-depression", "risk-x-phenotype", "all"],
                       help="phenotype pairs whose links are decomposed")
        p.add_argument("--top-k", type=int, help="length of the plot-ready ranking")
        if name == "contribute":
            p.add_argument("--link", type=_link, metavar="A,B", help="decompose a single projected link")
    staged("importance", "relative importance of risk factors per phenotype group")
    staged("compare", "log-log fit of projected score against direct MI")

    p = sub.add_parser("synth", help="write a synthetic dataset with planted mediators")
    p.add_argument("--out", required=True, type=Path, help="directory for the dataset and pipeline.yaml")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-rows", type=int, default=1500)
    p.add_argument("--layer-size", type=int, default=200, help="biomarkers per omics layer")
    p.add_argument("--lipidome-size", type=int, help="lipidome size when it differs from --layer-size")
    p.add_argument("--mediators", type=int, default=10, help="planted mediators per layer")
    p.add_argument("--phenotypes", type=int, default=5)
    p.add_argument("--symptoms", type=int, default=5)
    p.add_argument("--risk-factors", type=int, default=3)
    p.add_argument("--effect", type=float, default=1.0)
    p.add_argument("--missing-rate", type=float, default=0.05)
    p.add_argument("--n-imputations", type=int, default=20, help="written into pipeline.yaml")
    p.add_argument("--permutations", type=int, default=200, help="written into pipeline.yaml")
    return parser


def _synth(args) -> int:
    from .synth import generate, planted_config, write_dataset

    cfg = planted_config(n_mediators=args.mediators, n_rows=args.n_rows,
                         layer_sizes={"metabolome": args.layer_size,
                                      "lipidome": args.layer_size if args.lipidome_size is None else args.lipidome_size},
                         phenotype_count=args.phenotypes, symptom_count=args.symptoms,
                         risk_factor_count=args.risk_factors, effect=args.effect,
                         missing_rate=args.missing_rate, seed=args.seed)
    tables, truth = generate(cfg)
    written = write_dataset(tables, truth, args.out)
    doc = {
        "tables": [{"csv": c.name, "schema": s.name} for c, s in written],
        "master_seed": args.seed,
        "n_imputations": args.n_imputations,
        "permutations": args.permutations,
        "protected": sorted(n for n, t in ((m.name, m.group) for tab in tables.values() for m in tab.meta)
                            if not t.is_biomarker),
        "output_dir": "out",
    }
    with open(Path(args.out) / "pipeline.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
    log.info("synthetic dataset written to %s", args.out)
    return 0


def _run(args) -> int:
    if args.command == "synth":
        return _synth(args)
    overrides = {"parallelism": args.parallelism}
    if args.command == "all":
        overrides.update(pair_scope=args.pair_scope, top_k=args.top_k)
    cfg = load_config(args.config, **overrides)
    ctx = pipeline.Context.create(cfg, args.out)
    args._out_dir = ctx.out
    (ctx.out / "error.json").unlink(missing_ok=True)
    if args.command == "all":
        pipeline.run_all(ctx)
    elif args.command == "contribute":
        if args.top_k is not None and args.top_k < 1:
            raise ConfigError("--top-k must be >= 1")
        pipeline.stage_contribute(ctx, args.pair_scope, args.top_k, args.link)
    else:
        STAGE_FUNCS[args.command](ctx)
    return 0


def _error_record(exc: BaseException, command: str) -> dict:
    rec = {"error": type(exc).__name__, "message": str(exc), "command": command,
           "exit_code": getattr(exc, "exit_code", 1)}
    for attr in ("columns", "row", "column"):
        value = getattr(exc, attr, None)
        if value is not None:
            rec[attr] = list(value) if isinstance(value, (tuple, list)) else value
    return rec


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args._out_dir = getattr(args, "out", None) if args.command != "synth" else None
    try:
        return _run(args)
    except DiseaseNetError as exc:
        rec = _error_record(exc, args.command)
    except Exception as exc:  # unexpected failure still leaves a machine-readable record
        log.debug("%s", traceback.format_exc())
        rec = _error_record(exc, args.command)
        rec["exit_code"] = 1
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)
    out_dir = args._out_dir
    if out_dir is not None and Path(out_dir).is_dir():
        with open(Path(out_dir) / "error.json", "w", encoding="utf-8") as fh:
            json.dump(rec, fh, indent=1, sort_keys=True)
    return rec["exit_code"]


if __name__ == "__main__":
    sys.exit(main())
