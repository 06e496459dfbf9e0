"""Command line interface.

Subcommands: ``simulate`` writes a synthetic study with its ground
truth and a ready-to-run config; ``fit`` executes the configured
pipeline; ``select`` reruns survival selection against the clustering
artifacts of an earlier fit; ``replicate`` runs the simulation study
grid; ``report`` prints defaults, a resolved config, or a run summary.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .config import (
    ConfigError,
    RunConfig,
    default_config_text,
    load_config,
    write_config,
)
from .data import TransformDomainError
from .io import (
    ParseError,
    load_dataset,
    read_allocation,
    read_matrix,
    write_allocation,
    write_clinical,
    write_matrix,
    write_platform,
)
from .pipeline import MANIFEST_NAME, PipelineError, run_pipeline
from .selection import member_matrix, merge_clusters
from .simulate import (
    GeneratorConfig,
    generate_survival,
    generate_synthetic,
    run_replication_study,
)

__all__ = ["main", "build_parser"]


def _parse_floats(raw: str, flag: str) -> tuple[float, ...]:
    try:
        return tuple(float(s) for s in raw.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"{flag}: could not parse {raw!r} as "
                          "comma-separated numbers") from None


def _parse_ints(raw: str, flag: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in raw.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"{flag}: could not parse {raw!r} as "
                          "comma-separated integers") from None


def _cmd_simulate(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    probes = _parse_ints(args.probes, "--probes")
    discounts = _parse_floats(args.discounts, "--discounts")
    config = GeneratorConfig(
        n_patients=args.patients, n_probes=probes, discounts=discounts,
        sigma=args.sigma, n_row_clusters=args.row_clusters,
    )
    rng = np.random.default_rng(args.seed)
    dataset, truth = generate_synthetic(config, rng)

    paths = []
    for t, platform in enumerate(dataset.platforms):
        name = f"platform_{t + 1}.csv"
        write_platform(os.path.join(args.out, name), platform.values,
                       dataset.patient_ids, platform.probe_names)
        paths.append(name)
        write_allocation(
            os.path.join(args.out, f"true_column_allocation_platform_{t + 1}.csv"),
            platform.probe_names, truth.column_alloc[t], "probe")
        h, k_t = truth.latents[t].shape
        write_matrix(
            os.path.join(args.out, f"true_latent_blocks_platform_{t + 1}.csv"),
            truth.latents[t],
            [f"row_cluster_{i + 1}" for i in range(h)],
            [f"column_cluster_{j + 1}" for j in range(k_t)],
            corner="row_cluster")
    write_allocation(os.path.join(args.out, "true_row_allocation.csv"),
                     dataset.patient_ids, truth.row_alloc, "patient_id")

    clinical = None
    if args.survival:
        surv = generate_survival(
            dataset.values, rng, n_predictors=args.n_predictors,
            censor_fraction=args.censor_fraction)
        clinical = "clinical.csv"
        write_clinical(os.path.join(args.out, clinical),
                       dataset.patient_ids, surv.outcomes)
        sizes = [p.n_probes for p in dataset.platforms]
        bounds = np.cumsum([0, *sizes])
        with open(os.path.join(args.out, "true_predictors.csv"), "w") as fh:
            fh.write("platform,probe\n")
            for col in surv.predictors:
                t = int(np.searchsorted(bounds, col, side="right")) - 1
                name = dataset.platforms[t].probe_names[col - bounds[t]]
                fh.write(f"platform_{t + 1},{name}\n")

    run = RunConfig(
        platform_paths=[os.path.join(os.path.abspath(args.out), p)
                        for p in paths],
        transforms=["identity"] * len(paths),
        clinical_path=(os.path.join(os.path.abspath(args.out), clinical)
                       if clinical else None),
        seed=args.seed,
        outdir=os.path.join(os.path.abspath(args.out), "fit"),
    )
    write_config(run, os.path.join(args.out, "config.ini"))
    print(f"wrote {len(paths)} platform(s) and ground truth to {args.out}")
    return 0


def _load_run_config(args) -> RunConfig:
    config = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["outdir"] = args.out
    if getattr(args, "clip_eps", None) is not None:
        overrides["clip_eps"] = args.clip_eps
    return dataclasses.replace(config, **overrides) if overrides else config


def _cmd_fit(args) -> int:
    config = _load_run_config(args)
    manifest = run_pipeline(config)
    summary = manifest["summary"]
    clusters = ", ".join(str(k) for k in summary["n_column_clusters"])
    print(f"fit complete: {summary['n_row_clusters']} patient clusters; "
          f"probe clusters per platform: {clusters}; "
          f"artifacts in {config.outdir}")
    return 0


def _cmd_select(args) -> int:
    from .selection import run_stage2

    config = _load_run_config(args)
    if config.clinical_path is None:
        raise ConfigError("select needs a clinical file in the config")
    if args.fdr_alpha is not None:
        config = dataclasses.replace(config, fdr_alpha=args.fdr_alpha)
    outdir = config.outdir
    dataset = load_dataset(config.platform_paths, config.transforms,
                           clip_eps=config.clip_eps,
                           clinical_path=config.clinical_path)
    atom_ids = []
    col_alloc = []
    for t in range(config.n_platforms):
        tag = f"platform_{t + 1}"
        alloc_path = os.path.join(outdir, f"column_allocation_{tag}.csv")
        ids_path = os.path.join(outdir, f"atom_ids_{tag}.csv")
        if not (os.path.exists(alloc_path) and os.path.exists(ids_path)):
            raise PipelineError(
                f"selection stage: no clustering artifacts for {tag} in "
                f"{outdir}; run fit first")
        _, alloc = read_allocation(alloc_path)
        col_alloc.append(alloc)
        _, _, ids = read_matrix(ids_path)
        atom_ids.append(np.rint(ids).astype(np.int64))
    merged = merge_clusters(atom_ids, col_alloc)
    member_cols = member_matrix(merged, dataset.values)
    stage2_seq = np.random.SeedSequence(config.seed).spawn(2)[1]
    sel = run_stage2(
        member_cols, dataset.outcomes, config=config.selection,
        fdr_alpha=config.fdr_alpha, sweeps=config.selection_sweeps,
        burn_fraction=config.selection_burn_fraction,
        thin=config.selection_thin,
        seed=np.random.default_rng(stage2_seq), merged=merged,
    )
    from .pipeline import _write_selection_report

    name = _write_selection_report(outdir, dataset, sel)
    print(f"selected {sel.selected.size} of {sel.n_clusters} merged "
          f"clusters at FDR {config.fdr_alpha}; report in "
          f"{os.path.join(outdir, name)}")
    return 0


def _cmd_replicate(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    h_values = _parse_ints(args.row_clusters, "--row-clusters")
    sigmas = _parse_floats(args.sigma, "--sigma")
    grid = [(h, s) for h in h_values for s in sigmas]
    results, summary = run_replication_study(
        grid, args.replicates, seed=args.seed, n_jobs=args.jobs,
        csv_path=os.path.join(args.out, "results.csv"))
    summary.to_csv(os.path.join(args.out, "summary.csv"), index=False,
                   float_format="%.17g")
    print(summary.to_string(index=False))
    print(f"per-replicate results in {os.path.join(args.out, 'results.csv')}")
    return 0


def _cmd_report(args) -> int:
    if args.defaults:
        print(default_config_text(), end="")
        return 0
    if args.config is not None:
        config = load_config(args.config)
        print(json.dumps(config.as_dict(), indent=2, sort_keys=True))
        return 0
    if args.run is not None:
        manifest_path = os.path.join(args.run, MANIFEST_NAME)
        if not os.path.exists(manifest_path):
            raise PipelineError(f"no {MANIFEST_NAME} in {args.run}")
        with open(manifest_path) as fh:
            records = {rec["record"]: rec
                       for rec in (json.loads(line) for line in fh if line.strip())}
        summary = records.get("summary", {})
        for key in ("n_patients", "n_platforms", "n_row_clusters",
                    "n_column_clusters", "sigma_mean", "n_merged_clusters",
                    "n_selected", "fdr_cutoff"):
            if key in summary:
                print(f"{key}: {summary[key]}")
        timings = records.get("timings", {})
        if "total_seconds" in timings:
            print(f"total_seconds: {timings['total_seconds']:.1f}")
        files = records.get("artifacts", {}).get("files", [])
        print(f"artifacts: {', '.join(files)}")
        return 0
    raise ConfigError("report needs one of --defaults, --config, --run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="omiclust",
        description="Bidirectional clustering of multi-platform omics "
                    "matrices with survival-driven cluster selection.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate",
                         help="generate a synthetic study with ground truth")
    sim.add_argument("--out", default="sim", help="output directory")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--patients", type=int, default=70)
    sim.add_argument("--probes", default="250,250",
                     help="comma-separated probes per platform")
    sim.add_argument("--discounts", default="0.2,0.25",
                     help="comma-separated per-platform discounts")
    sim.add_argument("--sigma", type=float, default=0.2,
                     help="noise standard deviation")
    sim.add_argument("--row-clusters", type=int, default=3)
    sim.add_argument("--survival", action="store_true",
                     help="also draw censored survival outcomes")
    sim.add_argument("--n-predictors", type=int, default=20)
    sim.add_argument("--censor-fraction", type=float, default=0.2)
    sim.set_defaults(func=_cmd_simulate)

    fit = sub.add_parser("fit", help="run the configured pipeline")
    fit.add_argument("--config", required=True, help="INI run configuration")
    fit.add_argument("--seed", type=int, default=None,
                     help="override the configured seed")
    fit.add_argument("--out", default=None,
                     help="override the configured output directory")
    fit.add_argument("--clip-eps", type=float, default=None,
                     help="clip unit-interval values before a logit "
                          "transform")
    fit.set_defaults(func=_cmd_fit)

    sel = sub.add_parser(
        "select",
        help="rerun survival selection against an earlier fit's artifacts")
    sel.add_argument("--config", required=True)
    sel.add_argument("--seed", type=int, default=None)
    sel.add_argument("--out", default=None,
                     help="artifact directory of the fit (default: the "
                          "configured output directory)")
    sel.add_argument("--clip-eps", type=float, default=None)
    sel.add_argument("--fdr-alpha", type=float, default=None,
                     help="override the configured FDR level")
    sel.set_defaults(func=_cmd_select)

    rep = sub.add_parser("replicate",
                         help="run the synthetic replication grid")
    rep.add_argument("--out", default="replication")
    rep.add_argument("--seed", type=int, default=0)
    rep.add_argument("--replicates", type=int, default=10)
    rep.add_argument("--row-clusters", default="3",
                     help="comma-separated row-cluster counts")
    rep.add_argument("--sigma", default="0.2",
                     help="comma-separated noise levels")
    rep.add_argument("--jobs", type=int, default=1,
                     help="parallel workers (-1 for all cores)")
    rep.set_defaults(func=_cmd_replicate)

    report = sub.add_parser("report",
                            help="print defaults, a resolved config, or a "
                                 "run summary")
    report.add_argument("--defaults", action="store_true",
                        help="print the default configuration file")
    report.add_argument("--config", default=None,
                        help="print a config resolved to its full settings")
    report.add_argument("--run", default=None,
                        help="summarize a run directory's manifest")
    report.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, TransformDomainError, PipelineError,
            ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
