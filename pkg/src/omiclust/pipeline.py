"""End-to-end orchestration.

``run_pipeline`` loads the configured platforms, runs the staged
clustering chain, writes every artifact into the output directory, and
runs survival variable selection when clinical outcomes are configured.
All randomness derives from the single configured seed, and every
artifact except the manifest's timing record is byte-deterministic for
a fixed config.
"""

from __future__ import annotations

import json
import os
import time

import numpy as np
import pandas as pd
import scipy

from . import __version__
from .config import RunConfig
from .engine import Stage1Result, run_stage1
from .io import (
    write_allocation,
    write_matrix,
    write_platform,
    load_dataset,
)
from .selection import Stage2Result, member_matrix, merge_clusters, run_stage2

__all__ = ["PipelineError", "run_pipeline", "MANIFEST_NAME"]

MANIFEST_NAME = "manifest.jsonl"


class PipelineError(RuntimeError):
    """A pipeline failure with a message naming the failing step."""


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def _versions() -> dict:
    import platform as _platform

    return {
        "package": __version__,
        "python": _platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }


def _platform_tag(t: int) -> str:
    return f"platform_{t + 1}"


def _write_stage1_artifacts(outdir, dataset, fit: Stage1Result) -> list[str]:
    names = []

    def path(name):
        names.append(name)
        return os.path.join(outdir, name)

    ids = dataset.patient_ids
    write_allocation(path("row_allocation.csv"), ids, fit.row_alloc,
                     "patient_id")
    write_matrix(path("row_coclustering.csv"), fit.row_coclustering,
                 ids, ids, corner="patient_id")
    h = fit.n_row_clusters
    row_labels = [f"row_cluster_{i + 1}" for i in range(h)]
    row_order = np.argsort(fit.row_alloc, kind="stable")
    for t, platform in enumerate(dataset.platforms):
        tag = _platform_tag(t)
        probes = platform.probe_names
        alloc = fit.column_alloc[t]
        write_allocation(path(f"column_allocation_{tag}.csv"), probes,
                         alloc, "probe")
        write_matrix(path(f"column_coclustering_{tag}.csv"),
                     fit.column_coclustering[t], probes, probes,
                     corner="probe")
        k_t = fit.phi_mean[t].shape[1]
        col_clusters = [f"column_cluster_{j + 1}" for j in range(k_t)]
        write_matrix(path(f"latent_blocks_{tag}.csv"), fit.phi_mean[t],
                     row_labels, col_clusters, corner="row_cluster")
        write_matrix(path(f"atom_ids_{tag}.csv"), fit.atom_ids[t],
                     row_labels, col_clusters, corner="row_cluster")
        col_order = np.argsort(alloc, kind="stable")
        write_platform(path(f"data_ordered_{tag}.csv"),
                       platform.values[np.ix_(row_order, col_order)],
                       [ids[i] for i in row_order],
                       [probes[j] for j in col_order])
    diag = path("diagnostics.csv")
    fit.diagnostics.to_csv(diag, index=False, float_format="%.17g")
    return names


def _write_selection_report(outdir, dataset, sel: Stage2Result) -> str:
    name = "selection_report.csv"
    merged = sel.merged
    rows = []
    selected = set(int(i) for i in sel.selected)
    for k in range(sel.n_clusters):
        members = [
            f"{_platform_tag(t)}:{dataset.platforms[t].probe_names[j]}"
            for t, j in merged.members[k]
        ]
        freqs = sel.rep_frequencies[k]
        rows.append({
            "cluster": k + 1,
            "size": len(members),
            "members": ";".join(members),
            "b_hat": sel.inclusion[k],
            "selected": int(k in selected),
            "representative": members[int(np.argmax(freqs))],
            "rep_frequencies": ";".join(format(f, ".17g") for f in freqs),
        })
    frame = pd.DataFrame(rows, columns=["cluster", "size", "members",
                                        "b_hat", "selected",
                                        "representative",
                                        "rep_frequencies"])
    frame.to_csv(os.path.join(outdir, name), index=False,
                 float_format="%.17g")
    return name


def run_pipeline(config: RunConfig) -> dict:
    """Execute the configured run and return the manifest as a dict.

    Artifacts land in ``config.outdir``; the survival selection stage
    runs only when a clinical file is configured.
    """
    started = time.perf_counter()
    os.makedirs(config.outdir, exist_ok=True)
    try:
        dataset = load_dataset(config.platform_paths, config.transforms,
                               clip_eps=config.clip_eps,
                               clinical_path=config.clinical_path)
    except OSError as err:
        raise PipelineError(f"ingestion: {err}") from None
    except ValueError as err:
        raise PipelineError(f"ingestion: {err}") from None

    root = np.random.SeedSequence(config.seed)
    stage1_seq, stage2_seq = root.spawn(2)

    t0 = time.perf_counter()
    try:
        fit = run_stage1(dataset.values, config.hyper, config.schedule,
                         seed=np.random.default_rng(stage1_seq),
                         shared_sigma=config.shared_sigma)
    except ValueError as err:
        raise PipelineError(f"clustering stage: {err}") from None
    stage1_seconds = time.perf_counter() - t0

    artifact_names = _write_stage1_artifacts(config.outdir, dataset, fit)

    sel = None
    stage2_seconds = 0.0
    if dataset.outcomes is not None:
        t0 = time.perf_counter()
        try:
            merged = merge_clusters(fit.atom_ids, fit.column_alloc)
            member_cols = member_matrix(merged, dataset.values)
            sel = run_stage2(
                member_cols, dataset.outcomes, config=config.selection,
                fdr_alpha=config.fdr_alpha, sweeps=config.selection_sweeps,
                burn_fraction=config.selection_burn_fraction,
                thin=config.selection_thin,
                seed=np.random.default_rng(stage2_seq), merged=merged,
            )
        except ValueError as err:
            raise PipelineError(f"selection stage: {err}") from None
        stage2_seconds = time.perf_counter() - t0
        artifact_names.append(
            _write_selection_report(config.outdir, dataset, sel))

    summary = {
        "n_patients": dataset.n_patients,
        "n_platforms": dataset.n_platforms,
        "n_row_clusters": fit.n_row_clusters,
        "n_column_clusters": [int(c.max()) + 1 for c in fit.column_alloc],
        "sigma_mean": _jsonable(fit.sigma_mean),
        "discount_acceptance": _jsonable(fit.discount_acceptance),
    }
    if sel is not None:
        summary["n_merged_clusters"] = sel.n_clusters
        summary["n_selected"] = int(sel.selected.size)
        summary["fdr_cutoff"] = _jsonable(sel.cutoff)

    artifact_names.append(MANIFEST_NAME)
    records = [
        {"record": "config", "config": _jsonable(config.as_dict())},
        {"record": "versions", **_versions()},
        {"record": "seeds", "root_seed": int(config.seed),
         "stage1_key": list(stage1_seq.spawn_key),
         "stage2_key": list(stage2_seq.spawn_key)},
        {"record": "summary", **summary},
        {"record": "artifacts", "files": sorted(artifact_names)},
        # timings vary run to run; keep them in one final line so exact
        # byte comparisons can drop it
        {"record": "timings",
         "stage1_seconds": stage1_seconds,
         "stage2_seconds": stage2_seconds,
         "total_seconds": time.perf_counter() - started,
         **{f"stage1_{k}": v for k, v in fit.timings.items()}},
    ]
    manifest_path = os.path.join(config.outdir, MANIFEST_NAME)
    with open(manifest_path, "w") as fh:
        for record in records:
            fh.write(json.dumps(_jsonable(record), sort_keys=True) + "\n")
    return {rec["record"]: rec for rec in records}
