import json
import os

import numpy as np
import pytest

from omiclust.config import RunConfig
from omiclust.data import ClinicalOutcomes
from omiclust.engine import ChainSchedule
from omiclust.io import read_allocation, read_matrix, write_clinical, write_platform
from omiclust.pipeline import MANIFEST_NAME, PipelineError, run_pipeline

IDS = [f"s{i}" for i in range(10)]
ROWS_TRUE = np.array([0, 0, 0, 0, 0, 1, 1, 1, 1, 1])


def write_inputs(root, with_clinical=False):
    rng = np.random.default_rng(11)
    signs = np.array([[1.5, -1.5], [-1.5, 1.5]])
    paths = []
    for t, cols in enumerate([np.array([0] * 4 + [1] * 4), np.array([0] * 3 + [1] * 3)]):
        z = signs[np.ix_(ROWS_TRUE, cols)] + 0.1 * rng.normal(size=(10, cols.size))
        path = os.path.join(root, f"plat{t + 1}.csv")
        write_platform(path, z, IDS, [f"g{t + 1}_{j}" for j in range(cols.size)])
        paths.append(path)
    clinical = None
    if with_clinical:
        times = np.exp(0.4 - 0.9 * ROWS_TRUE + 0.2 * rng.normal(size=10))
        events = np.array([1, 1, 0, 1, 1, 1, 0, 1, 1, 1])
        clinical = os.path.join(root, "clinical.csv")
        write_clinical(clinical, IDS,
                       ClinicalOutcomes(observed_time=times,
                                        censor_indicator=events))
    return paths, clinical


def short_config(outdir, inputs):
    paths, clin = inputs
    return RunConfig(
        platform_paths=paths,
        transforms=["identity"] * len(paths),
        clinical_path=clin,
        schedule=ChainSchedule(joint_sweeps=40, row_sweeps=20, value_sweeps=20),
        selection_sweeps=200,
        outdir=outdir,
    )


def test_pipeline_without_clinical_writes_stage1_artifacts(tmp_path):
    paths, _ = write_inputs(tmp_path)
    cfg = RunConfig(platform_paths=paths, transforms=["identity", "identity"],
                    schedule=ChainSchedule(joint_sweeps=40, row_sweeps=20,
                                           value_sweeps=20),
                    outdir=str(tmp_path / "out"))
    manifest = run_pipeline(cfg)

    files = manifest["artifacts"]["files"]
    assert "selection_report.csv" not in files
    for name in files:
        assert os.path.exists(tmp_path / "out" / name), name
    expected = {
        "row_allocation.csv", "row_coclustering.csv", "diagnostics.csv",
        MANIFEST_NAME,
    }
    for t in (1, 2):
        expected |= {
            f"column_allocation_platform_{t}.csv",
            f"column_coclustering_platform_{t}.csv",
            f"latent_blocks_platform_{t}.csv",
            f"atom_ids_platform_{t}.csv",
            f"data_ordered_platform_{t}.csv",
        }
    assert set(files) == expected
    assert "n_selected" not in manifest["summary"]

    ids, alloc = read_allocation(tmp_path / "out" / "row_allocation.csv")
    assert ids == IDS
    same = ROWS_TRUE[:, None] == ROWS_TRUE[None, :]
    assert np.array_equal(alloc[:, None] == alloc[None, :], same)


def test_pipeline_with_clinical_runs_selection(tmp_path):
    inputs = write_inputs(tmp_path, with_clinical=True)
    cfg = short_config(str(tmp_path / "out"), inputs)
    manifest = run_pipeline(cfg)

    assert "selection_report.csv" in manifest["artifacts"]["files"]
    summary = manifest["summary"]
    assert summary["n_merged_clusters"] >= 1
    assert 0 <= summary["n_selected"] <= summary["n_merged_clusters"]

    report = (tmp_path / "out" / "selection_report.csv").read_text().splitlines()
    assert report[0].split(",")[:5] == ["cluster", "size", "members", "b_hat",
                                       "selected"]
    assert len(report) == summary["n_merged_clusters"] + 1
    # every probe appears exactly once across the merged clusters
    members = ";".join(line.split(",")[2] for line in report[1:])
    probes = [m.split(":")[1] for m in members.split(";")]
    assert sorted(probes) == sorted(f"g{t}_{j}" for t, w in ((1, 8), (2, 6))
                                    for j in range(w))


def test_reruns_are_byte_identical_except_timings(tmp_path):
    inputs = write_inputs(tmp_path, with_clinical=True)
    out = str(tmp_path / "out")
    m1 = run_pipeline(short_config(out, inputs))
    first = {name: open(os.path.join(out, name), "rb").read()
             for name in m1["artifacts"]["files"]}
    run_pipeline(short_config(out, inputs))

    for name, b1 in first.items():
        b2 = open(os.path.join(out, name), "rb").read()
        if name == MANIFEST_NAME:
            keep1 = [l for l in b1.splitlines()
                     if json.loads(l)["record"] != "timings"]
            keep2 = [l for l in b2.splitlines()
                     if json.loads(l)["record"] != "timings"]
            assert keep1 == keep2
        else:
            assert b1 == b2, name


def test_manifest_records_versions_seeds_and_config(tmp_path):
    paths, _ = write_inputs(tmp_path)
    cfg = RunConfig(platform_paths=paths, transforms=["identity", "identity"],
                    seed=7,
                    schedule=ChainSchedule(joint_sweeps=10, row_sweeps=5,
                                           value_sweeps=5),
                    outdir=str(tmp_path / "out"))
    run_pipeline(cfg)

    lines = [json.loads(l) for l in
             (tmp_path / "out" / MANIFEST_NAME).read_text().splitlines()]
    records = {rec["record"]: rec for rec in lines}
    assert list(records) == ["config", "versions", "seeds", "summary",
                             "artifacts", "timings"]
    assert records["seeds"]["root_seed"] == 7
    assert records["versions"]["numpy"] == np.__version__
    assert records["config"]["config"]["seed"] == 7
    assert records["timings"]["stage1_seconds"] > 0


def test_ordered_data_groups_clusters_contiguously(tmp_path):
    paths, _ = write_inputs(tmp_path)
    cfg = RunConfig(platform_paths=paths, transforms=["identity", "identity"],
                    schedule=ChainSchedule(joint_sweeps=40, row_sweeps=20,
                                           value_sweeps=20),
                    outdir=str(tmp_path / "out"))
    run_pipeline(cfg)
    out = tmp_path / "out"
    _, alloc = read_allocation(out / "row_allocation.csv")
    ordered_ids, _, _ = _read_platform_rows(out / "data_ordered_platform_1.csv")
    perm = [IDS.index(i) for i in ordered_ids]
    labels = alloc[perm]
    assert np.all(np.diff(labels) >= 0)  # stable sort by cluster


def _read_platform_rows(path):
    lines = open(path).read().splitlines()
    header = lines[0].split(",")
    ids = [l.split(",", 1)[0] for l in lines[1:]]
    return ids, header[1:], lines


def test_missing_platform_file_raises_pipeline_error(tmp_path):
    cfg = RunConfig(platform_paths=[str(tmp_path / "nope.csv")],
                    transforms=["identity"], outdir=str(tmp_path / "out"))
    with pytest.raises(PipelineError, match="ingestion:"):
        run_pipeline(cfg)


def test_malformed_platform_raises_pipeline_error(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("patient_id,g1\ns1,zzz\ns2,0.5\n")
    cfg = RunConfig(platform_paths=[str(bad)], transforms=["identity"],
                    outdir=str(tmp_path / "out"))
    with pytest.raises(PipelineError, match="ingestion:"):
        run_pipeline(cfg)


def test_coclustering_artifacts_are_symmetric_probabilities(tmp_path):
    paths, _ = write_inputs(tmp_path)
    cfg = RunConfig(platform_paths=paths, transforms=["identity", "identity"],
                    schedule=ChainSchedule(joint_sweeps=20, row_sweeps=5,
                                           value_sweeps=5),
                    outdir=str(tmp_path / "out"))
    run_pipeline(cfg)
    out = tmp_path / "out"
    for name in ("row_coclustering.csv", "column_coclustering_platform_1.csv"):
        rows, cols, pi = read_matrix(out / name)
        assert rows == cols
        assert np.allclose(pi, pi.T)
        assert np.all((pi >= 0) & (pi <= 1))
        assert np.allclose(np.diag(pi), 1.0)
