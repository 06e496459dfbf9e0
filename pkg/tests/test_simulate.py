import numpy as np
import pandas as pd
import pytest
from scipy.special import digamma

from omiclust.engine import ChainSchedule
from omiclust.simulate import (
    GeneratorConfig,
    column_accuracy,
    fit_r2,
    generate_survival,
    generate_synthetic,
    row_accuracy,
    run_replication_study,
)
from omiclust.partitions import sample_partition


def test_default_shapes():
    dataset, truth = generate_synthetic(rng=3)
    assert dataset.n_platforms == 2
    assert [z.shape for z in dataset.values] == [(70, 250), (70, 250)]
    assert truth.row_alloc.shape == (70,)
    assert set(truth.row_alloc) <= {0, 1, 2}
    for t in range(2):
        k = truth.column_alloc[t].max() + 1
        assert truth.latents[t].shape == (3, k)
        assert truth.n_column_clusters(t) == k
    assert truth.sigma == 0.2
    assert truth.config == GeneratorConfig()


def test_noiseless_limit_reproduces_patterns_exactly():
    cfg = GeneratorConfig(n_patients=20, n_probes=(30, 25), sigma=0.0)
    dataset, truth = generate_synthetic(cfg, rng=11)
    for t, z in enumerate(dataset.values):
        expected = truth.latents[t][truth.row_alloc][:, truth.column_alloc[t]]
        assert np.array_equal(z, expected)
    assert row_accuracy(truth.row_alloc, truth.row_alloc) == 1.0
    for t in range(2):
        assert column_accuracy(truth.column_alloc[t], truth.column_alloc[t]) == 1.0


def test_row_cluster_proportions_equiprobable():
    rng = np.random.default_rng(42)
    draws = 200
    counts = np.zeros(3)
    for _ in range(draws):
        _, truth = generate_synthetic(GeneratorConfig(n_probes=(5, 5)), rng)
        counts += np.bincount(truth.row_alloc, minlength=3)
    props = counts / (draws * 70)
    # 3 MC sd of a mean proportion over 200 draws of 70 labels
    tol = 3 * np.sqrt((1 / 3) * (2 / 3) / (draws * 70))
    assert np.all(np.abs(props - 1 / 3) < tol)


def test_prior_column_cluster_count_tracks_log_growth():
    p, mass = 250, 10.0
    rng = np.random.default_rng(7)
    ks = [sample_partition(p, 0.0, mass, rng).max() + 1 for _ in range(200)]
    ks = np.asarray(ks, dtype=float)
    assert ks.min() >= 1 and ks.max() <= p
    exact = mass * (digamma(mass + p) - digamma(mass))
    assert abs(ks.mean() - exact) < 3 * ks.std(ddof=1) / np.sqrt(ks.size)
    # the finite-concentration form of logarithmic growth in p
    assert abs(exact - mass * np.log1p(p / mass)) / exact < 0.15


def test_generator_bit_reproducible():
    cfg = GeneratorConfig(n_patients=15, n_probes=(20, 18))
    d1, t1 = generate_synthetic(cfg, rng=99)
    d2, t2 = generate_synthetic(cfg, rng=99)
    d3, _ = generate_synthetic(cfg, rng=100)
    for a, b in zip(d1.values, d2.values):
        assert np.array_equal(a, b)
    assert np.array_equal(t1.row_alloc, t2.row_alloc)
    for t in range(2):
        assert np.array_equal(t1.column_alloc[t], t2.column_alloc[t])
        assert np.array_equal(t1.latents[t], t2.latents[t])
    assert not all(np.array_equal(a, b) for a, b in zip(d1.values, d3.values))


def test_config_validation():
    with pytest.raises(ValueError):
        GeneratorConfig(discounts=(0.2,))
    with pytest.raises(ValueError):
        GeneratorConfig(discounts=(1.0, 0.2))
    with pytest.raises(ValueError):
        GeneratorConfig(sigma=-0.1)
    with pytest.raises(ValueError):
        GeneratorConfig(n_row_clusters=0)


def test_column_accuracy_hand_case():
    assert column_accuracy([1, 1, 1, 2], [1, 1, 2, 2]) == pytest.approx(0.5)
    assert column_accuracy([1, 2, 3, 4], [1, 1, 1, 1]) == 0.0
    assert column_accuracy([2, 2, 1, 1], [1, 1, 2, 2]) == 1.0


def test_row_accuracy_matches_column_accuracy_semantics():
    assert row_accuracy([1, 1, 2, 2], [2, 2, 1, 1]) == 1.0
    assert row_accuracy([1, 1, 1, 2], [1, 1, 2, 2]) == pytest.approx(0.5)
    assert row_accuracy([0, 1], [5, 5]) in (0.0, 1.0)


def test_accuracy_relabel_invariance_and_symmetry():
    rng = np.random.default_rng(0)
    for _ in range(25):
        n = rng.integers(3, 12)
        a = rng.integers(0, 4, size=n)
        b = rng.integers(0, 3, size=n)
        base = column_accuracy(a, b)
        perm_a = rng.permutation(4)[a]
        perm_b = rng.permutation(3)[b]
        assert column_accuracy(perm_a, b) == base
        assert column_accuracy(a, perm_b) == base
        assert column_accuracy(b, a) == base


def test_accuracy_argument_errors():
    with pytest.raises(ValueError):
        column_accuracy([1], [1])
    with pytest.raises(ValueError):
        row_accuracy([1, 2], [1, 2, 3])


def test_fit_r2_perfect_and_null_fits():
    rng = np.random.default_rng(5)
    rows = np.array([0, 0, 1, 1, 2])
    cols = [np.array([0, 1, 0]), np.array([0, 0, 1, 1])]
    phi = [rng.normal(size=(3, 2)), rng.normal(size=(3, 2))]
    values = [phi[t][rows][:, cols[t]] for t in range(2)]
    perfect = fit_r2(values, rows, cols, phi)
    assert perfect.pooled == 1.0
    assert np.all(perfect.per_platform == 1.0)

    z = rng.normal(size=(6, 4))
    flat_phi = [np.full((1, 1), z.mean())]
    null = fit_r2([z], np.zeros(6, dtype=int), [np.zeros(4, dtype=int)], flat_phi)
    assert null.pooled == pytest.approx(0.0, abs=1e-12)


def test_fit_r2_hand_value_and_constant_platform():
    z = np.array([[1.0, 2.0], [3.0, 4.0]])
    phi = [np.array([[1.5], [3.5]])]
    rows = np.array([0, 1])
    cols = [np.array([0, 0])]
    out = fit_r2([z], rows, cols, phi)
    sse = 4 * 0.25
    sst = float(((z - z.mean()) ** 2).sum())
    assert out.per_platform[0] == pytest.approx(1 - sse / sst)

    const = np.full((3, 2), 1.7)
    out2 = fit_r2([const], np.zeros(3, dtype=int), [np.zeros(2, dtype=int)],
                  [np.full((1, 1), 1.7)])
    assert np.isnan(out2.per_platform[0])
    assert np.isnan(out2.pooled)


def test_generate_survival_censoring_and_predictors():
    rng = np.random.default_rng(21)
    values = [rng.normal(size=(70, 40)) * 0.3, rng.normal(size=(70, 40)) * 0.3]
    out = generate_survival(values, rng=8, n_predictors=10)
    times = out.outcomes.observed_time
    events = out.outcomes.censor_indicator
    assert times.shape == (70,)
    assert np.all(times > 0)
    assert events.sum() == 70 - round(0.2 * 70)
    cens = events == 0
    assert np.all(times[cens] < out.uncensored_times[cens])
    assert np.array_equal(times[~cens], out.uncensored_times[~cens])

    z = np.hstack(values)
    sub = z[:, out.predictors]
    corr = np.corrcoef(sub.T)
    off = corr[~np.eye(10, dtype=bool)]
    assert np.all(np.abs(off) < 0.5)

    again = generate_survival(values, rng=8, n_predictors=10)
    assert np.array_equal(again.outcomes.observed_time, times)


def test_generate_survival_on_block_structured_data():
    # patterns of a few row clusters span a low-dimensional space, so only
    # a small mutually decorrelated subset can be asked for
    dataset, _ = generate_synthetic(GeneratorConfig(n_probes=(40, 40)), rng=21)
    out = generate_survival(dataset.values, rng=3, n_predictors=3)
    assert out.predictors.shape == (3,)
    assert out.outcomes.n_patients == 70


def test_generate_survival_rejects_impossible_requests():
    z = np.outer(np.arange(6.0), np.ones(5))  # five identical columns
    with pytest.raises(ValueError):
        generate_survival(z, rng=0, n_predictors=3)


@pytest.fixture(scope="module")
def tiny_study():
    cfg = GeneratorConfig(n_patients=16, n_probes=(24, 20),
                          discounts=(0.0, 0.0), mass_columns=2.0,
                          n_row_clusters=2)
    schedule = ChainSchedule(joint_sweeps=40, row_sweeps=20, value_sweeps=20)
    return run_replication_study([(2, 0.2)], 2, seed=12, base_config=cfg,
                                 schedule=schedule)


def test_replication_study_table_shape(tiny_study):
    results, summary = tiny_study
    assert list(results.columns) == [
        "setup_h", "setup_sigma", "replicate",
        "kappa_1", "kappa_2", "theta", "r2_1", "r2_2", "seconds",
    ]
    assert len(results) == 2
    assert list(results["replicate"]) == [1, 2]
    assert np.all(results["seconds"] > 0)
    assert np.all(results[["kappa_1", "kappa_2", "theta"]].values <= 1.0)
    assert len(summary) == 1
    assert "theta_mean" in summary.columns and "theta_sd" in summary.columns


def test_replication_study_deterministic(tiny_study):
    cfg = GeneratorConfig(n_patients=16, n_probes=(24, 20),
                          discounts=(0.0, 0.0), mass_columns=2.0,
                          n_row_clusters=2)
    schedule = ChainSchedule(joint_sweeps=40, row_sweeps=20, value_sweeps=20)
    again, _ = run_replication_study([(2, 0.2)], 2, seed=12, base_config=cfg,
                                     schedule=schedule)
    first = tiny_study[0].drop(columns="seconds")
    pd.testing.assert_frame_equal(first, again.drop(columns="seconds"))


def test_replication_study_records_failures(monkeypatch, tmp_path):
    calls = {"n": 0}

    def boom(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 1:
            raise RuntimeError("synthetic failure")
        import omiclust.engine as engine
        return engine.run_stage1(*args, **kwargs)

    import omiclust.simulate as sim
    monkeypatch.setattr(sim, "run_stage1", boom)
    cfg = GeneratorConfig(n_patients=10, n_probes=(8, 8), discounts=(0.0, 0.0),
                          mass_columns=1.0, n_row_clusters=2)
    schedule = ChainSchedule(joint_sweeps=20, row_sweeps=10, value_sweeps=10)
    path = tmp_path / "study.csv"
    results, _ = run_replication_study([(2, 0.3)], 2, seed=4, base_config=cfg,
                                       schedule=schedule, csv_path=path)
    assert len(results) == 2
    assert np.isnan(results.loc[0, "kappa_1"]) and np.isnan(results.loc[0, "theta"])
    assert np.isfinite(results.loc[1, "kappa_1"])
    reread = pd.read_csv(path)
    assert list(reread.columns) == list(results.columns)
