"""Sampler kernel checks against exhaustive enumeration and conjugate facts.

The small-model tests marginalise the latent blocks analytically (discrete
measure or Gaussian conjugacy), enumerate every partition or seating
structure, and require the chain's visit frequencies to match within a
total-variation tolerance.
"""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from omiclust.kernels import (
    SamplerState,
    build_state,
    update_column_allocations,
    update_discount,
    update_latent_atoms,
    update_row_allocations,
    update_sigma,
)
from omiclust.model import Hyperparameters
from omiclust.partitions import DiscreteMeasure, canonicalize, iter_set_partitions, partition_log_prob

_LOG_2PI = np.log(2.0 * np.pi)


def norm_logpdf(x, mean, sd):
    return -0.5 * _LOG_2PI - np.log(sd) - 0.5 * ((np.asarray(x) - mean) / sd) ** 2


def total_variation(freqs: dict, labels, probs) -> float:
    tv = 0.0
    seen = 0.0
    for lab, prob in zip(labels, probs):
        f = freqs.get(lab, 0.0)
        tv += abs(f - prob)
        seen += f
    tv += 1.0 - seen  # mass the chain put on partitions outside the support
    return 0.5 * tv


# -- column kernel vs enumeration ------------------------------------------


def column_partition_posterior(z, row_alloc, measure, sd, discount, mass):
    """Exact posterior over column partitions with latent blocks summed out
    against the discrete measure."""
    labels = list(iter_set_partitions(z.shape[1]))
    h_count = int(np.max(row_alloc)) + 1
    logpost = []
    for alloc in labels:
        arr = np.asarray(alloc)
        lp = partition_log_prob(arr, discount, mass)
        for k in range(arr.max() + 1):
            cols = np.flatnonzero(arr == k)
            for h in range(h_count):
                rows = np.flatnonzero(np.asarray(row_alloc) == h)
                cell = z[np.ix_(rows, cols)]
                per_atom = [
                    np.log(w) + norm_logpdf(cell, a, sd).sum()
                    for a, w in zip(measure.atoms, measure.weights)
                ]
                lp += logsumexp(per_atom)
        logpost.append(lp)
    post = np.exp(logpost - logsumexp(logpost))
    return labels, post / post.sum()


def run_column_chain(z, row_alloc, measure, sd, discount, mass, n_sweeps, seed, n_aux=3):
    hyper = Hyperparameters(mass_columns=mass)
    state = build_state(
        [z], row_alloc, [np.zeros(z.shape[1], dtype=int)], hyper,
        sigma=sd, measures=[measure],
    )
    state.discounts[:] = discount
    rng = np.random.default_rng(seed)
    counts: dict[tuple, int] = {}
    burn = n_sweeps // 5
    for s in range(n_sweeps):
        update_column_allocations(state, 0, hyper, rng, n_aux=n_aux)
        update_latent_atoms(state, hyper, rng)
        if s >= burn:
            key = tuple(int(v) for v in state.col_alloc[0])
            counts[key] = counts.get(key, 0) + 1
    total = sum(counts.values())
    return {k: v / total for k, v in counts.items()}


AMBIGUOUS_Z = np.array([[0.8, 0.9, -0.7], [0.7, -0.8, 0.9]])
PM_MEASURE = DiscreteMeasure(atoms=np.array([-1.0, 1.0]), weights=np.array([0.5, 0.5]))


@pytest.mark.parametrize("discount,n_aux,seed", [(0.0, 3, 101), (0.45, 3, 102), (0.0, 1, 103)])
def test_column_kernel_matches_enumeration(discount, n_aux, seed):
    row_alloc = np.array([0, 1])
    labels, probs = column_partition_posterior(
        AMBIGUOUS_Z, row_alloc, PM_MEASURE, sd=0.75, discount=discount, mass=1.0
    )
    assert probs.max() < 0.9, "setup must leave the posterior genuinely spread"
    freqs = run_column_chain(
        AMBIGUOUS_Z, row_alloc, PM_MEASURE, sd=0.75, discount=discount,
        mass=1.0, n_sweeps=20000, seed=seed, n_aux=n_aux,
    )
    assert total_variation(freqs, labels, probs) <= 0.05


# -- row kernel vs enumeration ---------------------------------------------


def row_partition_posterior(values, col_allocs, measure, sds, mass):
    n = values[0].shape[0]
    labels = list(iter_set_partitions(n))
    logpost = []
    for alloc in labels:
        arr = np.asarray(alloc)
        lp = partition_log_prob(arr, 0.0, mass)
        for t, z in enumerate(values):
            c = np.asarray(col_allocs[t])
            for h in range(arr.max() + 1):
                rows = np.flatnonzero(arr == h)
                for k in range(c.max() + 1):
                    cols = np.flatnonzero(c == k)
                    cell = z[np.ix_(rows, cols)]
                    per_atom = [
                        np.log(w) + norm_logpdf(cell, a, sds[t]).sum()
                        for a, w in zip(measure.atoms, measure.weights)
                    ]
                    lp += logsumexp(per_atom)
        logpost.append(lp)
    post = np.exp(logpost - logsumexp(logpost))
    return labels, post / post.sum()


@pytest.mark.parametrize("seed", [201, 202])
def test_row_kernel_matches_enumeration(seed):
    values = [np.array([[0.9], [0.7], [-0.8]]), np.array([[0.6], [-0.9], [0.8]])]
    sds = np.array([0.7, 0.9])
    labels, probs = row_partition_posterior(values, [[0], [0]], PM_MEASURE, sds, mass=1.0)
    assert probs.max() < 0.9
    hyper = Hyperparameters(mass_rows=1.0)
    state = build_state(
        values, [0, 0, 0], [[0], [0]], hyper,
        shared_sigma=False, sigma=sds, measures=[PM_MEASURE, PM_MEASURE],
    )
    rng = np.random.default_rng(seed)
    counts: dict[tuple, int] = {}
    n_sweeps = 20000
    for s in range(n_sweeps):
        update_row_allocations(state, hyper, rng)
        update_latent_atoms(state, hyper, rng)
        if s >= n_sweeps // 5:
            key = tuple(int(v) for v in state.row_alloc)
            counts[key] = counts.get(key, 0) + 1
    total = sum(counts.values())
    freqs = {k: v / total for k, v in counts.items()}
    assert total_variation(freqs, labels, probs) <= 0.05


# -- atom sweep vs analytic seating posteriors -----------------------------


def test_atom_sweep_single_cell_conjugate():
    # One latent cell backed by two data points: every sweep redraws the
    # atom exactly from its Normal full conditional, so the chain must
    # reproduce the conjugate posterior moments.
    z = np.array([[0.7], [0.9]])
    hyper = Hyperparameters(base_mean=0.0, base_sd=1.0)
    state = build_state([z], [0, 0], [[0]], hyper, sigma=0.5)
    prec = 1.0 + 2.0 / 0.25
    mean = (z.sum() / 0.25) / prec
    rng = np.random.default_rng(31)
    draws = np.empty(6000)
    for s in range(draws.size):
        update_latent_atoms(state, hyper, rng)
        draws[s] = state.phi[0][0, 0]
    se = 1.0 / np.sqrt(prec * draws.size)
    assert abs(draws.mean() - mean) < 4 * se
    assert abs(draws.var() * prec - 1.0) < 0.15


def _structure_freqs(run_sweeps, classify, n_sweeps, burn, state, hyper, seed):
    rng = np.random.default_rng(seed)
    counts: dict[int, int] = {}
    for s in range(n_sweeps):
        update_latent_atoms(state, hyper, rng)
        if s >= burn:
            k = classify(state)
            counts[k] = counts.get(k, 0) + 1
    total = sum(counts.values())
    return np.array([counts.get(i, 0) / total for i in range(3)])


def test_atom_sweep_two_cell_seating_posterior():
    # Two latent cells in one platform; structures: shared table, shared
    # atom on separate tables, distinct atoms.  Priors come from the two
    # nested urn levels, likelihoods from Gaussian marginals.
    z = np.array([[0.9, 1.1]])
    a3, a4, sd = 1.3, 0.8, 0.6
    hyper = Hyperparameters(mass_tables=a3, mass_atoms=a4, base_mean=0.0, base_sd=1.0)
    state = build_state([z], [0], [[0, 1]], hyper, sigma=sd)
    prior = np.array([1 / (1 + a3), a3 / (1 + a3) / (1 + a4), a3 / (1 + a3) * a4 / (1 + a4)])
    s2 = sd * sd
    shared_cov = s2 * np.eye(2) + np.ones((2, 2))
    lik_shared = multivariate_normal.pdf(z[0], mean=[0, 0], cov=shared_cov)
    lik_split = multivariate_normal.pdf(z[0], mean=[0, 0], cov=(s2 + 1.0) * np.eye(2))
    post = prior * np.array([lik_shared, lik_shared, lik_split])
    post /= post.sum()

    def classify(st: SamplerState) -> int:
        t0, t1 = int(st.table_ids[0][0, 0]), int(st.table_ids[0][0, 1])
        if t0 == t1:
            return 0
        return 1 if st.store.dish_of(0, t0) == st.store.dish_of(0, t1) else 2

    freqs = _structure_freqs(None, classify, 20000, 4000, state, hyper, seed=41)
    assert 0.5 * np.abs(freqs - post).sum() <= 0.05


def test_atom_sweep_cross_platform_sharing_posterior():
    # One cell per platform: tables live in different restaurants, so the
    # only question is whether the second table re-serves the first atom.
    values = [np.array([[0.8]]), np.array([[1.0]])]
    a4 = 0.9
    sds = np.array([0.5, 0.7])
    hyper = Hyperparameters(mass_tables=1.1, mass_atoms=a4, base_mean=0.0, base_sd=1.0)
    state = build_state(values, [0], [[0], [0]], hyper, shared_sigma=False, sigma=sds)
    obs = np.array([0.8, 1.0])
    shared_cov = np.diag(sds ** 2) + np.ones((2, 2))
    lik_shared = multivariate_normal.pdf(obs, mean=[0, 0], cov=shared_cov)
    lik_split = multivariate_normal.pdf(obs, mean=[0, 0], cov=np.diag(sds ** 2 + 1.0))
    post = np.array([lik_shared / (1 + a4), lik_split * a4 / (1 + a4)])
    post /= post.sum()

    def classify(st: SamplerState) -> int:
        d0 = st.store.dish_of(0, int(st.table_ids[0][0, 0]))
        d1 = st.store.dish_of(1, int(st.table_ids[1][0, 0]))
        return 0 if d0 == d1 else 1

    freqs = _structure_freqs(None, classify, 20000, 4000, state, hyper, seed=43)[:2]
    assert 0.5 * np.abs(freqs - post).sum() <= 0.05


# -- noise and discount kernels --------------------------------------------


def test_sigma_update_matches_inverse_gamma_moments():
    rng_data = np.random.default_rng(7)
    z = rng_data.normal(size=(5, 4))
    hyper = Hyperparameters(sigma_shape=2.0, sigma_scale=1.5)
    state = build_state([z], [0, 0, 1, 1, 1], [[0, 1, 0, 1]], hyper)
    b = state.block_sums(0)
    cnt = state.block_counts(0)
    sse = float(np.sum(z * z)) - 2 * np.sum(state.phi[0] * b) + np.sum(cnt * state.phi[0] ** 2)
    a_n = 2.0 + z.size / 2
    b_n = 1.5 + sse / 2
    rng = np.random.default_rng(8)
    draws = np.array([update_sigma(state, hyper, rng)[0] ** 2 for _ in range(4000)])
    want_mean = b_n / (a_n - 1)
    want_sd = b_n / ((a_n - 1) * np.sqrt(a_n - 2))
    assert abs(draws.mean() - want_mean) < 4 * want_sd / np.sqrt(draws.size) + 1e-12


def test_discount_sampler_matches_quadrature():
    # Fixed allocation; the mixture posterior over the discount has an
    # atom at zero plus a continuous part we can integrate numerically.
    alloc = canonicalize(np.repeat(np.arange(6), [12, 9, 5, 2, 1, 1]))
    mass = 1.0
    ref = partition_log_prob(alloc, 0.0, mass)

    def lik(u):
        return np.exp(partition_log_prob(alloc, u, mass) - ref)

    cont, _ = quad(lik, 0.0, 1.0, limit=200)
    p_zero = 1.0 / (1.0 + cont)
    mean_pos = quad(lambda u: u * lik(u), 0.0, 1.0, limit=200)[0] / cont

    hyper = Hyperparameters(mass_columns=mass)
    z = np.random.default_rng(3).normal(size=(2, alloc.size))
    state = build_state([z], [0, 0], [alloc], hyper,
                        measures=[DiscreteMeasure(np.array([0.0]), np.array([1.0]))])
    rng = np.random.default_rng(44)
    hits = 0
    pos: list[float] = []
    n_steps = 30000
    for _ in range(n_steps):
        update_discount(state, 0, hyper, rng)
        if state.discounts[0] == 0.0:
            hits += 1
        else:
            pos.append(float(state.discounts[0]))
    assert abs(hits / n_steps - p_zero) < 0.04
    assert abs(np.mean(pos) - mean_pos) < 0.05


# -- integration invariants ------------------------------------------------


def run_full_sweep(state, hyper, rng, n_aux_cols=3):
    for t in range(state.n_platforms):
        update_column_allocations(state, t, hyper, rng, n_aux=n_aux_cols)
    update_row_allocations(state, hyper, rng)
    update_latent_atoms(state, hyper, rng)
    update_sigma(state, hyper, rng)
    for t in range(state.n_platforms):
        update_discount(state, t, hyper, rng)


def test_mixed_sweeps_keep_state_consistent():
    rng = np.random.default_rng(5)
    values = [rng.normal(size=(8, 6)), rng.normal(size=(8, 5))]
    hyper = Hyperparameters()
    row0 = canonicalize(rng.integers(0, 3, size=8))
    cols0 = [canonicalize(rng.integers(0, 3, size=6)), canonicalize(rng.integers(0, 2, size=5))]
    state = build_state(values, row0, cols0, hyper)
    rng2 = np.random.default_rng(6)
    for _ in range(40):
        run_full_sweep(state, hyper, rng2)
        state.check_consistency()
        assert np.isfinite(state.log_posterior(hyper))
        assert 0.0 <= state.discounts[0] < 1.0


def test_separated_blocks_recovered_from_merged_start():
    # Per-sweep partitions legitimately wander through refinements whose
    # sub-clusters share an atom (identical likelihood, prior-only
    # penalty), so the checks are pairwise: true pairs must co-cluster in
    # most sweeps, cross pairs almost never, and the modal partition must
    # be the truth.
    rng = np.random.default_rng(11)
    rows_true = np.array([0, 0, 0, 1, 1, 1])
    cols_true = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    signs = np.array([[1.5, -1.5], [-1.5, 1.5]])
    z = signs[np.ix_(rows_true, cols_true)] + 0.05 * rng.normal(size=(6, 8))
    z[:, 1] = z[:, 0]  # exact duplicate probe
    hyper = Hyperparameters()
    state = build_state([z], np.zeros(6, dtype=int), [np.zeros(8, dtype=int)], hyper)
    rng2 = np.random.default_rng(12)
    col_pairs = np.zeros((8, 8))
    row_pairs = np.zeros((6, 6))
    visits: dict[tuple, int] = {}
    n_sweeps, watch = 300, 100
    for s in range(n_sweeps):
        run_full_sweep(state, hyper, rng2)
        if s >= n_sweeps - watch:
            c = state.col_alloc[0]
            col_pairs += c[:, None] == c[None, :]
            r = state.row_alloc
            row_pairs += r[:, None] == r[None, :]
            key = tuple(int(v) for v in c)
            visits[key] = visits.get(key, 0) + 1
    col_pairs /= watch
    row_pairs /= watch
    same_col = cols_true[:, None] == cols_true[None, :]
    same_row = rows_true[:, None] == rows_true[None, :]
    assert col_pairs[same_col].min() >= 0.55
    assert col_pairs[~same_col].max() <= 0.10
    assert col_pairs[0, 1] >= 0.75  # the duplicated probe
    assert row_pairs[same_row].min() >= 0.50
    assert row_pairs[~same_row].max() <= 0.10
    assert max(visits, key=visits.get) == tuple(cols_true)
    assert state.sigma[0] < 0.2  # annealed down from the merged-start sd


def test_single_probe_platform_stays_valid():
    rng = np.random.default_rng(17)
    z = rng.normal(size=(3, 1))
    hyper = Hyperparameters()
    state = build_state([z], [0, 0, 0], [[0]], hyper)
    rng2 = np.random.default_rng(18)
    for _ in range(30):
        run_full_sweep(state, hyper, rng2)
        assert state.n_col_clusters(0) == 1
        state.check_consistency()
