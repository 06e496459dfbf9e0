from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.special import gammaln, psi
from scipy.stats import kstest

from omiclust.partitions import (
    DiscreteMeasure,
    canonicalize,
    cluster_sizes,
    is_canonical,
    iter_set_partitions,
    partition_log_prob,
    pdp_predictive,
    sample_discount,
    sample_partition,
    stick_breaking,
)


def sequential_log_prob(alloc, discount, mass):
    """Oracle: compose the one-step predictive probabilities directly."""
    alloc = np.asarray(alloc)
    sizes: list[float] = []
    total = 0.0
    for a in alloc:
        probs = pdp_predictive(np.array(sizes), discount, mass)
        total += math.log(probs[a] if a < len(sizes) else probs[-1])
        if a == len(sizes):
            sizes.append(1.0)
        else:
            sizes[a] += 1.0
    return total


def crp_log_prob(alloc, mass):
    """Oracle: classical CRP partition probability
    mass^K * prod (n_k - 1)! / (mass)_(n)."""
    sizes = cluster_sizes(alloc)
    n = len(alloc)
    num = len(sizes) * math.log(mass) + sum(gammaln(s) for s in sizes)
    den = gammaln(mass + n) - gammaln(mass)
    return num - den


class TestPdpPredictive:
    def test_crp_case(self):
        probs = pdp_predictive(np.array([3, 2]), 0.0, 1.0)
        np.testing.assert_allclose(probs, [0.5, 1.0 / 3.0, 1.0 / 6.0])

    def test_discounted_case(self):
        probs = pdp_predictive(np.array([3, 2]), 0.5, 1.0)
        np.testing.assert_allclose(probs, [2.5 / 6.0, 1.5 / 6.0, 2.0 / 6.0])

    def test_empty_counts(self):
        np.testing.assert_allclose(pdp_predictive(np.array([]), 0.3, 2.0), [1.0])

    def test_normalization_sweep(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            k = int(rng.integers(1, 12))
            sizes = rng.integers(1, 30, size=k)
            d = float(rng.random() * 0.99)
            mass = float(rng.gamma(2.0, 2.0) + 1e-3)
            probs = pdp_predictive(sizes, d, mass)
            assert abs(probs.sum() - 1.0) < 1e-12
            assert np.all(probs > 0)

    @pytest.mark.parametrize("d,mass", [(-0.1, 1.0), (1.0, 1.0), (0.2, 0.0), (0.2, -3.0)])
    def test_bad_params(self, d, mass):
        with pytest.raises(ValueError):
            pdp_predictive(np.array([2, 1]), d, mass)


class TestPartitionLogProb:
    def test_hand_value(self):
        # 3 items, clusters {0,2}{1}: 1 * 0.75 * (0.5/3) = 0.125
        assert partition_log_prob([0, 1, 0], 0.5, 1.0) == pytest.approx(math.log(0.125), abs=1e-12)

    def test_single_item(self):
        assert partition_log_prob([0], 0.3, 2.0) == 0.0

    def test_matches_sequential_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            n = int(rng.integers(1, 15))
            d = float(rng.random() * 0.95)
            mass = float(rng.gamma(2.0, 1.5) + 1e-2)
            alloc = sample_partition(n, d, mass, rng)
            assert partition_log_prob(alloc, d, mass) == pytest.approx(
                sequential_log_prob(alloc, d, mass), abs=1e-10
            )

    def test_crp_special_case(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(1, 12))
            mass = float(rng.gamma(2.0, 2.0) + 1e-2)
            alloc = sample_partition(n, 0.0, mass, rng)
            assert partition_log_prob(alloc, 0.0, mass) == pytest.approx(
                crp_log_prob(alloc, mass), abs=1e-10
            )

    @pytest.mark.parametrize("alloc", [[1, 0], [0, 2], [0, 1, 3]])
    def test_non_canonical_rejected(self, alloc):
        with pytest.raises(ValueError, match="canonical"):
            partition_log_prob(alloc, 0.0, 1.0)

    def test_exchangeability_all_orderings(self):
        # Seating order must not matter: for every set partition of up to 6
        # items, every ordering of the items yields the same probability.
        from itertools import permutations

        for d, mass in [(0.0, 1.0), (0.4, 0.7), (0.8, 2.5)]:
            for n in (2, 3, 4):
                for alloc in iter_set_partitions(n):
                    base = partition_log_prob(alloc, d, mass)
                    for perm in permutations(range(n)):
                        reordered = canonicalize([alloc[i] for i in perm])
                        assert partition_log_prob(reordered, d, mass) == pytest.approx(base, abs=1e-10)
        # n = 6 is the expensive case; one parameter pair keeps it honest.
        for alloc in iter_set_partitions(6):
            base = partition_log_prob(alloc, 0.35, 1.3)
            from itertools import permutations as perms

            for perm in perms(range(6)):
                reordered = canonicalize([alloc[i] for i in perm])
                assert partition_log_prob(reordered, 0.35, 1.3) == pytest.approx(base, abs=1e-10)

    def test_total_mass_one(self):
        for d, mass in [(0.0, 1.0), (0.25, 0.5), (0.5, 1.0), (0.9, 3.0)]:
            for n in range(1, 6):
                total = sum(math.exp(partition_log_prob(a, d, mass)) for a in iter_set_partitions(n))
                assert total == pytest.approx(1.0, abs=1e-10)


class TestSamplePartition:
    def test_canonical_labels(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            alloc = sample_partition(int(rng.integers(1, 40)), 0.3, 1.0, rng)
            assert is_canonical(alloc)

    def test_single_item(self):
        rng = np.random.default_rng(0)
        assert sample_partition(1, 0.0, 5.0, rng).tolist() == [0]

    def test_frequencies_match_eppf(self):
        # All 15 partitions of 4 items at d=0.5, mass=1; empirical
        # frequencies against exact probabilities within 3 Monte Carlo sd.
        rng = np.random.default_rng(42)
        n_draws = 200_000
        counts: dict[tuple, int] = {}
        for _ in range(n_draws):
            key = tuple(sample_partition(4, 0.5, 1.0, rng))
            counts[key] = counts.get(key, 0) + 1
        for alloc in iter_set_partitions(4):
            q = math.exp(partition_log_prob(alloc, 0.5, 1.0))
            freq = counts.get(alloc, 0) / n_draws
            sd = math.sqrt(q * (1.0 - q) / n_draws)
            assert abs(freq - q) < 3.0 * sd + 1e-9, f"partition {alloc}: {freq} vs {q}"

    def test_crp_mean_cluster_count(self):
        # E[K] under the CRP is mass * (psi(mass + p) - psi(mass)), which
        # grows like mass * log(1 + p/mass); check both against 200 draws.
        rng = np.random.default_rng(5)
        mass, p, n_draws = 10.0, 10_000, 200
        ks = np.array(
            [cluster_sizes(sample_partition(p, 0.0, mass, rng)).size for _ in range(n_draws)],
            dtype=float,
        )
        exact = mass * (psi(mass + p) - psi(mass))
        probs = mass / (mass + np.arange(p))
        sd_mean = math.sqrt(float(np.sum(probs * (1.0 - probs))) / n_draws)
        assert abs(ks.mean() - exact) < 3.0 * sd_mean
        assert abs(ks.mean() - mass * math.log(1.0 + p / mass)) / (mass * math.log(1.0 + p / mass)) < 0.15

    def test_discount_inflates_cluster_count(self):
        rng = np.random.default_rng(9)
        p = 2000
        k0 = np.mean([cluster_sizes(sample_partition(p, 0.0, 5.0, rng)).size for _ in range(40)])
        k5 = np.mean([cluster_sizes(sample_partition(p, 0.5, 5.0, rng)).size for _ in range(40)])
        assert k5 > 2.0 * k0


class TestIterSetPartitions:
    def test_bell_numbers(self):
        for n, bell in [(1, 1), (2, 2), (3, 5), (4, 15), (5, 52), (6, 203)]:
            parts = list(iter_set_partitions(n))
            assert len(parts) == bell
            assert len(set(parts)) == bell
            assert all(is_canonical(np.array(a)) for a in parts)


class TestStickBreaking:
    @staticmethod
    def normal_base(rng, size):
        return rng.normal(0.0, 1.0, size=size)

    def test_weights_form_probability(self):
        rng = np.random.default_rng(1)
        for mass in (0.5, 1.0, 10.0):
            m = stick_breaking(mass, self.normal_base, 500, rng)
            assert abs(m.weights.sum() - 1.0) < 1e-12
            assert np.all(m.weights >= 0)
            assert m.atoms.shape == (500,)

    def test_first_weight_mean(self):
        # E[V_1] = 1 / (1 + mass) for stick weights V_1 ~ Beta(1, mass).
        rng = np.random.default_rng(2)
        mass = 10.0
        draws = np.array([stick_breaking(mass, self.normal_base, 50, rng).weights[0] for _ in range(4000)])
        expected = 1.0 / (1.0 + mass)
        sd = math.sqrt(expected * mass / ((2.0 + mass) * (1.0 + mass) ** 2) / draws.size)
        assert abs(draws.mean() - expected) < 4.0 * sd

    def test_truncation_one(self):
        rng = np.random.default_rng(3)
        m = stick_breaking(2.0, self.normal_base, 1, rng)
        assert m.weights.tolist() == [1.0]


class TestDiscreteMeasure:
    def test_weight_validation(self):
        with pytest.raises(ValueError):
            DiscreteMeasure(atoms=np.array([0.0, 1.0]), weights=np.array([0.6, 0.6]))
        with pytest.raises(ValueError):
            DiscreteMeasure(atoms=np.array([0.0]), weights=np.array([-1.0]))

    def test_sampling(self):
        m = DiscreteMeasure(atoms=np.array([-1.0, 2.0]), weights=np.array([0.25, 0.75]))
        rng = np.random.default_rng(0)
        draws = m.sample(rng, size=20_000)
        assert set(np.unique(draws)) <= {-1.0, 2.0}
        assert abs(np.mean(draws == 2.0) - 0.75) < 0.02


class TestSampleDiscount:
    def test_mixture_shape(self):
        rng = np.random.default_rng(8)
        draws = np.array([sample_discount(rng) for _ in range(20_000)])
        zero_frac = np.mean(draws == 0.0)
        assert abs(zero_frac - 0.5) < 0.02
        nonzero = draws[draws > 0]
        assert np.all((nonzero > 0) & (nonzero < 1))
        assert kstest(nonzero, "uniform").pvalue > 0.01
