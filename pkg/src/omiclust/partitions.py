"""Random partition machinery: two-parameter Poisson-Dirichlet (PDP) and
Dirichlet-process (DP) predictive rules, exact partition probabilities,
stick-breaking draws of discrete measures, and the mixture prior on the
discount parameter.

Conventions
-----------
Allocation vectors are 0-based integer arrays in canonical form: labels
appear in order of first appearance, so ``alloc[0] == 0`` and a new label
is always exactly one larger than the current maximum.  Cluster size
vectors are plain 1-d integer arrays ordered by label.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "pdp_predictive",
    "sample_partition",
    "partition_log_prob",
    "cluster_sizes",
    "canonicalize",
    "is_canonical",
    "iter_set_partitions",
    "DiscreteMeasure",
    "stick_breaking",
    "sample_discount",
]


def _check_params(discount: float, mass: float) -> None:
    if not (0.0 <= discount < 1.0):
        raise ValueError(f"discount must lie in [0, 1), got {discount!r}")
    if not mass > 0.0:
        raise ValueError(f"mass must be positive, got {mass!r}")


def cluster_sizes(alloc) -> np.ndarray:
    """Occupancy counts of an allocation vector, ordered by label."""
    alloc = np.asarray(alloc, dtype=np.intp)
    if alloc.size == 0:
        return np.zeros(0, dtype=np.intp)
    return np.bincount(alloc)


def is_canonical(alloc) -> bool:
    """True iff labels are 0..K-1 in order of first appearance."""
    alloc = np.asarray(alloc, dtype=np.intp)
    seen = -1
    for a in alloc:
        if a < 0 or a > seen + 1:
            return False
        if a == seen + 1:
            seen = a
    return True


def canonicalize(alloc) -> np.ndarray:
    """Relabel an allocation vector into first-appearance order."""
    alloc = np.asarray(alloc, dtype=np.intp)
    mapping: dict[int, int] = {}
    out = np.empty_like(alloc)
    for i, a in enumerate(alloc):
        if a not in mapping:
            mapping[a] = len(mapping)
        out[i] = mapping[a]
    return out


def pdp_predictive(sizes, discount: float, mass: float) -> np.ndarray:
    """Predictive allocation probabilities of the next item under a PDP.

    Given current cluster sizes ``n_1..n_K`` the next item joins cluster k
    with probability proportional to ``n_k - discount`` and opens a new
    cluster with probability proportional to ``mass + K * discount``.
    Returns a vector of length K+1 whose last entry is the new-cluster
    probability.  ``discount=0`` recovers the Chinese restaurant process.
    """
    _check_params(discount, mass)
    sizes = np.asarray(sizes, dtype=np.float64)
    if sizes.ndim != 1:
        raise ValueError("sizes must be a 1-d vector of cluster sizes")
    if sizes.size == 0:
        return np.array([1.0])
    if np.any(sizes < 1):
        raise ValueError("cluster sizes must be >= 1")
    k = sizes.size
    total = sizes.sum()
    probs = np.empty(k + 1)
    probs[:k] = sizes - discount
    probs[k] = mass + k * discount
    probs /= total + mass
    return probs


def sample_partition(n_items: int, discount: float, mass: float, rng) -> np.ndarray:
    """Draw an exchangeable random partition of ``n_items`` by sequential
    seating, returned as a canonical allocation vector."""
    _check_params(discount, mass)
    if n_items < 1:
        raise ValueError("n_items must be >= 1")
    alloc = np.zeros(n_items, dtype=np.intp)
    sizes = [1.0]
    for i in range(1, n_items):
        total = float(i)
        k = len(sizes)
        u = rng.random() * (total + mass)
        acc = 0.0
        choice = k
        for j in range(k):
            acc += sizes[j] - discount
            if u < acc:
                choice = j
                break
        if choice == k:
            sizes.append(1.0)
        else:
            sizes[choice] += 1.0
        alloc[i] = choice
    return alloc


def partition_log_prob(alloc, discount: float, mass: float) -> float:
    """Exact log probability of a canonical allocation under the PDP.

    Equal to the log product of sequential ``pdp_predictive`` terms; the
    closed form multiplies ``mass + k*discount`` over cluster openings and
    rising factorials ``(1-discount)^(n_k - 1)`` within clusters.
    """
    _check_params(discount, mass)
    alloc = np.asarray(alloc, dtype=np.intp)
    if alloc.size == 0:
        raise ValueError("allocation vector must be non-empty")
    if not is_canonical(alloc):
        raise ValueError("allocation vector is not in canonical (first-appearance) form")
    sizes = cluster_sizes(alloc)
    n = alloc.size
    k = sizes.size
    log_num = 0.0
    if k > 1:
        log_num += np.log(mass + discount * np.arange(1, k)).sum()
    within = np.concatenate([np.arange(1, s) for s in sizes]) if n > k else np.zeros(0)
    if within.size:
        log_num += np.log(within - discount).sum()
    log_den = np.log(mass + np.arange(1, n)).sum()
    return float(log_num - log_den)


def iter_set_partitions(n: int):
    """Yield every set partition of ``range(n)`` as a canonical allocation
    tuple (restricted growth strings)."""
    if n < 1:
        raise ValueError("n must be >= 1")

    def rec(prefix: list[int], max_label: int):
        i = len(prefix)
        if i == n:
            yield tuple(prefix)
            return
        for lab in range(max_label + 2):
            prefix.append(lab)
            yield from rec(prefix, max(max_label, lab))
            prefix.pop()

    yield from rec([0], 0)


@dataclass
class DiscreteMeasure:
    """Finitely supported probability measure on the real line."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.atoms.shape != self.weights.shape or self.atoms.ndim != 1:
            raise ValueError("atoms and weights must be 1-d arrays of equal length")
        if self.atoms.size == 0:
            raise ValueError("measure must have at least one atom")
        if np.any(self.weights < 0):
            raise ValueError("weights must be non-negative")
        if abs(self.weights.sum() - 1.0) > 1e-8:
            raise ValueError("weights must sum to one within 1e-8")

    def sample(self, rng, size=None) -> np.ndarray:
        idx = rng.choice(self.atoms.size, size=size, p=self.weights / self.weights.sum())
        return self.atoms[idx]


def stick_breaking(mass: float, base_sampler, truncation: int, rng) -> DiscreteMeasure:
    """Truncated stick-breaking draw from a DP with the given mass.

    ``base_sampler(rng, size)`` supplies atom locations.  The unassigned
    stick remainder is absorbed into the final weight so the result is a
    proper probability measure.
    """
    if not mass > 0:
        raise ValueError("mass must be positive")
    if truncation < 1:
        raise ValueError("truncation must be >= 1")
    v = rng.beta(1.0, mass, size=truncation)
    w = v.copy()
    if truncation > 1:
        w[1:] *= np.cumprod(1.0 - v)[:-1]
    w[-1] = max(1.0 - w[:-1].sum(), 0.0)
    atoms = np.asarray(base_sampler(rng, truncation), dtype=np.float64)
    if atoms.shape != (truncation,):
        raise ValueError("base_sampler must return a vector of length truncation")
    return DiscreteMeasure(atoms=atoms, weights=w / w.sum())


def sample_discount(rng, point_mass: float = 0.5) -> float:
    """Draw from the discount prior: a point mass at zero mixed with
    U(0, 1).  ``point_mass`` is the weight on exactly zero."""
    if not (0.0 <= point_mass <= 1.0):
        raise ValueError("point_mass must lie in [0, 1]")
    if rng.random() < point_mass:
        return 0.0
    return float(rng.random())
