"""Least-squares point estimates from posterior partition samples.

The estimate is the sampled partition whose pairwise co-clustering
indicators are closest, in squared error over unordered pairs, to the
posterior co-clustering frequencies.  Ties go to the earliest sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from omiclust.partitions import canonicalize


def _as_sample_matrix(allocs) -> np.ndarray:
    a = np.asarray(allocs, dtype=np.intp)
    if a.ndim != 2:
        raise ValueError("need a (samples, items) array of allocation vectors")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError("need at least one sample of at least one item")
    return a


def _batch_size(n_items: int, max_bytes: int) -> int:
    # Per sample: one boolean indicator matrix plus one float residual matrix.
    per_sample = 9 * n_items * n_items
    return max(1, int(max_bytes) // per_sample)


def pairwise_coclustering(allocs, max_bytes: int = 2**30) -> np.ndarray:
    """Fraction of samples in which each pair of items shares a cluster.

    Returns a symmetric (items, items) matrix with unit diagonal,
    accumulated in batches sized to the given memory budget.
    """
    a = _as_sample_matrix(allocs)
    n_samples, n_items = a.shape
    out = np.zeros((n_items, n_items))
    step = _batch_size(n_items, max_bytes)
    for start in range(0, n_samples, step):
        chunk = a[start:start + step]
        out += (chunk[:, :, None] == chunk[:, None, :]).sum(axis=0)
    return out / n_samples


@dataclass(frozen=True)
class LeastSquaresEstimate:
    """Chosen partition, its sample index, and per-sample losses."""

    alloc: np.ndarray
    sample_index: int
    loss: float
    losses: np.ndarray


def least_squares_allocation(allocs, coclustering: np.ndarray | None = None,
                             max_bytes: int = 2**30) -> LeastSquaresEstimate:
    a = _as_sample_matrix(allocs)
    n_samples, n_items = a.shape
    if coclustering is None:
        coclustering = pairwise_coclustering(a, max_bytes=max_bytes)
    pi = np.asarray(coclustering, dtype=np.float64)
    if pi.shape != (n_items, n_items):
        raise ValueError("co-clustering matrix does not match the samples")
    losses = np.empty(n_samples)
    step = _batch_size(n_items, max_bytes)
    for start in range(0, n_samples, step):
        chunk = a[start:start + step]
        resid = (chunk[:, :, None] == chunk[:, None, :]) - pi
        # Diagonal residuals vanish, so the full-matrix sum double counts
        # exactly the unordered pairs.
        losses[start:start + step] = 0.5 * np.einsum("sij,sij->s", resid, resid)
    best = int(np.argmin(losses))
    return LeastSquaresEstimate(
        alloc=canonicalize(a[best]), sample_index=best,
        loss=float(losses[best]), losses=losses,
    )
