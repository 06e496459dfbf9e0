"""Staged chain driver for the bidirectional clustering model.

Inference runs in three phases.  The joint phase samples everything:
column partitions, the row partition, latent blocks, noise and discounts.
The recorded column partitions yield a least-squares point estimate per
platform, which is then held fixed while a second phase resamples rows.
With both partitions pinned to their point estimates, a final phase
refreshes only the latent values and noise, giving posterior means for
the block matrices conditional on the reported clustering.

State is rebuilt at each phase boundary (the point estimate is a
partition, not a full latent configuration): blocks restart at their
block means with one atom per cell, and the phase's burn-in
re-equilibrates the seating before anything is recorded.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.cluster.hierarchy import complete, fcluster
from scipy.spatial.distance import squareform

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
from omiclust.partitions import canonicalize
from omiclust.pointest import least_squares_allocation, pairwise_coclustering

PHASE_JOINT = "joint"
PHASE_ROWS = "rows"
PHASE_VALUES = "values"


@dataclass(frozen=True)
class ChainSchedule:
    """Sweep counts and recording rules for the three phases."""

    joint_sweeps: int = 2000
    row_sweeps: int = 1000
    value_sweeps: int = 1000
    burn_fraction: float = 0.5
    thin: int = 2
    aux_columns: int = 3

    def __post_init__(self):
        for name in ("joint_sweeps", "row_sweeps", "value_sweeps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.burn_fraction < 1.0:
            raise ValueError("burn_fraction must lie in [0, 1)")
        if self.thin < 1 or self.aux_columns < 1:
            raise ValueError("thin and the auxiliary count must be >= 1")

    def recorded_sweeps(self, n_sweeps: int) -> range:
        burn = int(round(self.burn_fraction * n_sweeps))
        if burn >= n_sweeps:
            burn = n_sweeps - 1
        return range(burn, n_sweeps, self.thin)


@dataclass
class Stage1Result:
    """Point estimates and posterior summaries from the staged run."""

    column_alloc: list[np.ndarray]
    row_alloc: np.ndarray
    phi_mean: list[np.ndarray]
    sigma_mean: np.ndarray
    atom_ids: list[np.ndarray]
    column_coclustering: list[np.ndarray]
    row_coclustering: np.ndarray
    diagnostics: pd.DataFrame
    discount_acceptance: np.ndarray
    timings: dict[str, float] = field(default_factory=dict)
    final_state: SamplerState | None = None

    @property
    def n_row_clusters(self) -> int:
        return int(self.row_alloc.max()) + 1

    def n_column_clusters(self, t: int) -> int:
        return int(self.column_alloc[t].max()) + 1


def initial_column_clusters(values: np.ndarray, cut: float = 0.5) -> np.ndarray:
    """Complete-linkage clustering of probes under correlation distance,
    cut at the given height.  Constant probes are mutually at distance
    zero and maximally distant from everything else."""
    z = np.asarray(values, dtype=np.float64)
    p = z.shape[1]
    if p == 1:
        return np.zeros(1, dtype=np.intp)
    sd = z.std(axis=0)
    const = sd == 0.0
    dist = np.ones((p, p))
    live = ~const
    if live.sum() >= 2:
        corr = np.corrcoef(z[:, live], rowvar=False)
        dist[np.ix_(live, live)] = 1.0 - np.clip(corr, -1.0, 1.0)
    elif live.sum() == 1:
        dist[np.ix_(live, live)] = 0.0
    if const.any():
        dist[np.ix_(const, const)] = 0.0
    np.fill_diagonal(dist, 0.0)
    dist = np.maximum(dist, 0.0)
    link = complete(squareform(dist, checks=False))
    labels = fcluster(link, t=cut, criterion="distance")
    return canonicalize(labels)


def init_state(values, hyper: Hyperparameters, *, shared_sigma: bool = True,
               init_columns=None, init_rows=None, linkage_cut: float = 0.5) -> SamplerState:
    """Starting state: probes pre-grouped by correlation, all patients in
    one row cluster, blocks at their means, noise sd at the data sd."""
    values = [np.asarray(z, dtype=np.float64) for z in values]
    if init_columns is None:
        init_columns = [initial_column_clusters(z, cut=linkage_cut) for z in values]
    if init_rows is None:
        init_rows = np.zeros(values[0].shape[0], dtype=np.intp)
    return build_state(values, init_rows, init_columns, hyper, shared_sigma=shared_sigma)


def _run_phase(state: SamplerState, hyper: Hyperparameters, rng, schedule: ChainSchedule,
               phase: str, n_sweeps: int, diag_rows: list, sweep_offset: int,
               accept_counter: np.ndarray, record):
    recorded = set(schedule.recorded_sweeps(n_sweeps))
    update_cols = phase == PHASE_JOINT
    update_rows = phase in (PHASE_JOINT, PHASE_ROWS)
    n_plat = state.n_platforms
    for s in range(n_sweeps):
        if update_cols:
            for t in range(n_plat):
                update_column_allocations(state, t, hyper, rng, n_aux=schedule.aux_columns)
        if update_rows:
            update_row_allocations(state, hyper, rng)
        update_latent_atoms(state, hyper, rng)
        update_sigma(state, hyper, rng)
        for t in range(n_plat):
            accept_counter[t] += update_discount(state, t, hyper, rng)
            accept_counter[n_plat + t] += 1
        row = {
            "sweep": sweep_offset + s,
            "phase": phase,
            "log_posterior": state.log_posterior(hyper),
            "n_row_clusters": state.n_row_clusters,
        }
        for t in range(n_plat):
            row[f"n_col_clusters_{t + 1}"] = state.n_col_clusters(t)
            row[f"discount_{t + 1}"] = float(state.discounts[t])
            row[f"sigma_{t + 1}"] = float(state.sigma[t])
        diag_rows.append(row)
        if s in recorded:
            record(state)
    return sweep_offset + n_sweeps


def _rebuild(state: SamplerState, hyper: Hyperparameters, row_alloc, col_alloc) -> SamplerState:
    new = build_state(
        [z for z in state.values], row_alloc, col_alloc, hyper,
        shared_sigma=state.shared_sigma, sigma=state.sigma,
    )
    new.discounts[:] = state.discounts
    return new


def run_stage1(values, hyper: Hyperparameters | None = None,
               schedule: ChainSchedule | None = None, *, seed=0,
               shared_sigma: bool = True, init_columns=None, init_rows=None,
               keep_state: bool = False, coclust_bytes: int = 2**30) -> Stage1Result:
    """Run the three-phase chain and return point estimates with posterior
    summaries of the latent blocks."""
    hyper = hyper or Hyperparameters()
    schedule = schedule or ChainSchedule()
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    values = [np.asarray(z, dtype=np.float64) for z in values]
    n_plat = len(values)
    state = init_state(values, hyper, shared_sigma=shared_sigma,
                       init_columns=init_columns, init_rows=init_rows)
    diag_rows: list[dict] = []
    accept = np.zeros(2 * n_plat)
    timings: dict[str, float] = {}
    offset = 0

    col_samples: list[list[np.ndarray]] = [[] for _ in range(n_plat)]

    def record_joint(st: SamplerState):
        for t in range(n_plat):
            col_samples[t].append(st.col_alloc[t].astype(np.int16, copy=True))

    tic = time.perf_counter()
    offset = _run_phase(state, hyper, rng, schedule, PHASE_JOINT,
                        schedule.joint_sweeps, diag_rows, offset, accept, record_joint)
    timings[PHASE_JOINT] = time.perf_counter() - tic

    col_coclust = []
    col_hat = []
    for t in range(n_plat):
        stacked = np.asarray(col_samples[t], dtype=np.intp)
        pi = pairwise_coclustering(stacked, max_bytes=coclust_bytes)
        est = least_squares_allocation(stacked, coclustering=pi, max_bytes=coclust_bytes)
        col_coclust.append(pi)
        col_hat.append(est.alloc)
    state = _rebuild(state, hyper, state.row_alloc, col_hat)

    row_samples: list[np.ndarray] = []

    def record_rows(st: SamplerState):
        row_samples.append(st.row_alloc.astype(np.int16, copy=True))

    tic = time.perf_counter()
    offset = _run_phase(state, hyper, rng, schedule, PHASE_ROWS,
                        schedule.row_sweeps, diag_rows, offset, accept, record_rows)
    timings[PHASE_ROWS] = time.perf_counter() - tic

    stacked_rows = np.asarray(row_samples, dtype=np.intp)
    row_pi = pairwise_coclustering(stacked_rows, max_bytes=coclust_bytes)
    row_hat = least_squares_allocation(stacked_rows, coclustering=row_pi,
                                       max_bytes=coclust_bytes).alloc
    state = _rebuild(state, hyper, row_hat, col_hat)

    phi_acc = [np.zeros_like(state.phi[t]) for t in range(n_plat)]
    sigma_acc = np.zeros(n_plat)
    value_count = 0
    last_atoms: list[list[np.ndarray]] = [[]]

    def record_values(st: SamplerState):
        nonlocal value_count
        for t in range(n_plat):
            phi_acc[t] += st.phi[t]
        sigma_acc[:] += st.sigma
        value_count += 1
        last_atoms[0] = [st.atom_id_matrix(t) for t in range(n_plat)]

    tic = time.perf_counter()
    offset = _run_phase(state, hyper, rng, schedule, PHASE_VALUES,
                        schedule.value_sweeps, diag_rows, offset, accept, record_values)
    timings[PHASE_VALUES] = time.perf_counter() - tic

    diagnostics = pd.DataFrame(diag_rows)
    acceptance = accept[:n_plat] / accept[n_plat:]
    return Stage1Result(
        column_alloc=col_hat,
        row_alloc=row_hat,
        phi_mean=[acc / value_count for acc in phi_acc],
        sigma_mean=sigma_acc / value_count,
        atom_ids=last_atoms[0],
        column_coclustering=col_coclust,
        row_coclustering=row_pi,
        diagnostics=diagnostics,
        discount_acceptance=acceptance,
        timings=timings,
        final_state=state if keep_state else None,
    )
