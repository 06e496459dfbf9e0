"""Scikit-learn style estimators wrapping the staged samplers.

``MultiOmicBicluster`` clusters probes per platform and patients across
platforms; ``SurvivalClusterSelector`` screens the fitted clusters
against censored survival outcomes.  Both follow the usual estimator
contract: keyword constructor arguments stored verbatim, ``fit``
returning self, fitted state in trailing-underscore attributes.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .data import ClinicalOutcomes, TransformedDataset
from .engine import ChainSchedule, run_stage1
from .model import Hyperparameters
from .selection import (
    SelectionConfig,
    SplineConfig,
    member_matrix,
    merge_clusters,
    run_stage2,
)
from .simulate import fit_r2

__all__ = ["MultiOmicBicluster", "SurvivalClusterSelector"]


def _as_values(X) -> list[np.ndarray]:
    if isinstance(X, TransformedDataset):
        return X.values
    if isinstance(X, (list, tuple)):
        return [np.asarray(m, dtype=np.float64) for m in X]
    return [np.asarray(X, dtype=np.float64)]


class MultiOmicBicluster(BaseEstimator):
    """Bidirectional clustering of one or more platform matrices.

    ``fit`` accepts a single (n, p) matrix, a list of per-platform
    matrices sharing their row order, or a ``TransformedDataset``.
    Fitted state: ``row_labels_`` (patient clusters), ``column_labels_``
    (one probe-cluster vector per platform), ``phi_`` (posterior mean
    block matrices), ``atom_ids_``, ``sigma_``, ``row_coclustering_``,
    ``column_coclustering_``, ``diagnostics_``, and ``result_`` holding
    the full staged-run output.
    """

    def __init__(self, *, mass_columns=1.0, mass_rows=1.0, mass_tables=1.0,
                 mass_atoms=1.0, base_mean=0.0, base_sd=1.0,
                 sigma_shape=0.01, sigma_scale=0.01, discount_point_mass=0.5,
                 joint_sweeps=2000, row_sweeps=1000, value_sweeps=1000,
                 burn_fraction=0.5, thin=2, aux_columns=3,
                 shared_sigma=True, random_state=0):
        self.mass_columns = mass_columns
        self.mass_rows = mass_rows
        self.mass_tables = mass_tables
        self.mass_atoms = mass_atoms
        self.base_mean = base_mean
        self.base_sd = base_sd
        self.sigma_shape = sigma_shape
        self.sigma_scale = sigma_scale
        self.discount_point_mass = discount_point_mass
        self.joint_sweeps = joint_sweeps
        self.row_sweeps = row_sweeps
        self.value_sweeps = value_sweeps
        self.burn_fraction = burn_fraction
        self.thin = thin
        self.aux_columns = aux_columns
        self.shared_sigma = shared_sigma
        self.random_state = random_state

    def _hyper(self) -> Hyperparameters:
        return Hyperparameters(
            mass_columns=self.mass_columns, mass_rows=self.mass_rows,
            mass_tables=self.mass_tables, mass_atoms=self.mass_atoms,
            base_mean=self.base_mean, base_sd=self.base_sd,
            sigma_shape=self.sigma_shape, sigma_scale=self.sigma_scale,
            discount_point_mass=self.discount_point_mass,
        )

    def _schedule(self) -> ChainSchedule:
        return ChainSchedule(
            joint_sweeps=self.joint_sweeps, row_sweeps=self.row_sweeps,
            value_sweeps=self.value_sweeps,
            burn_fraction=self.burn_fraction, thin=self.thin,
            aux_columns=self.aux_columns,
        )

    def fit(self, X, y=None):
        values = _as_values(X)
        result = run_stage1(values, self._hyper(), self._schedule(),
                            seed=self.random_state,
                            shared_sigma=self.shared_sigma)
        self.result_ = result
        self.row_labels_ = result.row_alloc
        self.column_labels_ = result.column_alloc
        self.phi_ = result.phi_mean
        self.atom_ids_ = result.atom_ids
        self.sigma_ = result.sigma_mean
        self.row_coclustering_ = result.row_coclustering
        self.column_coclustering_ = result.column_coclustering
        self.diagnostics_ = result.diagnostics
        self.n_row_clusters_ = result.n_row_clusters
        self.n_column_clusters_ = [int(c.max()) + 1
                                   for c in result.column_alloc]
        return self

    def fit_predict(self, X, y=None) -> np.ndarray:
        """Fit and return the patient cluster labels."""
        return self.fit(X).row_labels_

    def candidate_columns(self, X) -> list[np.ndarray]:
        """Group the data columns of ``X`` by merged fitted cluster, the
        candidate sets the survival selector screens."""
        if not hasattr(self, "result_"):
            raise ValueError("fit the estimator before extracting candidates")
        merged = merge_clusters(self.atom_ids_, self.column_labels_)
        self.merged_ = merged
        return member_matrix(merged, _as_values(X))

    def score(self, X, y=None) -> float:
        """Pooled fraction of variance captured by the fitted blocks."""
        if not hasattr(self, "result_"):
            raise ValueError("fit the estimator before scoring")
        return fit_r2(_as_values(X), self.row_labels_, self.column_labels_,
                      self.phi_).pooled


def _as_outcomes(y) -> ClinicalOutcomes:
    if isinstance(y, ClinicalOutcomes):
        return y
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("y must be ClinicalOutcomes or an (n, 2) array "
                         "of (time, event)")
    return ClinicalOutcomes(observed_time=arr[:, 0],
                            censor_indicator=arr[:, 1].astype(np.intp))


class SurvivalClusterSelector(BaseEstimator):
    """Role-based selection of cluster representatives against censored
    survival times, thresholded at a Bayesian FDR level.

    ``fit(X, y)`` takes the per-cluster candidate column matrices (as
    produced by ``MultiOmicBicluster.candidate_columns``) and outcomes
    given as ``ClinicalOutcomes`` or an (n, 2) array of (time, event).
    Fitted state: ``inclusion_``, ``selected_``, ``cutoff_``, and
    ``result_`` with the full traces.
    """

    def __init__(self, *, fdr_alpha=0.2, spline_order=1, spline_knots=1,
                 g=None, tau_shape=0.01, tau_rate=0.01, sweeps=4000,
                 burn_fraction=0.5, thin=2, random_state=0):
        self.fdr_alpha = fdr_alpha
        self.spline_order = spline_order
        self.spline_knots = spline_knots
        self.g = g
        self.tau_shape = tau_shape
        self.tau_rate = tau_rate
        self.sweeps = sweeps
        self.burn_fraction = burn_fraction
        self.thin = thin
        self.random_state = random_state

    def _config(self) -> SelectionConfig:
        return SelectionConfig(
            g=self.g, tau_shape=self.tau_shape, tau_rate=self.tau_rate,
            spline=SplineConfig(order=self.spline_order,
                                knots=self.spline_knots),
        )

    def fit(self, X, y):
        result = run_stage2(
            list(X), _as_outcomes(y), config=self._config(),
            fdr_alpha=self.fdr_alpha, sweeps=self.sweeps,
            burn_fraction=self.burn_fraction, thin=self.thin,
            seed=self.random_state,
        )
        self.result_ = result
        self.inclusion_ = result.inclusion
        self.selected_ = result.selected
        self.cutoff_ = result.cutoff
        self.n_clusters_ = result.n_clusters
        return self

    def get_support(self) -> np.ndarray:
        """Boolean mask over clusters, True where selected."""
        if not hasattr(self, "result_"):
            raise ValueError("fit the selector before asking for support")
        mask = np.zeros(self.n_clusters_, dtype=bool)
        mask[self.selected_] = True
        return mask
