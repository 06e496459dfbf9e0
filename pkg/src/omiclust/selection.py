"""Spike-and-slab discovery of outcome-linked probe clusters.

Platform-specific column clusters whose latent columns reference the same
shared atoms are merged into cross-platform predictor candidates.  Each
merged cluster elects one member probe as its representative, and the
representatives enter an additive Gaussian regression on log survival
times in one of three roles per cluster: excluded, linear, or nonlinear
through a truncated power spline basis.  Regression coefficients carry a
g prior, so the per-cluster role indicators are resampled with the
coefficients integrated out in closed form.  Censored outcomes are data
augmented from truncated normal conditionals, and a Bayesian false
discovery rate rule turns posterior inclusion probabilities into a
selected cluster set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.stats import truncnorm

from .data import ClinicalOutcomes

log = logging.getLogger(__name__)

__all__ = [
    "MergedClusters",
    "IndicatorTriplet",
    "SplineConfig",
    "SelectionConfig",
    "SelectionData",
    "SelectionState",
    "Stage2Result",
    "DesignSizeError",
    "merge_clusters",
    "member_matrix",
    "build_design",
    "design_columns",
    "elect_representative",
    "augment_censored",
    "selection_sweep",
    "inclusion_probs",
    "fdr_select",
    "run_stage2",
]


class DesignSizeError(ValueError):
    """Raised when a design would have at least as many columns as rows."""


@dataclass(frozen=True)
class MergedClusters:
    """Cross-platform predictor candidates formed by atom-signature merging."""

    members: list[list[tuple[int, int]]]
    signatures: list[tuple[int, ...]]

    def __post_init__(self):
        if len(self.members) != len(self.signatures):
            raise ValueError("one signature per merged cluster required")
        if any(len(m) == 0 for m in self.members):
            raise ValueError("merged clusters may not be empty")

    @property
    def n_clusters(self) -> int:
        return len(self.members)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(m) for m in self.members], dtype=np.intp)


def merge_clusters(atom_ids, col_alloc) -> MergedClusters:
    """Merge column clusters that reference identical atom sequences.

    ``atom_ids[t]`` holds, per platform, the (H, K_t) matrix of shared-atom
    identifiers behind the latent blocks.  Two column clusters, within or
    across platforms, merge exactly when their atom-id columns are equal;
    merged clusters are ordered by first appearance.
    """
    if len(atom_ids) != len(col_alloc):
        raise ValueError("atom_ids and col_alloc must cover the same platforms")
    members: list[list[tuple[int, int]]] = []
    signatures: list[tuple[int, ...]] = []
    index: dict[tuple[int, ...], int] = {}
    h = np.asarray(atom_ids[0]).shape[0]
    for t, ids in enumerate(atom_ids):
        ids = np.asarray(ids)
        alloc = np.asarray(col_alloc[t], dtype=np.intp)
        k_t = int(alloc.max()) + 1 if alloc.size else 0
        if ids.shape != (h, k_t):
            raise ValueError(
                f"platform {t + 1} atom ids have shape {ids.shape}, "
                f"expected {(h, k_t)}"
            )
        for k in range(k_t):
            sig = tuple(int(a) for a in ids[:, k])
            g = index.get(sig)
            if g is None:
                g = len(members)
                index[sig] = g
                members.append([])
                signatures.append(sig)
            members[g].extend((t, int(j)) for j in np.flatnonzero(alloc == k))
    return MergedClusters(members=members, signatures=signatures)


def member_matrix(merged: MergedClusters, values) -> list[np.ndarray]:
    """Per merged cluster, the (n, N_k) matrix of its member data columns."""
    return [
        np.column_stack([np.asarray(values[t])[:, j] for t, j in mem])
        for mem in merged.members
    ]


@dataclass(frozen=True)
class IndicatorTriplet:
    """One-hot role indicator of a merged cluster: excluded, linear, or
    nonlinear."""

    gamma0: int
    gamma1: int
    gamma2: int

    def __post_init__(self):
        trio = (self.gamma0, self.gamma1, self.gamma2)
        if any(v not in (0, 1) for v in trio) or sum(trio) != 1:
            raise ValueError("exactly one indicator must equal 1")

    @property
    def code(self) -> int:
        return int(np.argmax((self.gamma0, self.gamma1, self.gamma2)))

    @classmethod
    def from_code(cls, code: int) -> "IndicatorTriplet":
        if code not in (0, 1, 2):
            raise ValueError("code must be 0, 1, or 2")
        return cls(*(int(code == c) for c in range(3)))


@dataclass(frozen=True)
class SplineConfig:
    """Truncated power basis settings for the nonlinear regression role."""

    order: int = 1
    knots: int = 1

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("spline order must be at least 1")
        if self.knots < 0:
            raise ValueError("knot count must be non-negative")

    @property
    def block_size(self) -> int:
        return self.order + self.knots


@dataclass(frozen=True)
class SelectionConfig:
    """Priors and numerics for the selection sampler.  ``g`` defaults to
    the sample size (unit-information prior) when left as None."""

    g: float | None = None
    tau_shape: float = 0.01
    tau_rate: float = 0.01
    spline: SplineConfig = field(default_factory=SplineConfig)
    ridge: float = 1e-8

    def __post_init__(self):
        if self.g is not None and not self.g > 0:
            raise ValueError("g must be positive")
        if not (self.tau_shape > 0 and self.tau_rate > 0):
            raise ValueError("tau prior parameters must be positive")
        if not self.ridge >= 0:
            raise ValueError("ridge must be non-negative")


@dataclass
class SelectionData:
    """Fixed inputs of the selection sampler: candidate columns per merged
    cluster plus the censoring layout of the outcomes."""

    member_columns: list[np.ndarray]
    log_w: np.ndarray
    events: np.ndarray

    def __post_init__(self):
        self.member_columns = [np.ascontiguousarray(m, dtype=np.float64)
                               for m in self.member_columns]
        self.log_w = np.asarray(self.log_w, dtype=np.float64)
        self.events = np.asarray(self.events, dtype=np.intp)
        n = self.log_w.size
        if self.events.shape != (n,):
            raise ValueError("events must match log_w in length")
        if not np.all(np.isin(self.events, (0, 1))):
            raise ValueError("events must be 0 or 1")
        if not self.member_columns:
            raise ValueError("need at least one merged cluster")
        for k, m in enumerate(self.member_columns):
            if m.ndim != 2 or m.shape[0] != n or m.shape[1] < 1:
                raise ValueError(f"cluster {k + 1} columns must be (n, N_k)")

    @property
    def n_patients(self) -> int:
        return self.log_w.size

    @property
    def n_clusters(self) -> int:
        return len(self.member_columns)


@dataclass
class SelectionState:
    """Current sampler position: cluster roles, role proportions,
    representatives, coefficients, noise variance, augmented outcomes."""

    gamma: np.ndarray
    omega: np.ndarray
    representatives: np.ndarray
    beta: np.ndarray
    tau2: float
    y: np.ndarray
    spline: SplineConfig = field(default_factory=SplineConfig)

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.int8)
        self.omega = np.asarray(self.omega, dtype=np.float64)
        self.representatives = np.asarray(self.representatives, dtype=np.intp)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if not np.all(np.isin(self.gamma, (0, 1, 2))):
            raise ValueError("gamma codes must be 0, 1, or 2")
        if self.omega.shape != (3,) or abs(self.omega.sum() - 1.0) > 1e-8:
            raise ValueError("omega must be a probability 3-vector")
        if self.representatives.shape != self.gamma.shape:
            raise ValueError("one representative per cluster required")
        if not self.tau2 > 0:
            raise ValueError("tau2 must be positive")

    def triplet(self, k: int) -> IndicatorTriplet:
        return IndicatorTriplet.from_code(int(self.gamma[k]))


def _rep_matrix(state: SelectionState, data: SelectionData) -> np.ndarray:
    cols = [data.member_columns[k][:, state.representatives[k]]
            for k in range(data.n_clusters)]
    return np.column_stack(cols)


def design_columns(gamma, spline: SplineConfig) -> int:
    """Column count of the design implied by the role codes: intercept,
    one column per linear cluster, order+knots per nonlinear cluster."""
    gamma = np.asarray(gamma)
    k1 = int(np.sum(gamma == 1))
    k2 = int(np.sum(gamma == 2))
    return 1 + k1 + k2 * spline.block_size


def _spline_block(x: np.ndarray, spline: SplineConfig) -> np.ndarray:
    cols = [x ** d for d in range(1, spline.order + 1)]
    if spline.knots > 0:
        probs = (np.arange(spline.knots) + 1) / (spline.knots + 1)
        for knot in np.quantile(x, probs):
            cols.append(np.maximum(x - knot, 0.0) ** spline.order)
    return np.column_stack(cols)


def build_design(gamma, mu: np.ndarray, spline: SplineConfig) -> np.ndarray:
    """Design matrix for the current roles: intercept, then per cluster in
    index order its raw column (linear role) or truncated power block with
    knots at empirical quantiles (nonlinear role).

    Raises DesignSizeError when the column count would reach the number
    of observations.
    """
    gamma = np.asarray(gamma)
    mu = np.asarray(mu, dtype=np.float64)
    n = mu.shape[0]
    q = design_columns(gamma, spline)
    if q >= n:
        raise DesignSizeError(f"design would have {q} columns for {n} rows")
    cols = [np.ones(n)]
    for k in range(gamma.size):
        if gamma[k] == 1:
            cols.append(mu[:, k])
        elif gamma[k] == 2:
            cols.append(_spline_block(mu[:, k], spline))
    return np.column_stack(cols)


def _gram_solve(utu: np.ndarray, rhs: np.ndarray, ridge: float):
    """Solve utu x = rhs, falling back to a logged ridge jitter when the
    Gram matrix is not positive definite.  Returns (solution, factor)."""
    try:
        factor = cho_factor(utu, lower=True)
    except LinAlgError:
        log.warning("singular design Gram matrix; adding ridge %g", ridge)
        factor = cho_factor(utu + ridge * np.eye(utu.shape[0]), lower=True)
    return cho_solve(factor, rhs), factor


def _marginal_loglik(y: np.ndarray, u: np.ndarray, g: float, tau2: float,
                     ridge: float) -> float:
    """Log density of y with coefficients integrated out under the g prior:
    y ~ N(0, tau2 (I + g P_U)) for P_U the projector onto col(U)."""
    n, q = u.shape
    uty = u.T @ y
    coef, _ = _gram_solve(u.T @ u, uty, ridge)
    quad = y @ y - (g / (1.0 + g)) * (uty @ coef)
    return (-0.5 * n * np.log(2.0 * np.pi * tau2)
            - 0.5 * q * np.log1p(g)
            - 0.5 * quad / tau2)


def _categorical(logw: np.ndarray, rng) -> int:
    logw = logw - logw.max()
    w = np.exp(logw)
    return int(rng.choice(logw.size, p=w / w.sum()))


def _gamma_step(state: SelectionState, data: SelectionData,
                config: SelectionConfig, rng, g: float) -> None:
    """Resample every role code from its conditional with the regression
    coefficients integrated out; role choices that would overflow the
    design are given zero prior weight."""
    mu = _rep_matrix(state, data)
    n = data.n_patients
    log_omega = np.log(np.maximum(state.omega, 1e-300))
    for k in range(data.n_clusters):
        logw = np.full(3, -np.inf)
        saved = state.gamma[k]
        for c in (0, 1, 2):
            state.gamma[k] = c
            if design_columns(state.gamma, state.spline) >= n:
                continue
            u = build_design(state.gamma, mu, state.spline)
            logw[c] = log_omega[c] + _marginal_loglik(state.y, u, g,
                                                      state.tau2, config.ridge)
        if np.all(np.isneginf(logw)):
            state.gamma[k] = saved
            continue
        state.gamma[k] = _categorical(logw, rng)


def _beta_step(state: SelectionState, data: SelectionData,
               config: SelectionConfig, rng, g: float) -> np.ndarray:
    """Draw coefficients from their Gaussian conditional; returns the
    design so later steps can reuse it."""
    mu = _rep_matrix(state, data)
    u = build_design(state.gamma, mu, state.spline)
    utu = u.T @ u
    mean, factor = _gram_solve(utu, u.T @ state.y, config.ridge)
    shrink = g / (1.0 + g)
    mean = shrink * mean
    cov = shrink * state.tau2 * cho_solve(factor, np.eye(u.shape[1]))
    cov = 0.5 * (cov + cov.T)
    state.beta = rng.multivariate_normal(mean, cov, method="cholesky")
    return u


def _tau2_step(state: SelectionState, data: SelectionData,
               config: SelectionConfig, rng, g: float, u: np.ndarray) -> None:
    resid = state.y - u @ state.beta
    quad_prior = state.beta @ (u.T @ u) @ state.beta
    shape = config.tau_shape + 0.5 * (data.n_patients + u.shape[1])
    rate = config.tau_rate + 0.5 * (resid @ resid) + 0.5 * quad_prior / g
    state.tau2 = float(rate / rng.gamma(shape))


def elect_representative(k: int, state: SelectionState, data: SelectionData,
                         config: SelectionConfig, rng,
                         g: float | None = None) -> int:
    """Resample cluster k's representative from its full conditional.

    For an excluded cluster the outcome does not involve the
    representative, so the draw is uniform over members.  Otherwise each
    candidate is weighted by the Gaussian outcome likelihood times the
    g-prior density of the current coefficients under the candidate's
    design.
    """
    cols = data.member_columns[k]
    n_k = cols.shape[1]
    if n_k == 1:
        return 0
    if state.gamma[k] == 0:
        return int(rng.integers(n_k))
    g = float(data.n_patients) if g is None else float(g)
    mu = _rep_matrix(state, data)
    logw = np.empty(n_k)
    for m in range(n_k):
        mu[:, k] = cols[:, m]
        u = build_design(state.gamma, mu, state.spline)
        utu = u.T @ u
        sign, logdet = np.linalg.slogdet(utu)
        if sign <= 0:
            utu = utu + config.ridge * np.eye(utu.shape[0])
            sign, logdet = np.linalg.slogdet(utu)
        resid = state.y - u @ state.beta
        quad_prior = state.beta @ utu @ state.beta
        logw[m] = (0.5 * logdet
                   - 0.5 * (resid @ resid) / state.tau2
                   - 0.5 * quad_prior / (g * state.tau2))
    return _categorical(logw, rng)


def augment_censored(log_w, events, eta, tau2: float, rng) -> np.ndarray:
    """Refresh the latent log failure times: observed deaths keep their
    recorded value, censored patients draw from N(eta, tau2) truncated to
    lie above their censoring time."""
    log_w = np.asarray(log_w, dtype=np.float64)
    events = np.asarray(events)
    eta = np.asarray(eta, dtype=np.float64)
    y = log_w.copy()
    cens = np.flatnonzero(events == 0)
    if cens.size:
        sd = np.sqrt(tau2)
        a = (log_w[cens] - eta[cens]) / sd
        y[cens] = truncnorm.rvs(a, np.inf, loc=eta[cens], scale=sd,
                                random_state=rng)
    return y


def selection_sweep(state: SelectionState, data: SelectionData,
                    config: SelectionConfig, rng) -> SelectionState:
    """One full update: roles (coefficients integrated out), role
    proportions, coefficients, noise variance, representatives, and the
    censored-outcome augmentation."""
    g = float(data.n_patients) if config.g is None else config.g
    _gamma_step(state, data, config, rng, g)
    counts = np.bincount(state.gamma, minlength=3)
    state.omega = rng.dirichlet(1.0 + counts)
    u = _beta_step(state, data, config, rng, g)
    _tau2_step(state, data, config, rng, g, u)
    for k in range(data.n_clusters):
        state.representatives[k] = elect_representative(k, state, data,
                                                        config, rng, g)
    eta = build_design(state.gamma, _rep_matrix(state, data),
                       state.spline) @ state.beta
    state.y = augment_censored(data.log_w, data.events, eta, state.tau2, rng)
    return state


def inclusion_probs(gamma_trace) -> np.ndarray:
    """Per-cluster fraction of recorded sweeps in which the cluster held
    either regression role."""
    trace = np.asarray(gamma_trace)
    if trace.ndim != 2 or trace.shape[0] < 1:
        raise ValueError("gamma trace must be (samples, clusters) with M >= 1")
    return np.mean(trace > 0, axis=0)


def fdr_select(b_hat, alpha: float) -> tuple[np.ndarray, float]:
    """Bayesian FDR selection at nominal level alpha.

    Sorts inclusion probabilities descending, finds the longest prefix
    whose summed complements stay within alpha, and selects every cluster
    at or above the prefix's smallest probability.  Returns ascending
    cluster indices and the cutoff; no feasible prefix yields an empty
    selection with a NaN cutoff.
    """
    b_hat = np.asarray(b_hat, dtype=np.float64)
    if b_hat.ndim != 1 or b_hat.size == 0:
        raise ValueError("b_hat must be a nonempty vector")
    if np.any((b_hat < 0) | (b_hat > 1)):
        raise ValueError("inclusion probabilities must lie in [0, 1]")
    order = np.argsort(-b_hat, kind="stable")
    csum = np.cumsum(1.0 - b_hat[order])
    feasible = np.flatnonzero(csum <= alpha)
    if feasible.size == 0:
        return np.empty(0, dtype=np.intp), float("nan")
    psi = float(b_hat[order[feasible[-1]]])
    return np.flatnonzero(b_hat >= psi).astype(np.intp), psi


@dataclass(frozen=True)
class Stage2Result:
    """Posterior summaries of the selection sampler."""

    inclusion: np.ndarray
    selected: np.ndarray
    cutoff: float
    fdr_alpha: float
    gamma_trace: np.ndarray
    rep_trace: np.ndarray
    rep_frequencies: list[np.ndarray]
    omega_trace: np.ndarray
    tau2_trace: np.ndarray
    merged: MergedClusters | None
    config: SelectionConfig

    @property
    def n_samples(self) -> int:
        return self.gamma_trace.shape[0]

    @property
    def n_clusters(self) -> int:
        return self.gamma_trace.shape[1]


def run_stage2(member_columns, outcomes: ClinicalOutcomes, *,
               config: SelectionConfig | None = None, fdr_alpha: float = 0.2,
               sweeps: int = 4000, burn_fraction: float = 0.5, thin: int = 2,
               seed=0, merged: MergedClusters | None = None) -> Stage2Result:
    """Run the selection sampler and summarize inclusion evidence.

    Starts from the all-excluded model with uniformly drawn
    representatives, records the chain after burn-in with thinning, and
    applies FDR selection to the recorded role indicators.
    """
    if not 0 < fdr_alpha < 1:
        raise ValueError("fdr_alpha must lie in (0, 1)")
    if sweeps < 1 or not 0 <= burn_fraction < 1 or thin < 1:
        raise ValueError("invalid chain settings")
    config = config or SelectionConfig()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    data = SelectionData(member_columns=member_columns,
                         log_w=np.log(outcomes.observed_time),
                         events=outcomes.censor_indicator)
    n = data.n_patients
    k = data.n_clusters
    if design_columns(np.zeros(k), config.spline) >= n:
        raise DesignSizeError("too few observations for any design")
    tau2 = float(np.var(data.log_w))
    state = SelectionState(
        gamma=np.zeros(k, dtype=np.int8),
        omega=np.full(3, 1.0 / 3.0),
        representatives=np.array([rng.integers(m.shape[1])
                                  for m in data.member_columns], dtype=np.intp),
        beta=np.zeros(1),
        tau2=tau2 if tau2 > 0 else 1.0,
        y=outcomes.log_time.copy(),
        spline=config.spline,
    )
    burn = int(sweeps * burn_fraction)
    recorded = range(burn, sweeps, thin)
    m_rec = len(recorded)
    gamma_trace = np.empty((m_rec, k), dtype=np.int8)
    rep_trace = np.empty((m_rec, k), dtype=np.int16)
    omega_trace = np.empty((m_rec, 3))
    tau2_trace = np.empty(m_rec)
    keep = {s: i for i, s in enumerate(recorded)}
    for sweep in range(sweeps):
        selection_sweep(state, data, config, rng)
        idx = keep.get(sweep)
        if idx is not None:
            gamma_trace[idx] = state.gamma
            rep_trace[idx] = state.representatives
            omega_trace[idx] = state.omega
            tau2_trace[idx] = state.tau2
    b_hat = inclusion_probs(gamma_trace)
    selected, psi = fdr_select(b_hat, fdr_alpha)
    rep_freq = [
        np.bincount(rep_trace[:, j], minlength=data.member_columns[j].shape[1])
        / m_rec
        for j in range(k)
    ]
    return Stage2Result(
        inclusion=b_hat, selected=selected, cutoff=psi, fdr_alpha=fdr_alpha,
        gamma_trace=gamma_trace, rep_trace=rep_trace,
        rep_frequencies=rep_freq, omega_trace=omega_trace,
        tau2_trace=tau2_trace, merged=merged, config=config,
    )
