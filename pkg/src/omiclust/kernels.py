"""Gibbs and Metropolis kernels for the bidirectional clustering model.

The sampler state keeps sufficient statistics alongside the allocations so
that one full sweep touches each data cell a constant number of times:

* ``row_sums[t]``  (H x p_t): per-probe sums of Z within each row cluster,
* ``col_sums[t]``  (n x K_t): per-patient sums of Z within each column cluster.

Non-conjugate column openings use auxiliary-parameter proposals: fresh
latent columns are drawn from the predictive law of the atom hierarchy
through a provisional DrawContext, and a dying singleton's column is
retained as the first auxiliary candidate so the move stays reversible.
Row openings instead marginalise the unseen latent row over that
predictive law block by block: a fresh row spans every column cluster of
every platform, and prior draws in place of the marginal essentially
never score competitively at that length.  Emptied clusters are removed
immediately; labels are put back into first-appearance order at the end
of every sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from omiclust.atoms import AtomStore, FixedMeasureLatent
from omiclust.model import ClusterState, Hyperparameters, LatentMatrices
from omiclust.partitions import partition_log_prob

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class SamplerState:
    """Mutable fit state: data, allocations, latent matrices, caches."""

    values: list[np.ndarray]
    row_alloc: np.ndarray
    col_alloc: list[np.ndarray]
    phi: list[np.ndarray]
    table_ids: list[np.ndarray]
    store: AtomStore | FixedMeasureLatent
    sigma: np.ndarray
    discounts: np.ndarray
    shared_sigma: bool = True
    row_sums: list[np.ndarray] = field(default_factory=list)
    col_sums: list[np.ndarray] = field(default_factory=list)
    row_sizes: np.ndarray = None  # type: ignore[assignment]
    col_sizes: list[np.ndarray] = field(default_factory=list)
    sumsq: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.values = [np.ascontiguousarray(z, dtype=np.float64) for z in self.values]
        self.row_alloc = np.asarray(self.row_alloc, dtype=np.intp)
        self.col_alloc = [np.asarray(c, dtype=np.intp) for c in self.col_alloc]
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        self.discounts = np.asarray(self.discounts, dtype=np.float64)
        if not self.row_sums:
            self.refresh_caches()
        if not self.sumsq:
            self.sumsq = [float(np.sum(z * z)) for z in self.values]

    # -- basic views -------------------------------------------------------

    @property
    def n_platforms(self) -> int:
        return len(self.values)

    @property
    def n_patients(self) -> int:
        return self.values[0].shape[0]

    @property
    def n_row_clusters(self) -> int:
        return self.phi[0].shape[0]

    def n_col_clusters(self, t: int) -> int:
        return self.phi[t].shape[1]

    def cluster_state(self) -> ClusterState:
        return ClusterState(
            column_alloc=[c.copy() for c in self.col_alloc],
            row_alloc=self.row_alloc.copy(),
        )

    def latent_matrices(self) -> LatentMatrices:
        sd = self.sigma[:1].copy() if self.shared_sigma else self.sigma.copy()
        return LatentMatrices(
            phi=[p.copy() for p in self.phi],
            atom_ids=[self.atom_id_matrix(t) for t in range(self.n_platforms)],
            noise_sd=sd,
        )

    def atom_id_matrix(self, t: int) -> np.ndarray:
        a = self.table_ids[t]
        if isinstance(self.store, FixedMeasureLatent):
            return np.zeros_like(a)
        out = np.empty_like(a)
        flat_out = out.ravel()
        for i, tid in enumerate(a.ravel()):
            flat_out[i] = self.store.dish_of(t, int(tid))
        return out

    # -- caches ------------------------------------------------------------

    def refresh_caches(self):
        h = int(self.row_alloc.max()) + 1
        self.row_sizes = np.bincount(self.row_alloc, minlength=h).astype(np.float64)
        self.row_sums = []
        self.col_sums = []
        self.col_sizes = []
        for t, z in enumerate(self.values):
            c = self.col_alloc[t]
            k = int(c.max()) + 1
            r_sum = np.zeros((h, z.shape[1]))
            np.add.at(r_sum, self.row_alloc, z)
            c_sum = np.zeros((z.shape[0], k))
            np.add.at(c_sum.T, c, z.T)
            self.row_sums.append(r_sum)
            self.col_sums.append(c_sum)
            self.col_sizes.append(np.bincount(c, minlength=k).astype(np.float64))

    def check_consistency(self, tol: float = 1e-8):
        """Debug guard: cached statistics must match a fresh recomputation
        and the store must agree with the assignment matrices."""
        h = int(self.row_alloc.max()) + 1
        assert h == self.n_row_clusters
        np.testing.assert_allclose(
            self.row_sizes, np.bincount(self.row_alloc, minlength=h).astype(float), atol=tol
        )
        for t, z in enumerate(self.values):
            c = self.col_alloc[t]
            k = int(c.max()) + 1
            assert k == self.n_col_clusters(t)
            r_sum = np.zeros((h, z.shape[1]))
            np.add.at(r_sum, self.row_alloc, z)
            np.testing.assert_allclose(self.row_sums[t], r_sum, atol=tol)
            c_sum = np.zeros((z.shape[0], k))
            np.add.at(c_sum.T, c, z.T)
            np.testing.assert_allclose(self.col_sums[t], c_sum, atol=tol)
            np.testing.assert_allclose(self.col_sizes[t], np.bincount(c, minlength=k).astype(float), atol=tol)
        if isinstance(self.store, AtomStore):
            self.store.check(self.table_ids)
            for t in range(self.n_platforms):
                a = self.table_ids[t]
                vals = np.array([self.store.value_of(t, int(tid)) for tid in a.ravel()])
                assert np.array_equal(vals, self.phi[t].ravel()), f"platform {t}: phi out of sync"

    # -- posterior density -------------------------------------------------

    def block_sums(self, t: int) -> np.ndarray:
        b = np.zeros((self.n_row_clusters, self.n_col_clusters(t)))
        np.add.at(b.T, self.col_alloc[t], self.row_sums[t].T)
        return b

    def block_counts(self, t: int) -> np.ndarray:
        return np.outer(self.row_sizes, self.col_sizes[t])

    def data_log_likelihood(self) -> float:
        total = 0.0
        for t in range(self.n_platforms):
            b = self.block_sums(t)
            cnt = self.block_counts(t)
            phi = self.phi[t]
            s2 = self.sigma[t] ** 2
            sse = self.sumsq[t] - 2.0 * float(np.sum(phi * b)) + float(np.sum(cnt * phi * phi))
            n_cells = self.values[t].size
            total += -0.5 * n_cells * (_LOG_2PI + np.log(s2)) - 0.5 * sse / s2
        return float(total)

    def log_posterior(self, hyper: Hyperparameters) -> float:
        """Unnormalised log posterior of the current state (allocations,
        seating, atom values, noise), recomputed from scratch."""
        total = self.data_log_likelihood()
        total += partition_log_prob(self.row_alloc, 0.0, hyper.mass_rows)
        for t in range(self.n_platforms):
            total += partition_log_prob(self.col_alloc[t], float(self.discounts[t]), hyper.mass_columns)
        if isinstance(self.store, AtomStore):
            total += self.store.log_structure_prior()
        a0, b0 = hyper.sigma_shape, hyper.sigma_scale
        sigmas = self.sigma[:1] if self.shared_sigma else self.sigma
        for s in sigmas:
            s2 = float(s) ** 2
            total += a0 * np.log(b0) - gammaln(a0) - (a0 + 1.0) * np.log(s2) - b0 / s2
        return float(total)


def build_state(values, row_alloc, col_alloc, hyper: Hyperparameters, *,
                shared_sigma: bool = True, sigma=None, measures=None) -> SamplerState:
    """Assemble a sampler state from given allocations.

    Latent blocks start at their block means; each cell gets its own table
    while cells with identical block means share one global atom.  When
    ``measures``
    is given the latent model is the fixed-measure stand-in instead and
    blocks start at the measure atom nearest their block mean.  Noise sd
    defaults to the overall data sd, deliberately large so early sweeps
    can explore allocation splits.
    """
    values = [np.ascontiguousarray(z, dtype=np.float64) for z in values]
    row_alloc = np.asarray(row_alloc, dtype=np.intp)
    col_alloc = [np.asarray(c, dtype=np.intp) for c in col_alloc]
    n_plat = len(values)
    h = int(row_alloc.max()) + 1
    row_sizes = np.bincount(row_alloc, minlength=h).astype(float)
    if sigma is None:
        if shared_sigma:
            pooled = np.sqrt(np.mean([np.var(z) for z in values]))
            sigma = np.full(n_plat, max(pooled, 1e-3))
        else:
            sigma = np.array([max(float(np.std(z)), 1e-3) for z in values])
    else:
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (n_plat,)).copy()

    phi = []
    table_ids = []
    if measures is not None:
        store: AtomStore | FixedMeasureLatent = FixedMeasureLatent(measures)
    else:
        store = AtomStore(n_plat, hyper.mass_tables, hyper.mass_atoms,
                          hyper.base_mean, hyper.base_sd)
    dish_by_value: dict[float, int] = {}
    for t, z in enumerate(values):
        c = col_alloc[t]
        k = int(c.max()) + 1
        col_sizes = np.bincount(c, minlength=k).astype(float)
        r_sum = np.zeros((h, z.shape[1]))
        np.add.at(r_sum, row_alloc, z)
        b = np.zeros((h, k))
        np.add.at(b.T, c, r_sum.T)
        means = b / np.outer(row_sizes, col_sizes)
        if measures is not None:
            atoms = store.measures[t].atoms
            idx = np.abs(means[..., None] - atoms).argmin(axis=-1)
            phi.append(atoms[idx])
            table_ids.append(np.zeros((h, k), dtype=np.int64))
        else:
            a = np.empty((h, k), dtype=np.int64)
            for hh in range(h):
                for kk in range(k):
                    val = float(means[hh, kk])
                    a[hh, kk] = store.seed_cell(t, dish_by_value.get(val), val)
                    dish_by_value[val] = store.dish_of(t, a[hh, kk])
            phi.append(means.copy())
            table_ids.append(a)
    return SamplerState(
        values=values, row_alloc=row_alloc, col_alloc=col_alloc,
        phi=phi, table_ids=table_ids, store=store,
        sigma=sigma, discounts=np.zeros(n_plat), shared_sigma=shared_sigma,
    )


def _categorical(logits: np.ndarray, rng) -> int:
    p = np.exp(logits - logits.max())
    cum = np.cumsum(p)
    return int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))


def _first_appearance_order(alloc: np.ndarray, k: int) -> np.ndarray:
    order = np.empty(k, dtype=np.intp)
    pos = 0
    seen = np.zeros(k, dtype=bool)
    for a in alloc:
        if not seen[a]:
            seen[a] = True
            order[pos] = a
            pos += 1
        if pos == k:
            break
    return order


def _recanonicalize_columns(state: SamplerState, t: int):
    c = state.col_alloc[t]
    k = state.n_col_clusters(t)
    order = _first_appearance_order(c, k)
    if np.array_equal(order, np.arange(k)):
        return
    inv = np.empty(k, dtype=np.intp)
    inv[order] = np.arange(k)
    state.col_alloc[t] = inv[c]
    state.phi[t] = state.phi[t][:, order].copy()
    state.table_ids[t] = state.table_ids[t][:, order].copy()
    state.col_sums[t] = state.col_sums[t][:, order].copy()
    state.col_sizes[t] = state.col_sizes[t][order].copy()


def _recanonicalize_rows(state: SamplerState):
    r = state.row_alloc
    h = state.n_row_clusters
    order = _first_appearance_order(r, h)
    if np.array_equal(order, np.arange(h)):
        return
    inv = np.empty(h, dtype=np.intp)
    inv[order] = np.arange(h)
    state.row_alloc = inv[r]
    state.row_sizes = state.row_sizes[order].copy()
    for t in range(state.n_platforms):
        state.phi[t] = state.phi[t][order, :].copy()
        state.table_ids[t] = state.table_ids[t][order, :].copy()
        state.row_sums[t] = state.row_sums[t][order, :].copy()


def update_column_allocations(state: SamplerState, t: int, hyper: Hyperparameters, rng,
                              n_aux: int = 3) -> None:
    """One Gibbs sweep over platform t's probes.

    Occupied clusters are weighted by (size - discount) times the Gaussian
    likelihood of the probe against the cluster's latent column; n_aux
    auxiliary candidates split the opening mass (mass + K * discount), with
    fresh latent columns drawn from the atom hierarchy's predictive law.
    """
    if n_aux < 1:
        raise ValueError("n_aux must be >= 1")
    z = state.values[t]
    n, p = z.shape
    r_sum = state.row_sums[t]
    c = state.col_alloc[t]
    sizes = state.col_sizes[t]
    c_sum = state.col_sums[t]
    d = float(state.discounts[t])
    mass = hyper.mass_columns
    s2 = float(state.sigma[t]) ** 2
    h = state.n_row_clusters
    row_sizes = state.row_sizes
    phi = state.phi[t]
    # Per-sweep score tables; phi only changes via births and deaths.
    w = phi.T @ r_sum                       # (K, p)
    colnorm = (phi * phi).T @ row_sizes     # (K,)
    ctx = state.store.new_context()

    for j in range(p):
        k_old = int(c[j])
        sizes[k_old] -= 1.0
        singleton = sizes[k_old] == 0.0
        k_total = sizes.size
        k_minus = k_total - 1 if singleton else k_total
        open_mass = mass + k_minus * d

        lik = (w[:, j] - 0.5 * colnorm) / s2
        logits = np.log(np.where(sizes > 0, sizes - d, 1.0)) + lik
        if singleton:
            logits[k_old] = -np.inf

        n_fresh = n_aux - 1 if singleton else n_aux
        if n_fresh > 0:
            ctx.reset()
            fresh_vals = np.empty((n_fresh, h))
            fresh_refs = []
            for a in range(n_fresh):
                vals, refs = state.store.draw_cells(t, h, ctx, rng)
                fresh_vals[a] = vals
                fresh_refs.append(refs)
            fresh_lik = (fresh_vals @ r_sum[:, j] - 0.5 * (fresh_vals * fresh_vals) @ row_sizes) / s2
        else:
            fresh_lik = np.zeros(0)
        log_aux_mass = np.log(open_mass / n_aux)
        aux_logits = np.empty(n_aux)
        if singleton:
            aux_logits[0] = log_aux_mass + lik[k_old]
            aux_logits[1:] = log_aux_mass + fresh_lik
        else:
            aux_logits[:] = log_aux_mass + fresh_lik

        choice = _categorical(np.concatenate([logits, aux_logits]), rng)

        if choice < k_total:
            k_new = choice
            if singleton:
                _drop_column(state, t, k_old)
                if k_new > k_old:
                    k_new -= 1
                w = np.delete(w, k_old, axis=0)
                colnorm = np.delete(colnorm, k_old)
                sizes = state.col_sizes[t]
                c_sum = state.col_sums[t]
                phi = state.phi[t]
            c[j] = k_new
            if not singleton and k_new == k_old:
                sizes[k_old] += 1.0
            else:
                if not singleton:
                    c_sum[:, k_old] -= z[:, j]
                sizes[k_new] += 1.0
                c_sum[:, k_new] += z[:, j]
        else:
            aux_idx = choice - k_total
            if singleton and aux_idx == 0:
                sizes[k_old] += 1.0  # retained its own column
                continue
            fresh_idx = aux_idx - 1 if singleton else aux_idx
            vals = fresh_vals[fresh_idx]
            tids = state.store.commit(ctx, [(t, ridx) for ridx in fresh_refs[fresh_idx]])
            if singleton:
                _drop_column(state, t, k_old)
                w = np.delete(w, k_old, axis=0)
                colnorm = np.delete(colnorm, k_old)
                sizes = state.col_sizes[t]
                c_sum = state.col_sums[t]
                phi = state.phi[t]
            else:
                c_sum[:, k_old] -= z[:, j]
            k_new = sizes.size
            state.phi[t] = phi = np.hstack([phi, vals[:, None]])
            state.table_ids[t] = np.hstack([state.table_ids[t], np.asarray(tids, dtype=np.int64)[:, None]])
            state.col_sizes[t] = sizes = np.append(sizes, 1.0)
            state.col_sums[t] = c_sum = np.hstack([c_sum, z[:, j][:, None]])
            c[j] = k_new
            w = np.vstack([w, vals @ r_sum])
            colnorm = np.append(colnorm, float((vals * vals) @ row_sizes))
    _recanonicalize_columns(state, t)


def _drop_column(state: SamplerState, t: int, k: int):
    """Remove an emptied column cluster: release its latent cells and close
    the gap in the label space."""
    dead_tids = state.table_ids[t][:, k].copy()
    state.phi[t] = np.delete(state.phi[t], k, axis=1)
    state.table_ids[t] = np.delete(state.table_ids[t], k, axis=1)
    state.col_sums[t] = np.delete(state.col_sums[t], k, axis=1)
    state.col_sizes[t] = np.delete(state.col_sizes[t], k)
    c = state.col_alloc[t]
    c[c > k] -= 1
    state.store.release_cells(t, dead_tids)


def update_row_allocations(state: SamplerState, hyper: Hyperparameters, rng) -> None:
    """One Gibbs sweep over patients under the shared CRP row partition.

    Existing clusters are scored through their latent rows.  The weight
    of opening a new cluster marginalises the unseen latent row over the
    predictive law of the atom pool, independently per block; a winning
    opener is then seated block by block from the posterior over the same
    mixture, with brand-new atoms drawn from their Gaussian conditional.
    A dying singleton releases its cells before its patient is rescored,
    so the opening weight always reflects the remaining clusters only.
    """
    n = state.n_patients
    n_plat = state.n_platforms
    log_mass = np.log(hyper.mass_rows)
    r = state.row_alloc
    inv_s2 = 1.0 / state.sigma ** 2
    store = state.store
    hier = not isinstance(store, FixedMeasureLatent)
    if hier:
        prec0 = 1.0 / store.base_sd ** 2
        mu0 = store.base_mean
    # Score tables: scores[t] = C_t Phi_t' (n x H); rownorm[t][h] = sum_k p_tk phi_hk^2.
    scores = [state.col_sums[t] @ state.phi[t].T for t in range(n_plat)]
    rownorm = [(state.phi[t] * state.phi[t]) @ state.col_sizes[t] for t in range(n_plat)]

    # Opening weights for all patients at once, held until the seating
    # changes; block_logits[t][i, k, :] doubles as the seating posterior.
    comps_t: list = [None] * n_plat
    block_logits: list = [None] * n_plat
    block_tail: list = [None] * n_plat
    fresh_prec: list = [None] * n_plat
    fresh_num: list = [None] * n_plat
    newlik = np.zeros(n)
    stamp = None

    for i in range(n):
        h_old = int(r[i])
        state.row_sizes[h_old] -= 1.0
        if state.row_sizes[h_old] == 0.0:
            _drop_row(state, h_old)
            scores = [np.delete(s, h_old, axis=1) for s in scores]
            rownorm = [np.delete(v, h_old) for v in rownorm]
        else:
            for t in range(n_plat):
                state.row_sums[t][h_old] -= state.values[t][i]
        row_sizes = state.row_sizes
        h_total = row_sizes.size

        version = store.seating_version()
        if version != stamp:
            stamp = version
            newlik = np.zeros(n)
            for t in range(n_plat):
                comps = store.cell_components(t)
                comps_t[t] = comps
                sc = inv_s2[t]
                v = comps.values
                A = state.col_sums[t] * sc
                logits = A[:, :, None] * v - (0.5 * sc) * np.outer(state.col_sizes[t], v * v)
                logits += comps.logw
                block_logits[t] = logits
                if hier:
                    pn = prec0 + state.col_sizes[t] * sc
                    num = mu0 * prec0 + A
                    tail = comps.log_base + 0.5 * (np.log(prec0 / pn) + num * num / pn
                                                   - mu0 * mu0 * prec0)
                    fresh_prec[t], fresh_num[t], block_tail[t] = pn, num, tail
                    top = np.maximum(logits.max(axis=2), tail)
                    tot = np.exp(tail - top) + np.exp(logits - top[:, :, None]).sum(axis=2)
                else:
                    top = logits.max(axis=2)
                    tot = np.exp(logits - top[:, :, None]).sum(axis=2)
                newlik += (top + np.log(tot)).sum(axis=1)

        lik = np.zeros(h_total)
        for t in range(n_plat):
            lik += (scores[t][i] - 0.5 * rownorm[t]) * inv_s2[t]
        choice = _categorical(np.append(np.log(row_sizes) + lik, log_mass + newlik[i]), rng)

        if choice < h_total:
            r[i] = choice
            row_sizes[choice] += 1.0
            for t in range(n_plat):
                state.row_sums[t][choice] += state.values[t][i]
            continue

        # Open a cluster: seat its latent row from the per-block posterior.
        r[i] = h_total
        state.row_sizes = np.append(row_sizes, 1.0)
        for t in range(n_plat):
            comps = comps_t[t]
            n_comp = comps.values.size
            k_t = state.col_sizes[t].size
            vals = np.empty(k_t)
            tids = np.empty(k_t, dtype=np.int64)
            for k in range(k_t):
                if hier:
                    opts = np.append(block_logits[t][i, k], block_tail[t][i, k])
                else:
                    opts = block_logits[t][i, k]
                j = _categorical(opts, rng)
                if j == n_comp:
                    pn = fresh_prec[t][k]
                    val = float(rng.normal(fresh_num[t][i, k] / pn, 1.0 / np.sqrt(pn)))
                    tids[k] = store.seat_component(t, comps, -1, rng, val)
                else:
                    val = float(comps.values[j])
                    tids[k] = store.seat_component(t, comps, j, rng)
                vals[k] = val
            state.phi[t] = np.vstack([state.phi[t], vals])
            state.table_ids[t] = np.vstack([state.table_ids[t], tids])
            state.row_sums[t] = np.vstack([state.row_sums[t], state.values[t][i]])
            scores[t] = np.hstack([scores[t], (state.col_sums[t] @ vals)[:, None]])
            rownorm[t] = np.append(rownorm[t], float((vals * vals) @ state.col_sizes[t]))
    _recanonicalize_rows(state)


def _drop_row(state: SamplerState, h: int):
    for t in range(state.n_platforms):
        state.store.release_cells(t, state.table_ids[t][h, :].copy())
        state.phi[t] = np.delete(state.phi[t], h, axis=0)
        state.table_ids[t] = np.delete(state.table_ids[t], h, axis=0)
        state.row_sums[t] = np.delete(state.row_sums[t], h, axis=0)
    state.row_sizes = np.delete(state.row_sizes, h)
    r = state.row_alloc
    r[r > h] -= 1


def update_latent_atoms(state: SamplerState, hyper: Hyperparameters, rng) -> None:
    """Refresh the latent block matrices.

    Under the shared hierarchy this reseats every latent cell (table
    choice, including fresh tables serving existing or brand-new atoms)
    and then redraws every atom value from its Gaussian full conditional
    given all data cells it backs.  Under a fixed-measure latent model it
    simply redraws each cell from the measure's discrete conditional.
    """
    if isinstance(state.store, FixedMeasureLatent):
        _update_fixed_latents(state, rng)
        return
    store = state.store
    prec0 = 1.0 / store.base_sd ** 2
    mu0 = store.base_mean
    block_sums = [state.block_sums(t) for t in range(state.n_platforms)]
    block_counts = [state.block_counts(t) for t in range(state.n_platforms)]
    log_mass_tables = np.log(store.mass_tables)
    log_mass_atoms = np.log(store.mass_atoms)

    for t in range(state.n_platforms):
        a = state.table_ids[t]
        s2 = float(state.sigma[t]) ** 2
        h_n, k_n = a.shape
        for h in range(h_n):
            for k in range(k_n):
                nb = block_counts[t][h, k]
                sb = block_sums[t][h, k]
                store.remove_cell(t, int(a[h, k]))
                snap = store.restaurant_snapshot(t)
                dsnap = store.dish_snapshot()
                # log p(block | atom v) up to a shared constant: (v*S - n*v^2/2)/s2
                tab_scores = np.log(np.diff(snap.cum, prepend=0.0)) + (snap.values * sb - 0.5 * nb * snap.values ** 2) / s2
                dish_lik = (dsnap.values * sb - 0.5 * nb * dsnap.values ** 2) / s2
                prec_n = prec0 + nb / s2
                mean_num = mu0 * prec0 + sb / s2
                log_marg = 0.5 * (np.log(prec0 / prec_n) + mean_num ** 2 / prec_n - mu0 ** 2 * prec0)
                dish_opts = np.append(np.log(dsnap.counts) + dish_lik, log_mass_atoms + log_marg)
                m_total = dsnap.total
                top = dish_opts.max()
                new_table_score = (log_mass_tables - np.log(m_total + store.mass_atoms)
                                   + top + np.log(np.exp(dish_opts - top).sum()))
                choice = _categorical(np.append(tab_scores, new_table_score), rng)
                if choice < snap.tids.size:
                    tid = int(snap.tids[choice])
                    store.add_cell(t, tid)
                else:
                    dish_choice = _categorical(dish_opts, rng)
                    if dish_choice < dsnap.dids.size:
                        did = int(dsnap.dids[dish_choice])
                    else:
                        val = rng.normal(mean_num / prec_n, 1.0 / np.sqrt(prec_n))
                        did = store.open_dish(float(val))
                    tid = store.open_table(t, did)
                a[h, k] = tid

    # Atom values from their Gaussian full conditionals.
    acc: dict[int, list[float]] = {}
    for t in range(state.n_platforms):
        inv_s2 = 1.0 / float(state.sigma[t]) ** 2
        a = state.table_ids[t]
        for h in range(a.shape[0]):
            for k in range(a.shape[1]):
                did = store.dish_of(t, int(a[h, k]))
                rec = acc.setdefault(did, [0.0, 0.0])
                rec[0] += block_counts[t][h, k] * inv_s2
                rec[1] += block_sums[t][h, k] * inv_s2
    for did, dish in store.dishes.items():
        rec = acc.get(did)
        prec = prec0 + (rec[0] if rec else 0.0)
        num = mu0 * prec0 + (rec[1] if rec else 0.0)
        dish.value = float(rng.normal(num / prec, 1.0 / np.sqrt(prec)))
    store.refresh_values()
    for t in range(state.n_platforms):
        a = state.table_ids[t]
        phi = state.phi[t]
        flat_a, flat_phi = a.ravel(), phi.ravel()
        for i in range(flat_a.size):
            flat_phi[i] = store.value_of(t, int(flat_a[i]))


def _update_fixed_latents(state: SamplerState, rng) -> None:
    for t in range(state.n_platforms):
        measure = state.store.measures[t]
        atoms, weights = measure.atoms, measure.weights
        s2 = float(state.sigma[t]) ** 2
        b = state.block_sums(t)
        cnt = state.block_counts(t)
        phi = state.phi[t]
        for h in range(phi.shape[0]):
            for k in range(phi.shape[1]):
                logits = np.log(weights) + (atoms * b[h, k] - 0.5 * cnt[h, k] * atoms ** 2) / s2
                phi[h, k] = atoms[_categorical(logits, rng)]


def update_sigma(state: SamplerState, hyper: Hyperparameters, rng) -> np.ndarray:
    """Conjugate inverse-gamma refresh of the noise variance; pooled across
    platforms when the state shares one sigma."""
    a0, b0 = hyper.sigma_shape, hyper.sigma_scale
    sse = np.empty(state.n_platforms)
    counts = np.empty(state.n_platforms)
    for t in range(state.n_platforms):
        b = state.block_sums(t)
        cnt = state.block_counts(t)
        phi = state.phi[t]
        sse[t] = max(state.sumsq[t] - 2.0 * float(np.sum(phi * b)) + float(np.sum(cnt * phi * phi)), 0.0)
        counts[t] = state.values[t].size
    if state.shared_sigma:
        var = sigma_posterior_draw(a0, b0, float(counts.sum()), float(sse.sum()), rng)
        state.sigma[:] = np.sqrt(var)
    else:
        for t in range(state.n_platforms):
            state.sigma[t] = np.sqrt(sigma_posterior_draw(a0, b0, float(counts[t]), float(sse[t]), rng))
    return state.sigma.copy()


def sigma_posterior_params(shape: float, scale: float, n_cells: float, sse: float) -> tuple[float, float]:
    """Inverse-gamma full-conditional parameters for the noise variance."""
    return shape + 0.5 * n_cells, scale + 0.5 * sse


def sigma_posterior_draw(shape: float, scale: float, n_cells: float, sse: float, rng) -> float:
    a, b = sigma_posterior_params(shape, scale, n_cells, sse)
    return b / rng.gamma(a)


def update_discount(state: SamplerState, t: int, hyper: Hyperparameters, rng) -> bool:
    """Metropolis-Hastings refresh of platform t's discount under the
    mixture prior 0.5*delta_0 + 0.5*U(0,1).

    From zero the proposal is a fresh U(0,1) draw; from a positive value
    it jumps back to zero with probability one half and otherwise takes a
    reflected Gaussian random-walk step (sd 0.05).  Returns acceptance.
    """
    alloc = state.col_alloc[t]
    mass = hyper.mass_columns
    d = float(state.discounts[t])
    cur = partition_log_prob(alloc, d, mass)
    if d == 0.0:
        d_new = float(rng.random())
        if d_new == 0.0:
            return False
        # asymmetric proposal: q(0 -> d') = 1, q(d' -> 0) = 1/2
        log_acc = partition_log_prob(alloc, d_new, mass) - cur + np.log(0.5)
    elif rng.random() < 0.5:
        d_new = 0.0
        log_acc = partition_log_prob(alloc, 0.0, mass) - cur - np.log(0.5)
    else:
        step = float(rng.normal(0.0, 0.05))
        d_new = d + step
        while d_new < 0.0 or d_new > 1.0:
            d_new = -d_new if d_new < 0.0 else 2.0 - d_new
        if d_new in (0.0, 1.0):
            return False
        log_acc = partition_log_prob(alloc, d_new, mass) - cur
    if np.log(rng.random()) < log_acc:
        state.discounts[t] = d_new
        return True
    return False
