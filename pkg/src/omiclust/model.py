"""Model state containers and the Gaussian cell likelihood.

The generative model ties a global patient clustering r (one partition of
the n patients, shared by every platform) to per-platform probe
clusterings c_t.  Each platform carries a latent block matrix Phi_t of
shape H x K_t whose entries are atoms drawn from a platform-level
discrete mixing measure; measurements are conditionally independent
Gaussians centred on their block's atom:

    Z[i, j, t] ~ N(Phi_t[r[i], c_t[j]], sigma^2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from omiclust.partitions import is_canonical

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class Hyperparameters:
    """Fixed prior settings for the bidirectional clustering model.

    mass_columns, mass_rows, mass_tables, mass_atoms are the concentration
    parameters of, in order: the per-platform probe partition (PDP), the
    patient partition (DP), the platform-level mixing measures, and the
    shared base measure those platform measures are drawn from.  The base
    measure over atom values is N(base_mean, base_sd^2).  The noise
    variance carries an inverse-gamma(sigma_shape, sigma_scale) prior, and
    each platform discount has prior 0.5*delta_0 + 0.5*U(0,1).
    """

    mass_columns: float = 1.0
    mass_rows: float = 1.0
    mass_tables: float = 1.0
    mass_atoms: float = 1.0
    base_mean: float = 0.0
    base_sd: float = 1.0
    sigma_shape: float = 0.01
    sigma_scale: float = 0.01
    discount_point_mass: float = 0.5

    def __post_init__(self):
        for name in ("mass_columns", "mass_rows", "mass_tables", "mass_atoms"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.base_sd > 0:
            raise ValueError("base_sd must be positive")
        if not (self.sigma_shape > 0 and self.sigma_scale > 0):
            raise ValueError("sigma prior parameters must be positive")
        if not (0.0 <= self.discount_point_mass <= 1.0):
            raise ValueError("discount_point_mass must lie in [0, 1]")


@dataclass
class ClusterState:
    """A joint allocation: one probe partition per platform plus the shared
    patient partition, all in canonical label order."""

    column_alloc: list[np.ndarray]
    row_alloc: np.ndarray

    def __post_init__(self):
        self.column_alloc = [np.asarray(c, dtype=np.intp) for c in self.column_alloc]
        self.row_alloc = np.asarray(self.row_alloc, dtype=np.intp)
        for t, c in enumerate(self.column_alloc):
            if c.ndim != 1 or c.size == 0:
                raise ValueError(f"platform {t + 1}: column allocation must be a non-empty vector")
            if not is_canonical(c):
                raise ValueError(f"platform {t + 1}: column allocation is not canonical")
        if self.row_alloc.ndim != 1 or self.row_alloc.size == 0:
            raise ValueError("row allocation must be a non-empty vector")
        if not is_canonical(self.row_alloc):
            raise ValueError("row allocation is not canonical")

    @property
    def n_platforms(self) -> int:
        return len(self.column_alloc)

    @property
    def n_row_clusters(self) -> int:
        return int(self.row_alloc.max()) + 1

    def n_column_clusters(self, t: int) -> int:
        return int(self.column_alloc[t].max()) + 1


@dataclass
class LatentMatrices:
    """Latent block matrices with their atom identities.

    ``phi[t]`` is the H x K_t matrix of block means for platform t and
    ``atom_ids[t]`` the parallel integer matrix of global atom identifiers:
    two cells anywhere in the study that share an id share one atom, and
    therefore one value, exactly.
    """

    phi: list[np.ndarray]
    atom_ids: list[np.ndarray]
    noise_sd: np.ndarray

    def __post_init__(self):
        self.phi = [np.asarray(p, dtype=np.float64) for p in self.phi]
        self.atom_ids = [np.asarray(a, dtype=np.int64) for a in self.atom_ids]
        self.noise_sd = np.atleast_1d(np.asarray(self.noise_sd, dtype=np.float64))
        if len(self.phi) != len(self.atom_ids):
            raise ValueError("phi and atom_ids must cover the same platforms")
        for t, (p, a) in enumerate(zip(self.phi, self.atom_ids)):
            if p.ndim != 2 or p.shape != a.shape:
                raise ValueError(f"platform {t + 1}: phi and atom_ids must be matrices of equal shape")
            if not np.all(np.isfinite(p)):
                raise ValueError(f"platform {t + 1}: non-finite latent value")
        if self.noise_sd.size not in (1, len(self.phi)):
            raise ValueError("noise_sd must be scalar or one value per platform")
        if np.any(self.noise_sd <= 0) or not np.all(np.isfinite(self.noise_sd)):
            raise ValueError("noise_sd must be positive and finite")
        # Shared atoms must agree in value everywhere, bit for bit.
        seen: dict[int, float] = {}
        for p, a in zip(self.phi, self.atom_ids):
            for aid, val in zip(a.ravel(), p.ravel()):
                prev = seen.setdefault(int(aid), float(val))
                if prev != float(val):
                    raise ValueError(f"atom {int(aid)} carries two distinct values")

    def sd_for(self, t: int) -> float:
        return float(self.noise_sd[0] if self.noise_sd.size == 1 else self.noise_sd[t])


def cell_log_likelihood(z, mean, sd) -> np.ndarray | float:
    """Gaussian log density of measurement(s) z around latent mean(s)."""
    z = np.asarray(z, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    sd_arr = np.asarray(sd, dtype=np.float64)
    if np.any(sd_arr <= 0) or not np.all(np.isfinite(sd_arr)):
        raise ValueError("sd must be positive and finite")
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(mean))):
        raise ValueError("z and mean must be finite")
    out = -0.5 * _LOG_2PI - np.log(sd_arr) - 0.5 * ((z - mean) / sd_arr) ** 2
    return float(out) if out.ndim == 0 else out


def dataset_log_likelihood(values: list[np.ndarray], state: ClusterState, latents: LatentMatrices) -> float:
    """Total Gaussian log likelihood of the study under an allocation and
    latent block matrices."""
    if len(values) != state.n_platforms or len(values) != len(latents.phi):
        raise ValueError("values, state and latents must cover the same platforms")
    total = 0.0
    for t, z in enumerate(values):
        z = np.asarray(z, dtype=np.float64)
        c = state.column_alloc[t]
        r = state.row_alloc
        phi = latents.phi[t]
        if z.shape != (r.size, c.size):
            raise ValueError(
                f"platform {t + 1}: data shape {z.shape} does not match allocations "
                f"({r.size} patients, {c.size} probes)"
            )
        if phi.shape[0] <= r.max() or phi.shape[1] <= c.max():
            raise ValueError(f"platform {t + 1}: phi is too small for the allocation labels")
        mu = phi[r][:, c]
        sd = latents.sd_for(t)
        total += float(np.sum(-0.5 * _LOG_2PI - np.log(sd) - 0.5 * ((z - mu) / sd) ** 2))
    return total
