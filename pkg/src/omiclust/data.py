"""Input containers and per-platform preprocessing transforms.

A study consists of T platform matrices measured on one shared patient
cohort: platform t is an n x p_t real matrix with patients as rows and
probes (genes, CpG sites, ...) as columns.  Proportion-valued platforms
(methylation beta values) are mapped to the real line by a logit before
modelling; intensity platforms pass through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TRANSFORMS = ("identity", "logit")


class TransformDomainError(ValueError):
    """Raised when a transform is applied outside its domain; carries the
    (row, column) position of the first offending cell."""

    def __init__(self, message: str, row: int, col: int):
        super().__init__(message)
        self.row = row
        self.col = col


def logit(values: np.ndarray) -> np.ndarray:
    """Elementwise log(x / (1-x)) for x strictly inside (0, 1)."""
    values = np.asarray(values, dtype=np.float64)
    bad = ~((values > 0.0) & (values < 1.0))
    if np.any(bad):
        pos = np.argwhere(bad)[0]
        r = int(pos[0])
        c = int(pos[1]) if values.ndim >= 2 else 0
        raise TransformDomainError(
            f"logit requires values in the open interval (0, 1); offending value "
            f"{values[tuple(pos)]!r} at row {r}, column {c}",
            r,
            c,
        )
    return np.log(values) - np.log1p(-values)


def inverse_logit(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    out = np.empty_like(values)
    pos = values >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-values[pos]))
    ez = np.exp(values[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def clip_unit_interval(values: np.ndarray, eps: float) -> np.ndarray:
    """Clip proportions into [eps, 1-eps] ahead of a logit transform."""
    if not (0.0 < eps < 0.5):
        raise ValueError("eps must lie in (0, 0.5)")
    return np.clip(np.asarray(values, dtype=np.float64), eps, 1.0 - eps)


def transform_platform(values: np.ndarray, kind: str) -> np.ndarray:
    """Apply the named per-platform transform ('identity' or 'logit')."""
    if kind not in TRANSFORMS:
        raise ValueError(f"unknown transform {kind!r}; expected one of {TRANSFORMS}")
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("platform values must form a 2-d matrix")
    if not np.all(np.isfinite(values)):
        r, c = np.argwhere(~np.isfinite(values))[0]
        raise ValueError(f"non-finite value at row {int(r)}, column {int(c)}")
    if kind == "identity":
        return values.copy()
    return logit(values)


def _as_matrix(values) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("platform values must form a 2-d matrix")
    if values.shape[0] < 2:
        raise ValueError("a platform needs at least two patients")
    if values.shape[1] < 1:
        raise ValueError("a platform needs at least one probe")
    if not np.all(np.isfinite(values)):
        r, c = np.argwhere(~np.isfinite(values))[0]
        raise ValueError(f"non-finite value at row {int(r)}, column {int(c)}")
    return values


@dataclass
class PlatformMatrix:
    """One platform on the transformed (modelling) scale.

    Parameters
    ----------
    values : ndarray of shape (n, p)
        Transformed measurements, patients by probes.
    probe_names : sequence of str, optional
        Column identifiers; defaults to ``probe_1..probe_p``.
    transform : str
        Which transform produced ``values`` ('identity' or 'logit').
    """

    values: np.ndarray
    probe_names: list[str] | None = None
    transform: str = "identity"

    def __post_init__(self):
        self.values = _as_matrix(self.values)
        if self.transform not in TRANSFORMS:
            raise ValueError(f"unknown transform {self.transform!r}")
        if self.probe_names is None:
            self.probe_names = [f"probe_{j + 1}" for j in range(self.values.shape[1])]
        self.probe_names = [str(s) for s in self.probe_names]
        if len(self.probe_names) != self.values.shape[1]:
            raise ValueError("probe_names length must match the number of columns")
        if len(set(self.probe_names)) != len(self.probe_names):
            raise ValueError("probe names must be unique within a platform")

    @classmethod
    def from_raw(cls, raw, transform: str = "identity", probe_names=None, clip_eps: float | None = None):
        """Build from raw-scale values, optionally clipping proportions into
        [clip_eps, 1-clip_eps] before a logit."""
        raw = np.asarray(raw, dtype=np.float64)
        if clip_eps is not None and transform == "logit":
            raw = clip_unit_interval(raw, clip_eps)
        return cls(values=transform_platform(raw, transform), probe_names=probe_names, transform=transform)

    @property
    def n_patients(self) -> int:
        return self.values.shape[0]

    @property
    def n_probes(self) -> int:
        return self.values.shape[1]


@dataclass
class ClinicalOutcomes:
    """Right-censored survival outcomes aligned to the platform patient order.

    ``observed_time`` holds the follow-up time w_i > 0 and
    ``censor_indicator`` is 1 for an observed death, 0 for censoring.
    ``log_time`` starts at log(w_i); for censored patients it is a latent
    value bounded below by log(w_i) and is refreshed during sampling.
    """

    observed_time: np.ndarray
    censor_indicator: np.ndarray
    log_time: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.observed_time = np.asarray(self.observed_time, dtype=np.float64)
        self.censor_indicator = np.asarray(self.censor_indicator, dtype=np.intp)
        if self.observed_time.ndim != 1 or self.observed_time.shape != self.censor_indicator.shape:
            raise ValueError("observed_time and censor_indicator must be equal-length vectors")
        if np.any(self.observed_time <= 0) or not np.all(np.isfinite(self.observed_time)):
            raise ValueError("observed times must be positive and finite")
        if not np.all(np.isin(self.censor_indicator, (0, 1))):
            raise ValueError("censor indicators must be 0 or 1")
        if self.log_time is None:
            self.log_time = np.log(self.observed_time)
        self.log_time = np.asarray(self.log_time, dtype=np.float64)
        if self.log_time.shape != self.observed_time.shape:
            raise ValueError("log_time must match observed_time in length")
        lb = np.log(self.observed_time)
        if np.any(self.log_time < lb - 1e-12):
            raise ValueError("log_time may not fall below log(observed_time)")

    @property
    def n_patients(self) -> int:
        return self.observed_time.size


@dataclass
class TransformedDataset:
    """All platforms of one study on the modelling scale, plus optional
    clinical outcomes, with a single shared patient order."""

    platforms: list[PlatformMatrix]
    patient_ids: list[str] | None = None
    outcomes: ClinicalOutcomes | None = None

    def __post_init__(self):
        if not self.platforms:
            raise ValueError("a dataset needs at least one platform")
        self.platforms = list(self.platforms)
        n = self.platforms[0].n_patients
        for t, pl in enumerate(self.platforms):
            if pl.n_patients != n:
                raise ValueError(
                    f"platform {t + 1} has {pl.n_patients} patients, expected {n}"
                )
        if self.patient_ids is None:
            self.patient_ids = [f"patient_{i + 1}" for i in range(n)]
        self.patient_ids = [str(s) for s in self.patient_ids]
        if len(self.patient_ids) != n:
            raise ValueError("patient_ids length must match the platform row count")
        if len(set(self.patient_ids)) != n:
            raise ValueError("patient ids must be unique")
        if self.outcomes is not None and self.outcomes.n_patients != n:
            raise ValueError("outcomes must cover exactly the platform patients")

    @property
    def n_patients(self) -> int:
        return self.platforms[0].n_patients

    @property
    def n_platforms(self) -> int:
        return len(self.platforms)

    @property
    def values(self) -> list[np.ndarray]:
        return [pl.values for pl in self.platforms]
