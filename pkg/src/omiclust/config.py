"""Run configuration: an INI file naming the input platforms and every
tunable of the clustering chain and the survival selection step.

Relative platform and clinical paths are resolved against the directory
holding the config file, so a config can travel with its data.
"""

from __future__ import annotations

import configparser
import dataclasses
import io as _io
import os
from dataclasses import dataclass, field

from .data import TRANSFORMS
from .engine import ChainSchedule
from .model import Hyperparameters
from .selection import SelectionConfig, SplineConfig

__all__ = [
    "ConfigError",
    "RunConfig",
    "load_config",
    "write_config",
    "default_config_text",
    "write_default_config",
]


class ConfigError(ValueError):
    """A malformed or inconsistent run configuration."""


@dataclass
class RunConfig:
    """Everything one pipeline run needs, validated at construction.

    ``clinical_path`` is optional; without it the survival selection
    stage is skipped.  ``selection_g`` of None means the unit-information
    default (the sample size).
    """

    platform_paths: list[str]
    transforms: list[str]
    clip_eps: float | None = None
    clinical_path: str | None = None
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    schedule: ChainSchedule = field(default_factory=ChainSchedule)
    seed: int = 0
    shared_sigma: bool = True
    fdr_alpha: float = 0.2
    spline_order: int = 1
    spline_knots: int = 1
    selection_sweeps: int = 4000
    selection_burn_fraction: float = 0.5
    selection_thin: int = 2
    selection_g: float | None = None
    tau_shape: float = 0.01
    tau_rate: float = 0.01
    outdir: str = "out"

    def __post_init__(self):
        self.platform_paths = [str(p) for p in self.platform_paths]
        self.transforms = [str(t) for t in self.transforms]
        if not self.platform_paths:
            raise ConfigError("at least one platform is required")
        if len(self.transforms) != len(self.platform_paths):
            raise ConfigError("one transform per platform is required")
        for t, name in enumerate(self.transforms):
            if name not in TRANSFORMS:
                raise ConfigError(
                    f"platform {t + 1}: unknown transform {name!r} "
                    f"(choose from {', '.join(sorted(TRANSFORMS))})")
        if self.clip_eps is not None and not 0.0 < self.clip_eps < 0.5:
            raise ConfigError("clip_eps must lie in (0, 0.5)")
        if not 0.0 < self.fdr_alpha < 1.0:
            raise ConfigError("fdr_alpha must lie in (0, 1)")
        if self.selection_sweeps < 1:
            raise ConfigError("selection sweeps must be >= 1")
        if not 0.0 <= self.selection_burn_fraction < 1.0:
            raise ConfigError("selection burn fraction must lie in [0, 1)")
        if self.selection_thin < 1:
            raise ConfigError("selection thin must be >= 1")
        # delegate the remaining range checks to the owning dataclasses
        try:
            self.spline
            self.selection
        except ValueError as err:
            raise ConfigError(str(err)) from None

    @property
    def n_platforms(self) -> int:
        return len(self.platform_paths)

    @property
    def spline(self) -> SplineConfig:
        return SplineConfig(order=self.spline_order, knots=self.spline_knots)

    @property
    def selection(self) -> SelectionConfig:
        return SelectionConfig(g=self.selection_g, tau_shape=self.tau_shape,
                               tau_rate=self.tau_rate, spline=self.spline)

    def as_dict(self) -> dict:
        """Flat JSON-friendly echo of the full configuration."""
        out = dataclasses.asdict(self)
        out["hyper"] = dataclasses.asdict(self.hyper)
        out["schedule"] = dataclasses.asdict(self.schedule)
        return out


_HYPER_KEYS = [f.name for f in dataclasses.fields(Hyperparameters)]
_CHAIN_KEYS = [f.name for f in dataclasses.fields(ChainSchedule)]


def _parse_float(section, key, raw):
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: could not parse "
                          f"{raw!r} as a number") from None


def _parse_int(section, key, raw):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: could not parse "
                          f"{raw!r} as an integer") from None


def _parse_bool(section, key, raw):
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"[{section}] {key}: could not parse {raw!r} "
                      "as true/false")


def _reject_unknown(parser, section, known):
    if not parser.has_section(section):
        return
    for key in parser.options(section):
        if key not in known:
            raise ConfigError(f"[{section}] has unknown key {key!r}")


def load_config(path) -> RunConfig:
    """Read an INI run configuration; see ``default_config_text`` for the
    full key set."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",),
                                       interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as err:
        raise ConfigError(f"{path}: {err}") from None

    known_sections = {"platforms", "data", "prior", "chain", "selection",
                      "output"}
    for section in parser.sections():
        if section not in known_sections:
            raise ConfigError(f"unknown section [{section}]")

    if not parser.has_section("platforms") or not parser.options("platforms"):
        raise ConfigError("section [platforms] must list at least one "
                          "platform as 'name = path[, transform]'")
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    paths, transforms = [], []
    for key in parser.options("platforms"):
        parts = [s.strip() for s in parser.get("platforms", key).split(",")]
        if len(parts) == 1:
            parts.append("identity")
        if len(parts) != 2 or not parts[0]:
            raise ConfigError(f"[platforms] {key}: expected "
                              "'path[, transform]'")
        paths.append(resolve(parts[0]))
        transforms.append(parts[1])

    kwargs: dict = {"platform_paths": paths, "transforms": transforms}

    _reject_unknown(parser, "data", {"clip_eps", "clinical"})
    if parser.has_option("data", "clip_eps"):
        raw = parser.get("data", "clip_eps").strip()
        if raw:
            kwargs["clip_eps"] = _parse_float("data", "clip_eps", raw)
    if parser.has_option("data", "clinical"):
        raw = parser.get("data", "clinical").strip()
        if raw:
            kwargs["clinical_path"] = resolve(raw)

    _reject_unknown(parser, "prior", set(_HYPER_KEYS))
    hyper_kwargs = {}
    if parser.has_section("prior"):
        for key in parser.options("prior"):
            hyper_kwargs[key] = _parse_float("prior", key,
                                             parser.get("prior", key))
    try:
        kwargs["hyper"] = Hyperparameters(**hyper_kwargs)
    except ValueError as err:
        raise ConfigError(f"[prior] {err}") from None

    chain_extra = {"seed", "shared_sigma"}
    _reject_unknown(parser, "chain", set(_CHAIN_KEYS) | chain_extra)
    chain_kwargs = {}
    if parser.has_section("chain"):
        for key in parser.options("chain"):
            raw = parser.get("chain", key)
            if key == "seed":
                kwargs["seed"] = _parse_int("chain", key, raw)
            elif key == "shared_sigma":
                kwargs["shared_sigma"] = _parse_bool("chain", key, raw)
            elif key in ("burn_fraction",):
                chain_kwargs[key] = _parse_float("chain", key, raw)
            else:
                chain_kwargs[key] = _parse_int("chain", key, raw)
    try:
        kwargs["schedule"] = ChainSchedule(**chain_kwargs)
    except ValueError as err:
        raise ConfigError(f"[chain] {err}") from None

    selection_keys = {
        "fdr_alpha": ("fdr_alpha", _parse_float),
        "spline_order": ("spline_order", _parse_int),
        "spline_knots": ("spline_knots", _parse_int),
        "sweeps": ("selection_sweeps", _parse_int),
        "burn_fraction": ("selection_burn_fraction", _parse_float),
        "thin": ("selection_thin", _parse_int),
        "g": ("selection_g", _parse_float),
        "tau_shape": ("tau_shape", _parse_float),
        "tau_rate": ("tau_rate", _parse_float),
    }
    _reject_unknown(parser, "selection", set(selection_keys))
    if parser.has_section("selection"):
        for key in parser.options("selection"):
            raw = parser.get("selection", key).strip()
            if not raw:
                continue
            target, parse = selection_keys[key]
            kwargs[target] = parse("selection", key, raw)

    _reject_unknown(parser, "output", {"dir"})
    if parser.has_option("output", "dir"):
        kwargs["outdir"] = resolve(parser.get("output", "dir").strip())

    return RunConfig(**kwargs)


def write_config(config: RunConfig, path) -> None:
    """Write a configuration that ``load_config`` reads back equal
    (paths are written as stored, so prefer absolute ones)."""
    parser = configparser.ConfigParser(interpolation=None)
    parser["platforms"] = {
        f"platform_{t + 1}": f"{p}, {tr}"
        for t, (p, tr) in enumerate(zip(config.platform_paths,
                                        config.transforms))
    }
    parser["data"] = {}
    if config.clip_eps is not None:
        parser["data"]["clip_eps"] = repr(config.clip_eps)
    if config.clinical_path is not None:
        parser["data"]["clinical"] = config.clinical_path
    parser["prior"] = {k: repr(getattr(config.hyper, k)) for k in _HYPER_KEYS}
    parser["chain"] = {k: repr(getattr(config.schedule, k))
                       for k in _CHAIN_KEYS}
    parser["chain"]["seed"] = repr(config.seed)
    parser["chain"]["shared_sigma"] = "true" if config.shared_sigma else "false"
    parser["selection"] = {
        "fdr_alpha": repr(config.fdr_alpha),
        "spline_order": repr(config.spline_order),
        "spline_knots": repr(config.spline_knots),
        "sweeps": repr(config.selection_sweeps),
        "burn_fraction": repr(config.selection_burn_fraction),
        "thin": repr(config.selection_thin),
        "tau_shape": repr(config.tau_shape),
        "tau_rate": repr(config.tau_rate),
    }
    if config.selection_g is not None:
        parser["selection"]["g"] = repr(config.selection_g)
    parser["output"] = {"dir": config.outdir}
    buf = _io.StringIO()
    parser.write(buf)
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def default_config_text() -> str:
    """A fully commented configuration with every key at its default."""
    hyper = Hyperparameters()
    schedule = ChainSchedule()
    prior_lines = "\n".join(f"{k} = {getattr(hyper, k)!r}"
                            for k in _HYPER_KEYS)
    chain_lines = "\n".join(f"{k} = {getattr(schedule, k)!r}"
                            for k in _CHAIN_KEYS)
    return f"""\
# Run configuration.  Relative paths are resolved against this file's
# directory.  Any key left out keeps the default shown here.

[platforms]
# One entry per platform: 'path[, transform]' with transform either
# identity or logit.  Patient ids must agree across platforms.
platform_1 = platform_1.csv, identity

[data]
# clip_eps: clip unit-interval values into [eps, 1-eps] before a logit
# transform; leave blank to reject boundary values instead.
clip_eps =
# clinical: patient_id,time,event CSV enabling the survival selection
# stage; leave blank to skip it.
clinical =

[prior]
# mass_* are concentration parameters of, in order: the per-platform
# probe partition, the patient partition, the per-platform mixing
# measures, and the shared base measure.  Atom values are drawn from
# N(base_mean, base_sd^2); the noise variance has an inverse-gamma
# (sigma_shape, sigma_scale) prior; each platform discount has prior
# discount_point_mass*delta_0 + (1-discount_point_mass)*U(0,1).
{prior_lines}

[chain]
# Sweep counts for the three phases (joint, rows-only, values-only),
# the recorded-sample rule (burn_fraction, thin), and the number of
# auxiliary proposals per probe reallocation move.
{chain_lines}
seed = 0
# shared_sigma: one noise scale for all platforms (true) or one per
# platform (false).
shared_sigma = true

[selection]
# Survival variable selection: Bayesian FDR threshold, truncated power
# spline shape (order, knots) for the nonlinear role, chain schedule,
# the g prior scale (blank = sample size), and the tau^2 prior.
fdr_alpha = 0.2
spline_order = 1
spline_knots = 1
sweeps = 4000
burn_fraction = 0.5
thin = 2
g =
tau_shape = 0.01
tau_rate = 0.01

[output]
dir = out
"""


def write_default_config(path) -> None:
    with open(path, "w") as fh:
        fh.write(default_config_text())
