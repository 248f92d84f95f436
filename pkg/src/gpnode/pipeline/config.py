"""Flat ``key = value`` run configuration.

Example::

    preset = lv                  # optional, supplies model/priors/sampler
    model = lv-dict7
    prior.A = finnish_horseshoe
    prior.x1_0 = uniform(4, 6)
    solver.scheme = rk4
    sampler.warmup = 500
    sampler.samples = 1000
    sampler.metric = diag        # or dense
    fh.centered = false
    init = gradient_matching     # prior_median | map | gradient_matching
    seed = 0
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..inference.nuts import NutsConfig
from ..integrate import SolverConfig
from ..priors import parse_prior


class ConfigError(ValueError):
    pass


_SOLVER_TYPES = {"scheme": str, "h": float, "rtol": float, "atol": float, "max_steps": int}
_SAMPLER_TYPES = {f.name: f.type for f in fields(NutsConfig)}
_CASTS = {"int": int, "float": float, "str": str, int: int, float: float, str: str}


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    model: str | None = None
    preset: str | None = None
    priors: dict = field(default_factory=dict)
    solver: SolverConfig = field(default_factory=SolverConfig)
    sampler: NutsConfig = field(default_factory=NutsConfig)
    normalize: bool = True
    fh_m0: float | None = None
    fh_nu: float = 1.0
    fh_s: float = 1.0
    fh_centered: bool = False
    init: str = "gradient_matching"
    noise_mode: str = "amplitude"
    forecast_samples: int = 500
    raw: dict = field(default_factory=dict)


def parse_config_text(text):
    """Parse ``key = value`` lines (``#`` starts a comment) into a dict."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def build_config(raw, base=None):
    """Turn parsed key/values into a :class:`RunConfig` on top of ``base``."""
    cfg = base or RunConfig()
    priors = dict(cfg.priors)
    solver = {f.name: getattr(cfg.solver, f.name) for f in fields(SolverConfig)}
    sampler = {}
    seed = None
    extra = {}
    for key, value in raw.items():
        try:
            if key == "model":
                extra["model"] = value
            elif key == "preset":
                extra["preset"] = value
            elif key.startswith("prior."):
                priors[key[len("prior."):]] = parse_prior(value)
            elif key.startswith("solver."):
                name = key[len("solver."):]
                if name not in _SOLVER_TYPES:
                    raise ConfigError(f"unknown solver key {key!r}")
                solver[name] = _SOLVER_TYPES[name](value) if value.lower() != "none" else None
            elif key.startswith("sampler."):
                name = key[len("sampler."):]
                if name not in _SAMPLER_TYPES:
                    raise ConfigError(f"unknown sampler key {key!r}")
                sampler[name] = _CASTS.get(_SAMPLER_TYPES[name], float)(value)
            elif key == "normalize":
                extra["normalize"] = _bool(value)
            elif key == "seed":
                seed = int(value)
            elif key == "noise.mode":
                extra["noise_mode"] = value
            elif key in ("fh.m0", "fh.nu", "fh.s"):
                extra["fh_" + key[3:]] = float(value)
            elif key == "fh.centered":
                extra["fh_centered"] = _bool(value)
            elif key == "init":
                from .warmstart import INIT_METHODS

                if value not in INIT_METHODS:
                    raise ConfigError(f"init must be one of {INIT_METHODS}")
                extra["init"] = value
            elif key == "forecast.samples":
                extra["forecast_samples"] = int(value)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: {exc}") from None
    if seed is not None and "seed" not in sampler:
        sampler["seed"] = seed
    try:
        sv = SolverConfig(**solver)
        sm = replace(cfg.sampler, **sampler)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    merged = dict(cfg.raw)
    merged.update(raw)
    return replace(cfg, priors=priors, solver=sv, sampler=sm, raw=merged, **extra)


def preset_base(name, desk_scale=False):
    """RunConfig pre-filled from a benchmark preset."""
    from .presets import get_preset

    pre = get_preset(name)
    return RunConfig(model=pre.model, preset=name, priors=dict(pre.priors),
                     sampler=pre.nuts_config(desk_scale),
                     solver=pre.solver or SolverConfig(), **pre.run_options)


def load_config(path_or_text, desk_scale=False):
    """Read a config file (or literal text); a ``preset`` key seeds the defaults."""
    p = Path(path_or_text)
    text = p.read_text() if p.exists() else str(path_or_text)
    raw = parse_config_text(text)
    base = preset_base(raw["preset"], desk_scale) if "preset" in raw else None
    cfg = build_config(raw, base)
    if cfg.model is None:
        raise ConfigError("config needs a model or preset")
    return cfg
