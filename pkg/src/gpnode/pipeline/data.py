"""Observation sets, the dataset JSON format, normalization and synthetic data."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..integrate import SolverConfig, solve

INFER = "infer"


class DatasetError(ValueError):
    pass


@dataclass
class Variable:
    name: str
    observed: bool
    times: np.ndarray
    values: np.ndarray
    initial_condition: float | str | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).ravel()
        self.values = np.asarray(self.values, dtype=float).ravel()

    @property
    def infer_ic(self):
        return self.initial_condition == INFER


@dataclass
class ObservationSet:
    variables: list
    time_unit: str = ""
    t0: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.variables:
            raise DatasetError("dataset has no variables")
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise DatasetError("variable names must be unique")
        if not any(v.observed for v in self.variables):
            raise DatasetError("no observed variable")
        for v in self.variables:
            if v.times.shape != v.values.shape:
                raise DatasetError(f"{v.name}: times and values differ in length")
            if np.any(~np.isfinite(v.times)) or np.any(~np.isfinite(v.values)):
                raise DatasetError(f"{v.name}: NaN or infinite entries")
            if np.any(np.diff(v.times) <= 0):
                raise DatasetError(f"{v.name}: times must be strictly increasing")
            if v.times.size and v.times[0] < self.t0:
                raise DatasetError(f"{v.name}: observation before the initial time {self.t0}")
            if v.observed and v.times.size == 0:
                raise DatasetError(f"{v.name}: observed variable without observations")
            ic = v.initial_condition
            if ic is None:
                if v.observed and v.times[0] == self.t0:
                    v.initial_condition = float(v.values[0])
                else:
                    raise DatasetError(f"{v.name}: needs a numeric initial condition or 'infer'")
            elif ic != INFER:
                try:
                    v.initial_condition = float(ic)
                except (TypeError, ValueError):
                    raise DatasetError(f"{v.name}: bad initial condition {ic!r}") from None

    @property
    def names(self):
        return [v.name for v in self.variables]

    @property
    def D(self):
        return len(self.variables)

    @property
    def V(self):
        """Indices of observed variables."""
        return [i for i, v in enumerate(self.variables) if v.observed]

    @property
    def N_v(self):
        return int(sum(self.variables[i].times.size for i in self.V))

    @property
    def unknown_ic(self):
        return tuple(i for i, v in enumerate(self.variables) if v.infer_ic)

    def initial_state(self, fill=np.nan):
        return np.array([fill if v.infer_ic else v.initial_condition for v in self.variables])

    def __getitem__(self, name):
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def to_dict(self):
        return {
            "time_unit": self.time_unit,
            "t0": self.t0,
            "variables": [
                {
                    "name": v.name,
                    "observed": bool(v.observed),
                    "times": v.times.tolist(),
                    "values": v.values.tolist(),
                    "initial_condition": v.initial_condition,
                }
                for v in self.variables
            ],
        }


def ingest(path_or_dict):
    """Load and validate a dataset (file path, JSON text or already-parsed dict)."""
    if isinstance(path_or_dict, dict):
        raw = path_or_dict
    else:
        p = Path(path_or_dict)
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{p}: invalid JSON ({exc})") from None
    if "variables" not in raw or not isinstance(raw["variables"], list):
        raise DatasetError("dataset must contain a 'variables' list")
    variables = []
    for i, item in enumerate(raw["variables"]):
        try:
            name = str(item["name"])
            observed = bool(item.get("observed", True))
            times = [float(t) for t in item.get("times", [])]
            values = [float(x) for x in item.get("values", [])]
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"variable #{i}: {exc}") from None
        variables.append(Variable(name, observed, times, values, item.get("initial_condition")))
    return ObservationSet(variables, str(raw.get("time_unit", "")), float(raw.get("t0", 0.0)))


def save_dataset(obs, path):
    Path(path).write_text(json.dumps(obs.to_dict(), indent=1))


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


@dataclass
class NormalizationState:
    """Per-variable value scales and the global time scale."""

    names: list
    scales: np.ndarray
    time_scale: float

    def __post_init__(self):
        self.scales = np.asarray(self.scales, float)
        if np.any(self.scales <= 0) or not self.time_scale > 0:
            raise DatasetError("normalization scales must be positive")

    def scale_of(self, name):
        return float(self.scales[self.names.index(name)])

    def values_to_normal(self, name, x):
        return np.asarray(x, float) / self.scale_of(name)

    def values_to_physical(self, name, x):
        return np.asarray(x, float) * self.scale_of(name)

    def times_to_normal(self, t):
        return np.asarray(t, float) / self.time_scale

    def times_to_physical(self, t):
        return np.asarray(t, float) * self.time_scale

    def to_dict(self):
        return {"names": list(self.names), "scales": self.scales.tolist(),
                "time_scale": self.time_scale}

    @classmethod
    def identity(cls, names):
        return cls(list(names), np.ones(len(names)), 1.0)


def normalize(obs):
    """Divide observed values by their max-abs and times by the largest observed time."""
    scales = np.ones(obs.D)
    tmax = 0.0
    for i in obs.V:
        v = obs.variables[i]
        s = float(np.max(np.abs(v.values)))
        if s == 0.0:
            raise DatasetError(f"{v.name}: all-zero observations cannot be normalized")
        scales[i] = s
        tmax = max(tmax, float(v.times.max()))
    if tmax <= 0:
        raise DatasetError("largest observed time must be positive to normalize time")
    state = NormalizationState(obs.names, scales, tmax)
    variables = []
    for v, s in zip(obs.variables, scales):
        ic = v.initial_condition if v.infer_ic else float(v.initial_condition) / s
        variables.append(Variable(v.name, v.observed, v.times / tmax, v.values / s, ic))
    return ObservationSet(variables, obs.time_unit, obs.t0 / tmax), state


def denormalize(obs, state):
    variables = []
    for v, s in zip(obs.variables, state.scales):
        ic = v.initial_condition if v.infer_ic else float(v.initial_condition) * s
        variables.append(Variable(v.name, v.observed, v.times * state.time_scale, v.values * s, ic))
    return ObservationSet(variables, obs.time_unit, obs.t0 * state.time_scale)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

REFERENCE_SOLVER = SolverConfig("dopri5", rtol=1e-10, atol=1e-12)


def simulate(model, theta_f, z0, grids, noise_pct=0.0, seed=0, mode="amplitude",
             infer_ic=(), t0=0.0, time_unit=""):
    """Noisy observations of a reference solution.

    ``grids`` maps variable names to observation times; variables absent from
    it are latent.  In ``amplitude`` mode the noise sd is ``noise_pct`` times
    the variable's max-abs value on its grid; ``pointwise`` scales each
    observation by its own magnitude.
    """
    if mode not in ("amplitude", "pointwise"):
        raise ValueError(f"unknown noise mode {mode!r}")
    names = list(model.state_names)
    unknown = [names.index(n) if isinstance(n, str) else int(n) for n in infer_ic]
    grids = {k: np.asarray(v, float) for k, v in grids.items()}
    for k in grids:
        if k not in names:
            raise ValueError(f"grid given for unknown variable {k!r}")
    all_t = np.unique(np.concatenate([[t0]] + [g for g in grids.values()]))
    full = model.with_unknown_ic(())
    sol = solve(full, np.asarray(z0, float), all_t, np.asarray(theta_f, float)[: full.n_params],
                REFERENCE_SOLVER)
    rng = np.random.default_rng(seed)
    variables = []
    for d, name in enumerate(names):
        ic = INFER if d in unknown else float(z0[d])
        if name not in grids:
            variables.append(Variable(name, False, [], [], ic))
            continue
        t = grids[name]
        rows = np.searchsorted(all_t, t)
        clean = sol.states[rows, d]
        if mode == "amplitude":
            sd = noise_pct * np.max(np.abs(clean))
        else:
            sd = noise_pct * np.abs(clean)
        noisy = clean + sd * rng.standard_normal(clean.size)
        variables.append(Variable(name, True, t, noisy, ic))
    return ObservationSet(variables, time_unit, t0)


def arange_inclusive(start, stop, step):
    n = int(math.floor((stop - start) / step + 1e-9))
    return np.round(start + step * np.arange(n + 1), 10)
