"""Wire a dataset, a dynamics model and priors into a :class:`Posterior`.

Coordinates: GP inputs use normalized time, observations normalized values.
The ODE runs in physical time.  Dictionary models evolve the normalized
state (so their coefficients live on the normalized scale and the unified
horseshoe hyperparameters apply); known-form models evolve the physical
state so their parameters keep their physical meaning.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dynamics import KIND_DICTIONARY, DynamicsModel, model_preset
from ..inference.posterior import LikelihoodBlock, Posterior
from ..integrate import SolverConfig, default_step
from ..priors import FH_TAG, FHConfig, Normal, ParamSpace, PriorConfigError, Uniform
from .data import NormalizationState, normalize


@dataclass
class Problem:
    model: DynamicsModel
    obs: object
    norm: NormalizationState
    coord_scale: np.ndarray
    space: ParamSpace
    posterior: Posterior
    solver: SolverConfig

    @property
    def z0_model(self):
        return self.posterior.z0

    def physical_params(self, constrained):
        """Map one constrained draw to physical units, keyed by name."""
        x = np.asarray(constrained, float)
        names = self.space.constrained_names
        out = dict(zip(names, x.tolist()))
        model = self.model
        theta = x[: model.n_params]
        if model.kind == KIND_DICTIONARY:
            expo = model.exponents
            K = expo.shape[0]
            c = self.coord_scale
            for d in range(model.state_dim):
                for k in range(K):
                    name = model.rhs_param_names[d * K + k]
                    out[name] = float(theta[d * K + k] * c[d] / np.prod(c ** expo[k]))
        for i, d in enumerate(model.unknown_ic):
            name = model.param_names[model.n_rhs_params + i]
            out[name] = float(theta[model.n_rhs_params + i] * self.coord_scale[d])
        return out

    def physical_draws(self, constrained):
        """Vectorized :meth:`physical_params` over a draws matrix; returns (names, array)."""
        rows = [self.physical_params(r) for r in np.atleast_2d(constrained)]
        names = list(rows[0].keys()) if rows else list(self.space.constrained_names)
        return names, np.array([[r[n] for n in names] for r in rows])

    def theta_f_model(self, physical):
        """Inverse of the dynamics part of :meth:`physical_params`."""
        model = self.model
        theta = np.array([physical[n] for n in model.param_names], float)
        if model.kind == KIND_DICTIONARY:
            expo = model.exponents
            K = expo.shape[0]
            c = self.coord_scale
            for d in range(model.state_dim):
                for k in range(K):
                    theta[d * K + k] /= c[d] / np.prod(c ** expo[k])
        for i, d in enumerate(model.unknown_ic):
            theta[model.n_rhs_params + i] /= self.coord_scale[d]
        return theta


def _rescale_prior(fam, c, name):
    if c == 1.0:
        return fam
    if isinstance(fam, Uniform):
        return Uniform(fam.a / c, fam.b / c)
    if isinstance(fam, Normal):
        return Normal(fam.mu / c, fam.sigma / c)
    raise PriorConfigError(f"{name}: only uniform/normal initial-condition priors can be rescaled")


def expand_priors(model, priors):
    """Resolve the group key ``A`` into per-coefficient horseshoe entries.

    Models with their own parameter called ``A`` (glycolysis) keep it as a
    plain parameter name.
    """
    out = {}
    for key, fam in priors.items():
        if key == "A" and key not in model.param_names:
            if model.kind != KIND_DICTIONARY:
                raise PriorConfigError("prior.A applies to dictionary models only")
            for n in model.rhs_param_names:
                out.setdefault(n, fam)
        else:
            out[key] = fam
    return out


def build_problem(model, obs, priors, solver=None, normalize_data=True, fh_m0=None, fh_nu=1.0,
                  fh_s=1.0, fh_centered=False):
    """Assemble the posterior for ``obs`` under ``model`` (preset name or instance).

    ``priors`` maps parameter names (physical units) to prior families;
    ``"A": FH_TAG`` puts a Finnish horseshoe on every dictionary coefficient.
    GP hyperparameters default to the unified priors unless overridden via
    ``w_<var>``, ``l_<var>``, ``eps_<var>`` keys.
    """
    if isinstance(model, str):
        model = model_preset(model)
    if model.state_dim != obs.D:
        raise ValueError(f"model has {model.state_dim} states, dataset has {obs.D} variables")
    if model.kind == KIND_DICTIONARY:
        model = DynamicsModel(model.kind, model.state_dim, model.rhs_param_names, tuple(obs.names),
                              model.dictionary, obs.unknown_ic)
    else:
        model = model.with_unknown_ic(obs.unknown_ic)

    if normalize_data:
        nobs, norm = normalize(obs)
    else:
        nobs, norm = obs, NormalizationState.identity(obs.names)
    s = norm.scales
    c = s.copy() if model.kind == KIND_DICTIONARY else np.ones(obs.D)

    z0 = np.array([0.0 if v.infer_ic else float(v.initial_condition) for v in obs.variables]) / c
    blocks = []
    for d in obs.V:
        raw, nv = obs.variables[d], nobs.variables[d]
        blocks.append(LikelihoodBlock(raw.name, d, raw.times.copy(), nv.times.copy(),
                                      nv.values.copy(), float(c[d] / s[d])))

    pri = expand_priors(model, priors)
    for i, d in enumerate(model.unknown_ic):
        name = model.param_names[model.n_rhs_params + i]
        if name in pri:
            pri[name] = _rescale_prior(pri[name], float(c[d]), name)
    fh_names = [n for n in model.param_names if pri.get(n) == FH_TAG]
    fh = (FHConfig(len(fh_names), max(obs.N_v, 1), fh_m0, fh_nu, fh_s, fh_centered)
          if fh_names else None)
    space = ParamSpace(model.param_names, [b.name for b in blocks], pri, fh)

    if solver is None:
        solver = SolverConfig()
    if solver.scheme == "rk4" and solver.h is None:
        grids = [obs.variables[d].times for d in obs.V]
        h = default_step(grids, norm.time_scale)
        solver = SolverConfig("rk4", h, solver.rtol, solver.atol, solver.max_steps)
    post = Posterior(model, z0, obs.t0, blocks, space, solver)
    return Problem(model, obs, norm, c, space, post, solver)
