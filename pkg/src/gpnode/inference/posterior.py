from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..gp import KernelHyper, NotPositiveDefinite, block_logpdf_and_grads
from ..integrate import SolveFailed, SolverConfig, solve_with_sensitivities


@dataclass
class LikelihoodBlock:
    """Observations of one state variable in model units.

    ``times`` are the ODE times, ``gp_times`` the (normalized) kernel inputs,
    and ``mean_scale`` maps the model state to observation units.
    """

    name: str
    state_index: int
    times: np.ndarray
    gp_times: np.ndarray
    values: np.ndarray
    mean_scale: float = 1.0


@dataclass
class Posterior:
    """GP-NODE log-posterior over the unconstrained coordinates of ``space``."""

    model: object
    z0: np.ndarray
    t0: float
    blocks: list
    space: object
    solver: SolverConfig = field(default_factory=SolverConfig)
    n_evals: int = 0
    n_failures: int = 0

    def __post_init__(self):
        self.z0 = np.asarray(self.z0, float)
        grids = [np.asarray(b.times, float) for b in self.blocks]
        self.grid = np.unique(np.concatenate([[self.t0]] + grids)) if grids else np.array([self.t0])
        if self.grid[0] < self.t0:
            raise ValueError("observation before the initial time")
        self.rows = [np.searchsorted(self.grid, g) for g in grids]
        if self.space.gp_vars != tuple(b.name for b in self.blocks):
            raise ValueError("parameter space GP variables must match likelihood blocks")

    @property
    def dim(self):
        return self.space.dim

    @property
    def n_obs(self):
        return int(sum(b.values.size for b in self.blocks))

    def log_likelihood_and_grad(self, theta_f, log_w, log_l, log_eps):
        P = self.model.n_params
        g_theta = np.zeros(P)
        nb = len(self.blocks)
        g_w, g_l, g_e = np.zeros(nb), np.zeros(nb), np.zeros(nb)
        if self.n_obs == 0:
            return 0.0, g_theta, g_w, g_l, g_e
        sol = solve_with_sensitivities(self.model, self.z0, self.grid, theta_f, self.solver)
        total = 0.0
        for k, (b, rows) in enumerate(zip(self.blocks, self.rows)):
            if b.values.size == 0:
                continue
            mean = b.mean_scale * sol.states[rows, b.state_index]
            hyp = KernelHyper(np.exp(log_w[k]), np.exp(log_l[k]), float(np.exp(log_eps[k])))
            lp, alpha, gw, gl, ge = block_logpdf_and_grads(b.values - mean, b.gp_times, hyp)
            total += lp
            g_theta += b.mean_scale * alpha @ sol.sensitivities[rows, b.state_index, :]
            g_w[k], g_l[k], g_e[k] = gw[0], gl[0], ge
        return total, g_theta, g_w, g_l, g_e

    def log_posterior_and_grad(self, u):
        """(log p, d log p / du); (-inf, 0) when the solve or factorization fails."""
        self.n_evals += 1
        u = np.asarray(u, float)
        if not np.all(np.isfinite(u)):
            return -np.inf, np.zeros(self.dim)
        p = self.space.unpack(u)
        lp_prior, g_prior = self.space.log_prior_and_grad(u)
        try:
            with np.errstate(over="raise", invalid="raise"):
                ll, g_theta, g_w, g_l, g_e = self.log_likelihood_and_grad(
                    p.theta_f, p.log_w, p.log_l, p.log_eps)
        except (SolveFailed, NotPositiveDefinite, FloatingPointError, np.linalg.LinAlgError):
            self.n_failures += 1
            return -np.inf, np.zeros(self.dim)
        total = ll + lp_prior
        grad = g_prior + self.space.pullback(u, g_theta, g_w, g_l, g_e)
        if not (np.isfinite(total) and np.all(np.isfinite(grad))):
            self.n_failures += 1
            return -np.inf, np.zeros(self.dim)
        return float(total), grad

    def __call__(self, u):
        return self.log_posterior_and_grad(u)

    def log_posterior(self, u):
        return self.log_posterior_and_grad(u)[0]
