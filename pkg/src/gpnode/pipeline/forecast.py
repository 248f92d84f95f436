"""Posterior-predictive forecasts from a fitted problem."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..gp import KernelHyper, NotPositiveDefinite, gp_condition
from ..integrate import SolveFailed, solve

MAX_DROP_FRACTION = 0.2


class ForecastError(RuntimeError):
    pass


@dataclass
class ForecastResult:
    """Sampled paths in physical units, shape (N_s, len(t), D)."""

    t: np.ndarray
    names: list
    paths: np.ndarray
    ode_paths: np.ndarray
    n_dropped: int = 0

    @property
    def n_samples(self):
        return self.paths.shape[0]

    @property
    def mean(self):
        return self.paths.mean(axis=0)

    @property
    def var(self):
        # 1/N_s estimator
        return self.paths.var(axis=0)

    @property
    def sd(self):
        return np.sqrt(self.var)

    def quantile(self, q):
        return np.quantile(self.paths, q, axis=0)

    def to_csv(self, path):
        q05, q95 = self.quantile(0.05), self.quantile(0.95)
        mean, sd = self.mean, self.sd
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            header = ["t"]
            for n in self.names:
                header += [f"{n}_mean", f"{n}_sd", f"{n}_q05", f"{n}_q95"]
            w.writerow(header)
            for i, t in enumerate(self.t):
                row = [repr(float(t))]
                for d in range(len(self.names)):
                    row += [repr(float(v)) for v in (mean[i, d], sd[i, d], q05[i, d], q95[i, d])]
                w.writerow(row)


def thin_evenly(n, n_keep):
    if n == 0:
        raise ForecastError("no posterior draws")
    if n_keep >= n:
        return np.arange(n)
    return np.unique(np.round(np.linspace(0, n - 1, n_keep)).astype(int))


def _sample_mvn(rng, mean, cov):
    vals, vecs = np.linalg.eigh(cov)
    return mean + vecs @ (np.sqrt(np.clip(vals, 0.0, None)) * rng.standard_normal(mean.size))


def forecast(problem, draws, t_query, n_samples=500, seed=0):
    """Monte Carlo posterior predictive at physical times ``t_query``.

    ``draws`` are constrained posterior draws (rows as in
    ``problem.space.constrained_names``), merged over chains.  Each kept draw
    solves the ODE over the query and training times; observed variables are
    then sampled from their GP conditional, latent ones follow the ODE path.
    """
    t_query = np.asarray(t_query, float)
    if np.any(np.diff(t_query) < 0):
        raise ForecastError("query times must be sorted")
    if t_query.size and t_query[0] < problem.obs.t0:
        raise ForecastError("query times precede the initial time")
    draws = np.atleast_2d(np.asarray(draws, float))
    keep = thin_evenly(draws.shape[0], n_samples)
    post = problem.posterior
    model = problem.model
    names = problem.space.constrained_names
    col = {n: i for i, n in enumerate(names)}
    s = problem.norm.scales
    c = problem.coord_scale
    T = problem.norm.time_scale
    grid = np.unique(np.concatenate([[post.t0], t_query, post.grid]))
    rows_q = np.searchsorted(grid, t_query)
    rows_b = [np.searchsorted(grid, b.times) for b in post.blocks]
    rng = np.random.default_rng(seed)
    paths, odes = [], []
    dropped = 0
    for k in keep:
        x = draws[k]
        theta = x[: model.n_params]
        try:
            with np.errstate(over="raise", invalid="raise"):
                z = solve(model, post.z0, grid, theta, problem.solver).states
        except (SolveFailed, FloatingPointError):
            dropped += 1
            continue
        norm_path = z * (c / s)  # normalized units for every variable
        out = norm_path[rows_q].copy()
        ok = True
        for b, rb in zip(post.blocks, rows_b):
            d = b.state_index
            hyp = KernelHyper(x[col[f"w_{b.name}"]], x[col[f"l_{b.name}"]], x[col[f"eps_{b.name}"]])
            resid = b.values - norm_path[rb, d]
            try:
                mc, kc = gp_condition(hyp, b.gp_times, resid, t_query / T)
            except NotPositiveDefinite:
                ok = False
                break
            out[:, d] = _sample_mvn(rng, out[:, d] + mc, kc)
        if not ok:
            dropped += 1
            continue
        paths.append(out * s)
        odes.append(norm_path[rows_q] * s)
    if dropped > MAX_DROP_FRACTION * len(keep):
        raise ForecastError(f"{dropped} of {len(keep)} forecast draws failed")
    if not paths:
        raise ForecastError("every forecast draw failed")
    return ForecastResult(t_query, list(model.state_names), np.array(paths), np.array(odes),
                          dropped)


def map_trajectory(problem, draw, t_query):
    """ODE path of a single constrained draw, physical units."""
    post = problem.posterior
    model = problem.model
    grid = np.unique(np.concatenate([[post.t0], np.asarray(t_query, float)]))
    z = solve(model, post.z0, grid, np.asarray(draw)[: model.n_params], problem.solver).states
    return z[np.searchsorted(grid, t_query)] * problem.coord_scale
