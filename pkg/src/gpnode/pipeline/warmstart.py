"""Starting points for the sampler.

ODE likelihoods over several oscillation periods are strongly multimodal:
started from all-zero dictionary coefficients, the GP part explains the data
and NUTS settles in a poor local mode.  The warm start here avoids that:

1. fit an independent GP to every observed variable (type-II ML);
2. regress the GP derivative on the dictionary features of the GP mean
   (sequentially thresholded least squares, i.e. gradient matching);
3. set the horseshoe scales so the prior is centered on that guess;
4. polish with L-BFGS on the full log-posterior.
"""
from __future__ import annotations

import logging

import numpy as np
from scipy.linalg import cho_solve
from scipy.optimize import minimize

from ..dynamics import KIND_DICTIONARY, eval_dictionary
from ..gp import KernelHyper, NotPositiveDefinite, block_logpdf_and_grads, cholesky_jittered, \
    kernel_matrix

log = logging.getLogger(__name__)

INIT_METHODS = ("prior_median", "map", "gradient_matching")


def fit_gp_ml(t, y, lengthscales=(0.05, 0.1, 0.3)):
    """Type-II ML fit of one GP with a constant mean; returns (hyper, mean fn, derivative fn)."""
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    m = float(y.mean())
    var = max(float(np.var(y)), 1e-6)

    def nll(v):
        try:
            lp, _, gw, gl, ge = block_logpdf_and_grads(y - m, t, KernelHyper(*np.exp(v)))
        except (NotPositiveDefinite, ValueError, FloatingPointError):
            return 1e10, np.zeros(3)
        return -lp, -np.array([gw[0], gl[0], ge])

    best = None
    for l0 in lengthscales:
        r = minimize(nll, np.log([var, l0, 0.01 * var]), jac=True, method="L-BFGS-B",
                     bounds=[(-12, 6), (-8, 4), (-14, 4)])
        if best is None or r.fun < best.fun:
            best = r
    h = KernelHyper(*np.exp(best.x))
    L = cholesky_jittered(kernel_matrix(h, t, t) + h.eps * np.eye(t.size))
    alpha = cho_solve((L, True), y - m)

    def mean(tq):
        return m + kernel_matrix(h, tq, t) @ alpha

    def deriv(tq):
        d = np.asarray(tq, float)[:, None] - t[None, :]
        return (-2.0 * d / h.l[0] ** 2 * kernel_matrix(h, tq, t)) @ alpha

    return h, mean, deriv


def stlsq(Phi, y, threshold, ridge=1e-6, max_iter=25):
    """Sequentially thresholded ridge regression."""
    K = Phi.shape[1]
    active = np.ones(K, bool)
    xi = np.zeros(K)
    for _ in range(max_iter):
        xi[:] = 0.0
        if not active.any():
            break
        A = Phi[:, active]
        xi[active] = np.linalg.solve(A.T @ A + ridge * np.eye(A.shape[1]), A.T @ y)
        new = np.abs(xi) >= threshold
        if np.array_equal(new, active):
            break
        active = new
    return xi


def _fh_scales(coef, tau, c2, floor):
    """Local scales lambda with tau * lambda_tilde = max(|coef|, floor)."""
    s = np.maximum(np.abs(coef), floor)
    c = np.sqrt(c2)
    s = np.minimum(s, 0.9 * c)
    return s * c / (tau * np.sqrt(c2 - s**2))


def gradient_matching_point(problem, threshold=0.1, n_grid=200):
    """Constrained starting vector from GP smoothing plus sparse regression.

    Returns None when the model is not a dictionary or a state is latent.
    """
    model = problem.model
    post = problem.posterior
    space = problem.space
    if model.kind != KIND_DICTIONARY or len(post.blocks) != model.state_dim:
        return None
    T = problem.norm.time_scale
    lo = max(b.gp_times[0] for b in post.blocks)
    hi = min(b.gp_times[-1] for b in post.blocks)
    if not hi > lo:
        return None
    tq = np.linspace(lo, hi, n_grid)
    D = model.state_dim
    Z = np.empty((n_grid, D))
    dZ = np.empty((n_grid, D))
    hypers = {}
    for b in post.blocks:
        h, mean, deriv = fit_gp_ml(b.gp_times, b.values)
        hypers[b.name] = h
        # GP inputs are normalized time; the ODE runs in physical time
        Z[:, b.state_index] = mean(tq) / b.mean_scale
        dZ[:, b.state_index] = deriv(tq) / b.mean_scale / T
    Phi = np.array([eval_dictionary(model.dictionary, z) for z in Z])
    A = np.array([stlsq(Phi, dZ[:, d], threshold) for d in range(D)])

    names = space.constrained_names
    x = space.transform(space.initial_point())
    x[: model.n_rhs_params] = A.ravel()
    if space.fh_names:
        i_tau = names.index("tau")
        tau, c2 = x[i_tau], x[i_tau + 1]
        coef = x[space.fh_theta_idx]
        c2 = max(c2, (1.5 * np.max(np.abs(coef))) ** 2)
        x[i_tau + 1] = c2
        lam = _fh_scales(coef, tau, c2, floor=0.05 * tau)
        x[i_tau + 2: i_tau + 2 + lam.size] = lam
    for v, h in hypers.items():
        x[names.index(f"w_{v}")] = h.w[0]
        x[names.index(f"l_{v}")] = h.l[0]
        x[names.index(f"eps_{v}")] = h.eps
    return x


def maximize_posterior(posterior, u0, max_iter=2000, free=None):
    """L-BFGS on the log-posterior over the coordinates ``free`` (default all).

    Failed solves count as a large penalty.  Returns (u, log posterior).
    """
    u0 = np.asarray(u0, float)
    free = np.arange(u0.size) if free is None else np.asarray(free, int)

    def f(v):
        u = u0.copy()
        u[free] = v
        lp, g = posterior(u)
        if not np.isfinite(lp):
            return 1e10, np.zeros(free.size)
        return -lp, -g[free]

    r = minimize(f, u0[free], jac=True, method="L-BFGS-B", options={"maxiter": max_iter})
    u = u0.copy()
    u[free] = r.x
    return u, -float(r.fun)


def feasible_point(posterior, u, seed=0, attempts=200, radius=2.0):
    """``u`` if its log-posterior is finite, else the first finite random point.

    Candidates are drawn uniformly within ``radius`` of ``u`` in the
    unconstrained space (stiff models can fail to solve at the prior median).
    """
    u = np.asarray(u, float)
    if np.isfinite(posterior(u)[0]):
        return u
    rng = np.random.default_rng(seed)
    for _ in range(attempts):
        v = u + rng.uniform(-radius, radius, u.size)
        if np.isfinite(posterior(v)[0]):
            return v
    raise RuntimeError(f"no finite starting point in {attempts} attempts")


def _shrinkage_fixed(space):
    """Coordinates other than the horseshoe scales, for the centered form.

    The centered horseshoe density is unbounded as the global scale goes to
    zero, so a joint optimum would collapse the scales; the non-centered
    density stays bounded and is optimized jointly.
    """
    if not space.fh_names or not space.fh_config.centered:
        return None
    held = set(range(space.i_tau, space.sl_lam.stop))
    return np.array([i for i in range(space.dim) if i not in held], int)


def initial_point(problem, method="gradient_matching", max_iter=2000):
    """Unconstrained starting point according to ``method``.

    ``prior_median`` is the plain prior-median point; ``map`` polishes it
    with L-BFGS; ``gradient_matching`` seeds that polish with the
    regression estimate (falling back to ``map`` when not applicable).
    With a centered horseshoe its scales are held at the regression-centered
    values during the polish.
    """
    if method not in INIT_METHODS:
        raise ValueError(f"unknown init method {method!r}")
    space = problem.space
    u = space.initial_point()
    if method == "prior_median":
        return u
    if method == "gradient_matching":
        x = gradient_matching_point(problem)
        if x is not None:
            u_gm = space.inverse_transform(x)
            if np.isfinite(problem.posterior(u_gm)[0]):
                u = u_gm
    u = feasible_point(problem.posterior, u)
    u_opt, lp = maximize_posterior(problem.posterior, u, max_iter, _shrinkage_fixed(space))
    log.info("warm start (%s): log posterior %.3f", method, lp)
    return u_opt


def laplace_inv_metric(posterior, u, h=1e-5, min_precision=0.5):
    """Dense inverse metric from the finite-difference Hessian at ``u``.

    Curvatures below ``min_precision`` (including negative ones away from an
    exact mode) are raised to it, so poorly identified directions get a
    variance of at most ``1 / min_precision``.
    """
    u = np.asarray(u, float)
    n = u.size
    H = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        gp, gm = posterior(u + e)[1], posterior(u - e)[1]
        H[i] = (gp - gm) / (2.0 * h)
    H = -0.5 * (H + H.T)
    if not np.all(np.isfinite(H)):
        return None
    w, V = np.linalg.eigh(H)
    w = np.maximum(w, min_precision)
    return (V / w) @ V.T
