"""Gaussian-process pieces: squared-exponential kernel, block-diagonal
covariance over per-variable time grids, MVN log-density and conditioning."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

LOG_2PI = np.log(2.0 * np.pi)
JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class NotPositiveDefinite(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class KernelHyper:
    """Hyperparameters of one observed variable (Q_d components)."""

    w: tuple
    l: tuple
    eps: float

    def __post_init__(self):
        w = tuple(float(v) for v in np.atleast_1d(self.w))
        l = tuple(float(v) for v in np.atleast_1d(self.l))
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "l", l)
        if len(w) != len(l):
            raise ValueError("w and l need one entry per kernel component")
        if min(w) <= 0 or min(l) <= 0 or not self.eps > 0:
            raise ValueError("kernel hyperparameters must be strictly positive")


def kernel_eval(w, l, t, tp):
    """w * exp(-(t - t')^2 / l^2); broadcasts over array arguments."""
    return w * np.exp(-((np.asarray(t) - np.asarray(tp)) ** 2) / l**2)


def kernel_matrix(hyper, t1, t2):
    t1 = np.asarray(t1, float)[:, None]
    t2 = np.asarray(t2, float)[None, :]
    out = np.zeros((t1.shape[0], t2.shape[1]))
    for w, l in zip(hyper.w, hyper.l):
        out += kernel_eval(w, l, t1, t2)
    return out


def cholesky_jittered(K):
    """Lower Cholesky factor, escalating diagonal jitter before giving up."""
    scale = np.mean(np.diag(K)) if K.size else 1.0
    for j in JITTER_LADDER:
        A = K if j == 0.0 else K + j * scale * np.eye(K.shape[0])
        try:
            L = cholesky(A, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(L)):
            return L
    raise NotPositiveDefinite("covariance not positive definite after jitter")


@dataclass
class Block:
    name: str
    times: np.ndarray
    hyper: KernelHyper
    cov: np.ndarray
    chol: np.ndarray = field(default=None, repr=False)


@dataclass
class CovarianceAssembly:
    """Block-diagonal K + K_eps, one block per observed variable, in order."""

    blocks: list

    @property
    def sizes(self):
        return [b.times.size for b in self.blocks]

    @property
    def n(self):
        return int(sum(self.sizes))

    def dense(self):
        out = np.zeros((self.n, self.n))
        i = 0
        for b in self.blocks:
            k = b.times.size
            out[i:i + k, i:i + k] = b.cov
            i += k
        return out

    def factorize(self):
        for b in self.blocks:
            if b.chol is None and b.times.size:
                b.chol = cholesky_jittered(b.cov)
        return self


def assemble_covariance(grids, hypers, names=None):
    """Build the block-diagonal covariance.

    ``grids`` and ``hypers`` are parallel sequences (one per observed variable).
    """
    if len(grids) != len(hypers):
        raise ValueError("need one hyperparameter set per grid")
    names = names or [str(i) for i in range(len(grids))]
    blocks = []
    for name, t, hyp in zip(names, grids, hypers):
        t = np.asarray(t, float)
        if np.any(np.diff(t) < 0):
            raise ValueError(f"time grid for {name} must be sorted")
        K = kernel_matrix(hyp, t, t) + hyp.eps * np.eye(t.size)
        blocks.append(Block(name, t, hyp, K))
    return CovarianceAssembly(blocks)


def _split(vec, sizes):
    return np.split(np.asarray(vec, float), np.cumsum(sizes)[:-1])


def block_logpdf(r, L):
    alpha = cho_solve((L, True), r, check_finite=False)
    return (-0.5 * r @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * r.size * LOG_2PI), alpha


def mvn_logpdf(y, mean, cov):
    """Gaussian log-density, summed block by block via Cholesky factors."""
    y = np.asarray(y, float)
    mean = np.asarray(mean, float)
    if y.shape != mean.shape or y.size != cov.n:
        raise ValueError("y, mean and covariance dimensions disagree")
    cov.factorize()
    total = 0.0
    for b, yb, mb in zip(cov.blocks, _split(y, cov.sizes), _split(mean, cov.sizes)):
        if yb.size:
            total += block_logpdf(yb - mb, b.chol)[0]
    return total


def block_logpdf_and_grads(r, t, hyper):
    """Log-density of one block and its gradients.

    Returns ``(logp, dlogp/dmean, dlogp/dlog w, dlogp/dlog l, dlogp/dlog eps)``
    where the hyper gradients follow 0.5 tr((a a^T - S^-1) dS/dh) and are taken
    with respect to the log of each positive hyperparameter.
    """
    t = np.asarray(t, float)
    d2 = (t[:, None] - t[None, :]) ** 2
    comps = [w * np.exp(-d2 / l**2) for w, l in zip(hyper.w, hyper.l)]
    S = sum(comps) + hyper.eps * np.eye(t.size)
    L = cholesky_jittered(S)
    logp, alpha = block_logpdf(r, L)
    Sinv = cho_solve((L, True), np.eye(t.size), check_finite=False)
    W = np.outer(alpha, alpha) - Sinv
    # the mean enters through r = y - mean, so dlogp/dmean = +alpha
    g_w = np.array([0.5 * np.sum(W * Kc) for Kc in comps])
    g_l = np.array([0.5 * np.sum(W * Kc * 2.0 * d2 / l**2) for Kc, l in zip(comps, hyper.l)])
    g_eps = 0.5 * hyper.eps * np.trace(W)
    return logp, alpha, g_w, g_l, g_eps


def gp_condition(hyper, t_train, residuals, t_query):
    """Posterior mean correction and covariance of the latent GP at ``t_query``."""
    t_train = np.asarray(t_train, float)
    t_query = np.asarray(t_query, float)
    residuals = np.asarray(residuals, float)
    Kq = kernel_matrix(hyper, t_query, t_query)
    if t_train.size == 0:
        return np.zeros(t_query.size), Kq
    S = kernel_matrix(hyper, t_train, t_train) + hyper.eps * np.eye(t_train.size)
    L = cholesky_jittered(S)
    Kqt = kernel_matrix(hyper, t_query, t_train)
    mean = Kqt @ cho_solve((L, True), residuals, check_finite=False)
    V = solve_triangular(L, Kqt.T, lower=True, check_finite=False)
    cov = Kq - V.T @ V
    cov = 0.5 * (cov + cov.T)
    idx = np.diag_indices_from(cov)
    cov[idx] = np.maximum(cov[idx], 0.0)
    return mean, cov
