"""PCA projection of high-dimensional trajectories and RMSE scoring."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PcaMap:
    mean: np.ndarray
    basis: np.ndarray  # dims x r, orthonormal columns
    explained: np.ndarray  # variance share of each retained direction
    eigenvalues: np.ndarray

    @property
    def rank(self):
        return self.basis.shape[1]


def pca_fit(Y, r):
    """Eigendecomposition of the sample covariance of ``Y`` (frames x dims)."""
    Y = np.asarray(Y, float)
    if Y.ndim != 2:
        raise ValueError("expected a frames x dims matrix")
    n, p = Y.shape
    if r < 1 or n < r:
        raise ValueError(f"need at least r={r} frames")
    mean = Y.mean(axis=0)
    C = np.cov(Y - mean, rowvar=False, bias=False).reshape(p, p)
    vals, vecs = np.linalg.eigh(C)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    tol = max(n, p) * np.finfo(float).eps * max(vals[0], 0.0)
    if r > int(np.sum(vals > tol)):
        raise ValueError(f"rank {r} exceeds the numerical rank of the data")
    basis = vecs[:, :r]
    # deterministic sign: largest-magnitude loading positive
    flip = np.sign(basis[np.argmax(np.abs(basis), axis=0), np.arange(r)])
    basis = basis * flip
    total = float(np.sum(np.clip(vals, 0, None)))
    return PcaMap(mean, basis, vals[:r] / total, vals[:r])


def pca_project(pmap, Y):
    return (np.asarray(Y, float) - pmap.mean) @ pmap.basis


def pca_reconstruct(pmap, X):
    return pmap.mean + np.asarray(X, float) @ pmap.basis.T


def rmse(truth, pred):
    d = np.asarray(truth, float) - np.asarray(pred, float)
    return float(np.sqrt(np.mean(d * d)))


def rmse_report(Y, draws, fit_frames, forecast_frames):
    """RMSE over all dims for the fit and forecast frame sets.

    ``draws`` is (n_draws, frames, dims) in the original space.  Returns
    ``{"fit": (mean, sd), "forecast": (mean, sd)}`` across draws.
    """
    Y = np.asarray(Y, float)
    draws = np.asarray(draws, float)
    if draws.ndim == 2:
        draws = draws[None]
    out = {}
    for key, frames in (("fit", fit_frames), ("forecast", forecast_frames)):
        frames = np.asarray(frames, int)
        if frames.size == 0:
            raise ValueError(f"empty {key} range")
        vals = np.array([rmse(Y[frames], d[frames]) for d in draws])
        out[key] = (float(vals.mean()), float(vals.std()))
    return out
