"""Motion-capture scoring: forecast in PCA space, score in the pose space."""
from __future__ import annotations

import numpy as np

from .forecast import forecast
from .pca import pca_reconstruct, rmse_report


def mocap_rmse(problem, data, draws, n_samples=100, seed=0):
    """RMSE over the training frames and the held-out frames.

    Each forecast path over every frame is lifted back to the original
    channels through the PCA map of ``data``.  Returns the
    :func:`rmse_report` dict plus the forecast itself.
    """
    res = forecast(problem, draws, data.times, n_samples=n_samples, seed=seed)
    poses = np.array([pca_reconstruct(data.pmap, path) for path in res.paths])
    report = rmse_report(data.Y, poses, data.train, data.held_out)
    return report, res
