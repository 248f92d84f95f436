"""Benchmark presets: model, grids, priors and sampler settings per example."""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from ..dynamics import (
    GLYCOLYSIS_TRUTH, GLYCOLYSIS_TRUTH_IC, LV_TRUTH_IC, lv_dict7_truth, model_preset,
)
from ..inference.nuts import NutsConfig
from ..integrate import SolverConfig
from ..priors import FH_TAG, Uniform
from .data import ObservationSet, Variable, arange_inclusive, simulate
from .pca import pca_fit, pca_project

FULL_SAMPLER = NutsConfig(warmup=4000, samples=8000, target_accept=0.85, chains=2)
# desk scale also caps trajectories at 255 leapfrog steps: on the LV and
# glycolysis posteriors depth 10 is hit on most iterations, which alone
# costs about four times the runtime target
DESK_SAMPLER = NutsConfig(warmup=500, samples=1000, target_accept=0.85, chains=2,
                          max_tree_depth=8)

MOCAP_FRAMES = 82
MOCAP_HELD_OUT = tuple(range(34, 49))  # frames 35..49, zero-based
MOCAP_MATRIX_ENV = "GPNODE_MOCAP_MATRIX"


@dataclass
class Preset:
    name: str
    model: str
    priors: dict
    truth: dict = field(default_factory=dict)
    z0: tuple = ()
    grids: dict = field(default_factory=dict)
    infer_ic: tuple = ()
    noise_pct: float = 0.10
    t_max: float = 0.0
    sampler: NutsConfig = FULL_SAMPLER
    desk_sampler: NutsConfig = DESK_SAMPLER
    solver: SolverConfig | None = None
    run_options: dict = field(default_factory=dict)  # extra RunConfig fields

    def nuts_config(self, desk_scale=False, seed=None):
        cfg = self.desk_sampler if desk_scale else self.sampler
        return cfg if seed is None else replace(cfg, seed=seed)

    def simulate(self, seed=0, noise_pct=None, mode="amplitude"):
        model = model_preset(self.model)
        theta = np.array([self.truth[n] for n in model.rhs_param_names])
        return simulate(model, theta, np.array(self.z0), self.grids,
                        self.noise_pct if noise_pct is None else noise_pct, seed, mode,
                        self.infer_ic)


def _lv_truth_named():
    model = model_preset("lv-dict7")
    return dict(zip(model.rhs_param_names, lv_dict7_truth().ravel().tolist()))


def lv_grids():
    t1 = arange_inclusive(1.5, 16.5, 0.3)
    t2 = np.concatenate([[0.0], arange_inclusive(1.65, 16.35, 0.3), [16.5]])
    return {"x1": t1, "x2": t2}


def glycolysis_grids():
    n2 = np.concatenate([arange_inclusive(0.525, 2.975, 0.05), [3.0]])
    a3 = np.concatenate([[0.0], arange_inclusive(0.5, 3.0, 0.05)])
    s4 = np.concatenate([[0.0], n2])
    return {"N2": n2, "A3": a3, "S4ex": s4}


GLYCOLYSIS_PRIOR_BOUNDS = {
    "J0": (1, 10), "k1": (80, 120), "k2": (1, 10), "k3": (2, 20), "k4": (80, 120),
    "k5": (0.1, 2), "k6": (2, 20), "k": (0.1, 2), "kappa": (2, 20), "q": (1, 10),
    "K_I": (0.1, 2), "phi": (0.05, 1), "N": (0.1, 2), "A": (1, 10), "N2_0": (0, 1),
}


def lv_preset():
    return Preset(
        name="lv", model="lv-dict7",
        priors={"A": FH_TAG, "x1_0": Uniform(4.0, 6.0)},
        truth=_lv_truth_named(), z0=LV_TRUTH_IC, grids=lv_grids(), infer_ic=("x1",),
        t_max=25.0,
        # one short gap in the x2 grid would otherwise force h = 0.015; at
        # h = 0.05 the state error stays near 1e-4 against a noise sd near 3
        solver=SolverConfig("rk4", 0.05),
    )


def glycolysis_preset():
    return Preset(
        name="glycolysis", model="glycolysis",
        priors={k: Uniform(float(a), float(b)) for k, (a, b) in GLYCOLYSIS_PRIOR_BOUNDS.items()},
        truth=dict(GLYCOLYSIS_TRUTH), z0=GLYCOLYSIS_TRUTH_IC, grids=glycolysis_grids(),
        infer_ic=("N2",), t_max=5.0,
        # the default step is 0.0025 because of one 0.025 gap; 0.005 stays
        # inside the stability bound (0.02 at the truth) with relative error
        # below 2e-4 against 10% noise
        solver=SolverConfig("rk4", 0.005),
    )


def mocap_preset(case="a"):
    model = {"a": "mocap-dict-a", "b": "mocap-dict-b"}[case.lower()]
    return Preset(name=f"mocap-{case.lower()}", model=model, priors={"A": FH_TAG}, t_max=0.0)


PRESETS = {
    "lv": lv_preset,
    "glycolysis": glycolysis_preset,
    "mocap-a": lambda: mocap_preset("a"),
    "mocap-b": lambda: mocap_preset("b"),
}


def get_preset(name):
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# ---------------------------------------------------------------------------
# motion capture
# ---------------------------------------------------------------------------


def synthetic_mocap_matrix(frames=MOCAP_FRAMES, dims=50, seed=0, noise=0.05):
    """Surrogate pose matrix: three smooth latent modes mixed into ``dims`` channels.

    The latent path is a damped rotation with a slow drift, which is exactly
    representable by the case-A dictionary.
    """
    from ..dynamics import MOCAP_DICT_A, dictionary_model
    from ..integrate import SolverConfig, solve

    model = dictionary_model(MOCAP_DICT_A)
    A = np.zeros((3, 7))
    A[0, 2], A[1, 1] = 0.25, -0.25  # rotation in (x1, x2)
    A[0, 1], A[1, 2] = -0.01, -0.01
    A[2, 0], A[2, 3], A[2, 4] = 0.02, -0.05, 0.01
    t = np.arange(frames, dtype=float)
    X = solve(model, np.array([2.0, 0.0, 0.5]), t, A.ravel(), SolverConfig("dopri5", rtol=1e-10,
                                                                           atol=1e-12)).states
    rng = np.random.default_rng(seed)
    W, _ = np.linalg.qr(rng.standard_normal((dims, 3)))
    W = W * np.array([8.0, 6.0, 4.0])
    mean = rng.normal(0.0, 5.0, dims)
    return mean + X @ W.T + noise * rng.standard_normal((frames, dims))


def load_mocap_matrix(path=None):
    """User-supplied frames x dims matrix (whitespace or comma separated)."""
    path = path or os.environ.get(MOCAP_MATRIX_ENV)
    if not path:
        return None
    text = open(path).read()
    Y = np.loadtxt(path, delimiter="," if "," in text.splitlines()[0] else None)
    if Y.ndim != 2:
        raise ValueError(f"{path}: expected a 2-d matrix")
    return Y


@dataclass
class MocapData:
    Y: np.ndarray
    times: np.ndarray
    train: np.ndarray
    held_out: np.ndarray
    pmap: object
    obs: ObservationSet
    synthetic: bool


def mocap_dataset(Y=None, held_out=MOCAP_HELD_OUT, rank=3, dt=1.0):
    """Project the pose matrix on its leading directions and hold out frames.

    The PCA basis is fitted on the training frames only so held-out frames
    never inform the projection.
    """
    synthetic = Y is None
    if Y is None:
        Y = synthetic_mocap_matrix()
    Y = np.asarray(Y, float)
    n = Y.shape[0]
    held = np.array(sorted(set(held_out)), int)
    train = np.setdiff1d(np.arange(n), held)
    pmap = pca_fit(Y[train], rank)
    X = pca_project(pmap, Y)
    t = np.arange(n, dtype=float) * dt
    variables = [Variable(f"x{j + 1}", True, t[train], X[train, j]) for j in range(rank)]
    obs = ObservationSet(variables, "frame", float(t[0]))
    return MocapData(Y, t, train, held, pmap, obs, synthetic)
