"""Fit a dataset and persist / reload the run directory.

A run directory holds ``data.json``, ``config.txt``, ``run.json``,
``samples_chain<k>.csv`` (constrained draws, dynamics parameters in physical
units), ``sampler_chain<k>.csv`` (per-draw sampler statistics) and
``summary.json`` (five-number summaries).
"""
from __future__ import annotations

import csv
import glob
import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..diagnostics import five_numbers
from ..inference import nuts_sample
from .config import RunConfig, build_config, parse_config_text, preset_base
from .data import ingest, save_dataset
from .problem import build_problem
from .warmstart import initial_point, laplace_inv_metric

log = logging.getLogger(__name__)


@dataclass
class FitResult:
    problem: object
    chains: list
    names: list
    physical: list  # per chain: draws x params, physical units
    seconds: float

    @property
    def merged(self):
        return np.concatenate(self.physical, axis=0)

    @property
    def merged_model(self):
        """Merged constrained draws in model coordinates (for forecasting)."""
        return np.concatenate([c.constrained for c in self.chains], axis=0)

    @property
    def divergences(self):
        return int(sum(c.divergent.sum() for c in self.chains))

    def column(self, name):
        return self.merged[:, self.names.index(name)]


def problem_from_config(obs, cfg):
    return build_problem(cfg.model, obs, cfg.priors, cfg.solver, cfg.normalize, cfg.fh_m0,
                         cfg.fh_nu, cfg.fh_s, cfg.fh_centered)


def fit(obs, cfg, callback=None):
    """Sample the posterior of ``obs`` under ``cfg``; nothing is written.

    The starting point follows ``cfg.init``; with a dense metric the
    inverse metric is seeded from the curvature at that point.
    """
    problem = problem_from_config(obs, cfg)
    t0 = time.perf_counter()
    u0 = initial_point(problem, cfg.init)
    metric = None
    if cfg.sampler.metric == "dense" and cfg.init != "prior_median":
        metric = laplace_inv_metric(problem.posterior, u0)
    chains = nuts_sample(problem.posterior, cfg.sampler, u_init=u0, callback=callback,
                         inv_metric=metric)
    seconds = time.perf_counter() - t0
    names = None
    physical = []
    for ch in chains:
        names, arr = problem.physical_draws(ch.constrained)
        physical.append(arr)
    return FitResult(problem, chains, names, physical, seconds)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def read_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[float(v) for v in row] for row in r]
    return header, np.array(rows).reshape(len(rows), len(header))


def write_run(result, obs, cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(obs, out / "data.json")
    keys = dict(cfg.raw)
    keys.update({f"sampler.{k}": v for k, v in asdict(cfg.sampler).items()})
    keys.update({f"solver.{k}": v for k, v in asdict(cfg.solver).items()})
    keys.update({"fh.centered": cfg.fh_centered, "init": cfg.init})
    (out / "config.txt").write_text("".join(f"{k} = {v}\n" for k, v in keys.items()))
    for k, (ch, arr) in enumerate(zip(result.chains, result.physical)):
        _write_csv(out / f"samples_chain{k}.csv", result.names, arr)
        stats = np.column_stack([ch.log_prob, ch.accept_stat, ch.step_size, ch.tree_depth,
                                 ch.n_leapfrog, ch.divergent])
        _write_csv(out / f"sampler_chain{k}.csv",
                   ["lp", "accept_stat", "step_size", "tree_depth", "n_leapfrog", "divergent"],
                   stats)
    summary = {n: five_numbers(result.merged[:, j]) for j, n in enumerate(result.names)}
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    p = result.problem
    meta = {
        "model": cfg.model,
        "preset": cfg.preset,
        "normalization": p.norm.to_dict(),
        "solver": asdict(p.solver),
        "sampler": asdict(cfg.sampler),
        "dim": p.posterior.dim,
        "seconds": result.seconds,
        "divergences": [int(c.divergent.sum()) for c in result.chains],
        "warmup_divergences": [int(c.warmup_divergences) for c in result.chains],
        "step_size": [float(c.step_size[0]) for c in result.chains],
        "mean_tree_depth": [float(c.tree_depth.mean()) for c in result.chains],
    }
    (out / "run.json").write_text(json.dumps(meta, indent=1))
    return out


@dataclass
class LoadedRun:
    problem: object
    obs: object
    cfg: RunConfig
    names: list
    physical: list
    divergences: int
    meta: dict

    @property
    def merged(self):
        return np.concatenate(self.physical, axis=0)

    def model_draws(self):
        """Merged draws with dynamics entries mapped back to model coordinates."""
        p = self.problem
        n = p.model.n_params
        out = self.merged.copy()
        idx = [self.names.index(name) for name in p.model.param_names]
        for row in out:
            row[:n] = p.theta_f_model(dict(zip(p.model.param_names, row[idx])))
        cols = [self.names.index(name) for name in p.space.constrained_names]
        return out[:, cols]


def sample_files(run_dir):
    return sorted(glob.glob(str(Path(run_dir) / "samples_chain*.csv")),
                  key=lambda s: int(Path(s).stem.replace("samples_chain", "")))


def load_run(run_dir):
    run_dir = Path(run_dir)
    obs = ingest(run_dir / "data.json")
    meta = json.loads((run_dir / "run.json").read_text())
    raw = parse_config_text((run_dir / "config.txt").read_text())
    base = preset_base(raw["preset"]) if "preset" in raw else None
    cfg = build_config(raw, base)
    problem = problem_from_config(obs, cfg)
    names, physical = None, []
    for f in sample_files(run_dir):
        names, arr = read_csv(f)
        physical.append(arr)
    div = sum(meta.get("divergences", []))
    return LoadedRun(problem, obs, cfg, names, physical, div, meta)
