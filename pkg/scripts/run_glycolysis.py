"""Glycolysis benchmark: forward check plus a short posterior run.

    python scripts/run_glycolysis.py --out runs/glycolysis [--warmup 300 --samples 600]
"""
import argparse
import logging
from dataclasses import replace

import numpy as np

from gpnode.diagnostics import five_numbers
from gpnode.dynamics import model_preset
from gpnode.integrate import solve
from gpnode.pipeline.config import build_config, preset_base
from gpnode.pipeline.data import REFERENCE_SOLVER
from gpnode.pipeline.presets import get_preset
from gpnode.pipeline.problem import build_problem
from gpnode.pipeline.run import fit, write_run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/glycolysis")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--warmup", type=int, default=300)
    ap.add_argument("--samples", type=int, default=600)
    ap.add_argument("--chains", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    pre = get_preset("glycolysis")
    obs = pre.simulate(seed=args.seed)
    model = model_preset(pre.model)
    theta = np.array([pre.truth[n] for n in model.rhs_param_names])
    t = np.linspace(0.0, pre.t_max, 101)
    step = build_problem(pre.model, obs, pre.priors).solver
    dev = np.abs(solve(model, np.array(pre.z0), t, theta, step).states
                 - solve(model, np.array(pre.z0), t, theta, REFERENCE_SOLVER).states).max()
    print(f"RK4 (h = {step.h:.4g}) vs reference: max deviation {dev:.2e}")

    cfg = build_config({"preset": "glycolysis"}, preset_base("glycolysis", desk_scale=True))
    cfg = replace(cfg, sampler=replace(cfg.sampler, warmup=args.warmup, samples=args.samples,
                                       chains=args.chains, seed=args.seed))
    res = fit(obs, cfg)
    write_run(res, obs, cfg, args.out)
    truth = dict(pre.truth, N2_0=pre.z0[model.state_names.index("N2")])
    hits = 0
    for n, v in truth.items():
        s = five_numbers(res.column(n))
        inside = s["min"] <= v <= s["max"]
        hits += inside
        print(f"{n:6s} truth {v:8.3f}  median {s['median']:8.3f}  "
              f"[{s['min']:8.3f}, {s['max']:8.3f}] {'ok' if inside else 'MISS'}")
    print(f"{hits}/{len(truth)} inside min-max, {res.seconds / 60:.1f} min, "
          f"{res.divergences} divergences")


if __name__ == "__main__":
    main()
