"""Lotka-Volterra benchmark: simulate, fit, diagnose and forecast to t = 25.

    python scripts/run_lv.py --out runs/lv [--full] [--seed 0]

Desk scale (500 warmup + 1000 draws) unless ``--full`` is given.
"""
import argparse
import logging

import numpy as np

from gpnode.diagnostics import summarize
from gpnode.dynamics import model_preset
from gpnode.integrate import solve
from gpnode.pipeline.config import build_config, preset_base
from gpnode.pipeline.data import REFERENCE_SOLVER
from gpnode.pipeline.forecast import forecast
from gpnode.pipeline.plots import plot_forecasts
from gpnode.pipeline.presets import get_preset
from gpnode.pipeline.run import fit, write_run

ACTIVE = ("a11", "a13", "a22", "a23")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/lv")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--full", action="store_true", help="4000 warmup + 8000 draws")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    pre = get_preset("lv")
    obs = pre.simulate(seed=args.seed)
    cfg = build_config({"preset": "lv", "seed": str(args.seed)},
                       preset_base("lv", desk_scale=not args.full))
    res = fit(obs, cfg)
    out = write_run(res, obs, cfg, args.out)
    rep = summarize(res.physical, res.names, divergences=res.divergences)
    rep.to_json(out / "report.json")

    print(f"{res.seconds / 60:.1f} min, {res.divergences} divergences")
    for n in res.problem.model.param_names:
        p = rep.params[n]
        flag = "*" if n in ACTIVE else " "
        print(f"{flag} {n:6s} median {p.median:8.4f}  [{p.min:8.4f}, {p.max:8.4f}]  "
              f"R-hat {p.rhat:.3f}  Geweke {p.geweke_z:+.2f}")

    t = np.linspace(0.0, pre.t_max, 200)
    fc = forecast(res.problem, res.merged_model, t, seed=args.seed)
    fc.to_csv(out / "forecast.csv")
    model = model_preset(pre.model)
    theta = np.array([pre.truth[n] for n in model.rhs_param_names])
    truth = solve(model, np.array(pre.z0), t, theta, REFERENCE_SOLVER).states
    plot_forecasts(fc, obs, out, truth=truth)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
