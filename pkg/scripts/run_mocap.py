"""Motion-capture benchmark (case A or B) with frames 35-49 held out.

    python scripts/run_mocap.py --case a [--matrix pose.csv] --out runs/mocap

Without ``--matrix`` (or GPNODE_MOCAP_MATRIX) the bundled synthetic
surrogate is used.
"""
import argparse
import logging
import warnings
from dataclasses import replace

from gpnode.pipeline.config import build_config, preset_base
from gpnode.pipeline.mocap import mocap_rmse
from gpnode.pipeline.presets import load_mocap_matrix, mocap_dataset
from gpnode.pipeline.run import fit, write_run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--case", default="a", choices=("a", "b"))
    ap.add_argument("--matrix")
    ap.add_argument("--out", default="runs/mocap")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--full", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    data = mocap_dataset(load_mocap_matrix(args.matrix))
    name = f"mocap-{args.case}"
    cfg = build_config({"preset": name}, preset_base(name, desk_scale=not args.full))
    cfg = replace(cfg, sampler=replace(cfg.sampler, seed=args.seed))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = fit(data.obs, cfg)
        rep, fc = mocap_rmse(res.problem, data, res.merged_model, n_samples=200, seed=args.seed)
    out = write_run(res, data.obs, cfg, args.out)
    fc.to_csv(out / "forecast_pca.csv")
    src = "synthetic surrogate" if data.synthetic else "user matrix"
    print(f"{src}, case {args.case.upper()}: explained variance "
          f"{data.pmap.explained.sum():.3f}")
    for key in ("fit", "forecast"):
        m, s = rep[key]
        print(f"RMSE {key:8s} {m:.3f} +- {s:.3f}")
    print(f"{res.seconds / 60:.1f} min, {res.divergences} divergences -> {out}")


if __name__ == "__main__":
    main()
