"""Command line entry point: ``gpnode simulate | fit | forecast | diagnose | pca``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("gpnode")


def _cmd_simulate(args):
    from .pipeline.data import save_dataset
    from .pipeline.presets import get_preset, load_mocap_matrix, mocap_dataset

    if args.preset.startswith("mocap"):
        data = mocap_dataset(load_mocap_matrix(args.matrix))
        save_dataset(data.obs, args.out)
        print(f"wrote {args.out} ({'synthetic' if data.synthetic else 'user'} pose matrix, "
              f"{data.obs.N_v} observations)")
        return 0
    pre = get_preset(args.preset)
    obs = pre.simulate(seed=args.seed, noise_pct=args.noise, mode=args.noise_mode)
    save_dataset(obs, args.out)
    print(f"wrote {args.out} ({obs.N_v} observations)")
    return 0


def _progress(every):
    def cb(chain, i, warmup, info):
        if every and i % every == 0:
            log.info("chain %d %s %d: depth %d, leapfrogs %d", chain,
                     "warmup" if warmup else "draw", i, info["depth"], info["n_leapfrog"])
    return cb


def _cmd_fit(args):
    from dataclasses import replace

    from .pipeline.config import build_config, load_config, preset_base
    from .pipeline.data import ingest
    from .pipeline.run import fit, write_run

    obs = ingest(args.data)
    if args.config:
        cfg = load_config(args.config, desk_scale=args.desk_scale)
    elif args.preset:
        cfg = build_config({"preset": args.preset}, preset_base(args.preset, args.desk_scale))
    else:
        raise SystemExit("fit needs --config or --preset")
    if args.seed is not None:
        cfg = replace(cfg, sampler=replace(cfg.sampler, seed=args.seed))
    res = fit(obs, cfg, callback=_progress(args.progress))
    out = write_run(res, obs, cfg, args.out)
    print(f"{len(res.chains)} chains, {res.merged.shape[0]} draws, {res.divergences} divergences, "
          f"{res.seconds:.1f} s -> {out}")
    return 0


def _truth_paths(run, t):
    """Reference trajectories when the run comes from a simulated preset."""
    from .dynamics import model_preset
    from .integrate import solve
    from .pipeline.data import REFERENCE_SOLVER
    from .pipeline.presets import get_preset

    name = run.cfg.preset
    if name not in ("lv", "glycolysis"):
        return None
    pre = get_preset(name)
    model = model_preset(pre.model)
    theta = np.array([pre.truth[n] for n in model.rhs_param_names])
    grid = np.unique(np.concatenate([[run.obs.t0], t]))
    z = solve(model, np.array(pre.z0), grid, theta, REFERENCE_SOLVER).states
    return z[np.searchsorted(grid, t)]


def _cmd_forecast(args):
    from .pipeline.forecast import forecast
    from .pipeline.plots import plot_forecasts
    from .pipeline.run import load_run

    run = load_run(args.run)
    t = np.linspace(run.obs.t0, args.t_max, args.points)
    res = forecast(run.problem, run.model_draws(), t, n_samples=args.samples, seed=args.seed)
    res.to_csv(args.out)
    plot_dir = Path(args.plots) if args.plots else Path(args.out).parent
    plot_forecasts(res, run.obs, plot_dir, truth=_truth_paths(run, t))
    print(f"wrote {args.out}; {res.n_samples} draws used, {res.n_dropped} dropped")
    return 0


def _cmd_diagnose(args):
    from .diagnostics import summarize
    from .pipeline.run import read_csv, sample_files

    files = list(args.files)
    divergences = 0
    if args.run:
        files += sample_files(args.run)
        meta = Path(args.run) / "run.json"
        if meta.exists():
            divergences = sum(json.loads(meta.read_text()).get("divergences", []))
    if not files:
        raise SystemExit("no sample files given")
    names, chains = None, []
    for f in files:
        names, arr = read_csv(f)
        chains.append(arr)
    report = summarize(chains, names, max_lag=args.max_lag, thin_seed=args.thin_seed,
                       divergences=divergences, classic_rhat=args.classic_rhat)
    report.to_json(args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_pca(args):
    from .pipeline.pca import pca_fit, pca_project
    from .pipeline.presets import load_mocap_matrix

    Y = load_mocap_matrix(args.matrix)
    pmap = pca_fit(Y, args.rank)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "mean.csv", pmap.mean[None], delimiter=",")
    np.savetxt(out / "basis.csv", pmap.basis, delimiter=",")
    np.savetxt(out / "projected.csv", pca_project(pmap, Y), delimiter=",")
    (out / "explained.json").write_text(json.dumps({"explained": pmap.explained.tolist(),
                                                    "eigenvalues": pmap.eigenvalues.tolist()}))
    print(f"explained variance of top {args.rank}: {pmap.explained.sum():.4f}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="gpnode", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("simulate", help="write a synthetic benchmark dataset")
    s.add_argument("--preset", required=True)
    s.add_argument("--noise", type=float, default=None, help="noise level, e.g. 0.10")
    s.add_argument("--noise-mode", default="amplitude", choices=("amplitude", "pointwise"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--matrix", help="pose matrix for mocap presets")
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_simulate)

    f = sub.add_parser("fit", help="sample the posterior")
    f.add_argument("--data", required=True)
    f.add_argument("--config")
    f.add_argument("--preset")
    f.add_argument("--desk-scale", action="store_true")
    f.add_argument("--seed", type=int)
    f.add_argument("--progress", type=int, default=100, help="log every N iterations")
    f.add_argument("--out", required=True)
    f.set_defaults(func=_cmd_fit)

    fc = sub.add_parser("forecast", help="posterior-predictive forecast of a run")
    fc.add_argument("--run", required=True)
    fc.add_argument("--t-max", type=float, required=True)
    fc.add_argument("--points", type=int, default=200)
    fc.add_argument("--samples", type=int, default=500)
    fc.add_argument("--seed", type=int, default=0)
    fc.add_argument("--plots", help="directory for SVG figures (default: next to --out)")
    fc.add_argument("--out", required=True)
    fc.set_defaults(func=_cmd_forecast)

    d = sub.add_parser("diagnose", help="convergence diagnostics")
    d.add_argument("files", nargs="*")
    d.add_argument("--run")
    d.add_argument("--max-lag", type=int, default=50)
    d.add_argument("--thin-seed", type=int, default=0)
    d.add_argument("--classic-rhat", action="store_true")
    d.add_argument("--out", required=True)
    d.set_defaults(func=_cmd_diagnose)

    c = sub.add_parser("pca", help="project a pose matrix")
    c.add_argument("--matrix", required=True)
    c.add_argument("--rank", type=int, default=3)
    c.add_argument("--out", required=True)
    c.set_defaults(func=_cmd_pca)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, RuntimeError, OSError) as exc:
        print(f"gpnode: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
