"""Command-line entry point: generate, fit, predict, benchmark, plot.

Exit status is 0 on success, 1 when a run fails (training abort, bad data,
unwritable output) and 2 for bad usage (unknown scenario, suite or option).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import bench
from .experiment import (MONOTONE, ExperimentConfig, load_model, run_fold, save_fold, write_csv)
from .inference import TrainingError, predict
from .ode import generate_dataset, get_scenario, integrate_rk4
from .plots import PLOT_COLUMNS, plot

log = logging.getLogger("cdgp")


class UsageError(Exception):
    pass


def _slug(name):
    return name.replace("/", "-").replace("@", "_").replace("=", "")


def _load_config(args, **overrides):
    cfg = ExperimentConfig.from_ini(args.config) if args.config else ExperimentConfig()
    if getattr(args, "scenario", None):
        overrides["scenario"] = args.scenario
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    return cfg.replace(**overrides)


# -- subcommands -------------------------------------------------------------------------

def cmd_generate(args):
    try:
        sc = get_scenario(args.scenario)
    except KeyError as e:
        raise UsageError(str(e.args[0])) from None
    seed = 1 if args.seed is None else args.seed
    out = args.out or f"{_slug(args.scenario)}_seed{seed}.csv"
    ds = generate_dataset(sc, seed)
    parent = os.path.dirname(os.path.abspath(out))
    os.makedirs(parent, exist_ok=True)
    ds.to_csv(out)
    print(f"wrote {ds.n} rows x {ds.dim} columns to {out}")
    return 0


def _fit_one(cfg, fold):
    res = run_fold(cfg, fold)
    suffix = "" if cfg.folds == 1 else f"_fold{fold}"
    paths = save_fold(res, cfg.out, suffix)
    if fold == 0:
        write_csv(os.path.join(cfg.out, "trajectories.csv"), *_trajectory_table(cfg, res))
    return res.row() | {"positive_fraction": res.positive_fraction}, res.seconds, paths


def _trajectory_table(cfg, res, n_grid=200, n_paths=10):
    """Dense posterior paths, observations and (when known) the true trajectory."""
    ds = res.data.dataset
    grid = np.linspace(ds.t.min(), ds.t.max(), n_grid)
    t = np.unique(np.concatenate([grid, ds.t]))
    pred = predict(res.fit.model, None, t, n_paths, seed=res.seed)
    truth = None
    if cfg.data is None and cfg.scenario != MONOTONE:
        sc = get_scenario(cfg.scenario)
        x0 = sc.x0 if sc.x0 is not None else ds.truth[0]
        truth = integrate_rk4(sc.system, sc.theta, x0, t, sc.step)
    obs = np.full((len(t), ds.dim), np.nan)
    obs[np.searchsorted(t, ds.t)] = ds.Y
    rows, cols = [], ["t"]
    for i in range(ds.dim):
        cols.append(f"obs{i + 1}")
        if truth is not None:
            cols.append(f"truth{i + 1}")
        cols += [f"path{j + 1}_{i + 1}" for j in range(n_paths)]
    for r, tr in enumerate(t):
        row = {"t": float(tr)}
        for i in range(ds.dim):
            row[f"obs{i + 1}"] = float(obs[r, i])
            if truth is not None:
                row[f"truth{i + 1}"] = float(truth[r, i])
            for j in range(n_paths):
                row[f"path{j + 1}_{i + 1}"] = float(pred.F[j, r, i])
        rows.append(row)
    return rows, cols


def cmd_fit(args):
    cfg = _load_config(args)
    try:
        if cfg.data is None and cfg.scenario != MONOTONE:
            get_scenario(cfg.scenario)
    except KeyError as e:
        raise UsageError(str(e.args[0])) from None
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "config.ini"), "w") as fh:
        fh.write(cfg.to_ini())
    folds = range(cfg.folds)
    if args.jobs > 1 and cfg.folds > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_fit_one, [cfg] * cfg.folds, folds))
    else:
        results = [_fit_one(cfg, k) for k in folds]
    rows = [r for r, _, _ in results]
    cols = ["fold", "seed", "param_rmse", "fit_rmse", "fit_rmse_observed", "fit_rmse_unobserved",
            "positive_fraction"]
    write_csv(os.path.join(cfg.out, "summary.csv"), rows, cols)
    write_csv(os.path.join(cfg.out, "timings.csv"),
              [{"fold": r["fold"], "seconds": s} for r, s, _ in results], ["fold", "seconds"])
    for r, s, paths in results:
        msg = f"fold {r['fold']} (seed {r['seed']}): {s:.1f} s, model {paths['model']}"
        if np.isfinite(r["param_rmse"]):
            msg += f", parameter rmse {r['param_rmse']:.4f}"
        if np.isfinite(r["positive_fraction"]):
            msg += f", positive derivative share {r['positive_fraction']:.4f}"
        print(msg)
    return 0


def _parse_times(spec):
    if ":" in spec:
        a, b, n = spec.split(":")
        return np.linspace(float(a), float(b), int(n))
    return np.array([float(v) for v in spec.split(",")])


def cmd_predict(args):
    model, theta = load_model(args.model)
    try:
        t = _parse_times(args.times)
    except ValueError:
        raise UsageError(f"bad --times {args.times!r}; use a:b:n or a comma list") from None
    seed = 0 if args.seed is None else args.seed
    pred = predict(model, theta, t, args.samples, seed=seed)
    cols, rows = ["t"], []
    for i in range(model.output_dim):
        cols += [f"f{i + 1}_mean", f"f{i + 1}_q2.5", f"f{i + 1}_q97.5",
                 f"df{i + 1}_mean", f"df{i + 1}_q2.5", f"df{i + 1}_q97.5"]
    f, d = pred.summary("F"), pred.summary("dF")
    for r, tr in enumerate(t):
        row = {"t": float(tr)}
        for i in range(model.output_dim):
            row.update({f"f{i + 1}_mean": float(f["mean"][r, i]), f"f{i + 1}_q2.5": float(f["lower"][r, i]),
                        f"f{i + 1}_q97.5": float(f["upper"][r, i]), f"df{i + 1}_mean": float(d["mean"][r, i]),
                        f"df{i + 1}_q2.5": float(d["lower"][r, i]), f"df{i + 1}_q97.5": float(d["upper"][r, i])})
        rows.append(row)
    out = args.out or "prediction.csv"
    write_csv(out, rows, cols)
    print(f"wrote {len(rows)} prediction rows to {out}")
    return 0


def cmd_benchmark(args):
    base = ExperimentConfig.from_ini(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        base = base.replace(seed=args.seed)
    out = args.out or os.path.join("bench", args.suite)
    kw = {}
    if args.n_values:
        kw["n_values"] = [int(v) for v in args.n_values.split(",")]
    if args.scenarios:
        kw["scenarios"] = args.scenarios.split(",")
    if args.suite == "lorenz96":
        kw["lorenz_dim"] = args.lorenz_dim
    rows = bench.run_suite(args.suite, base, out, n_jobs=args.jobs, folds=args.folds, **kw)
    for line in bench.summarize(args.suite, rows):
        print(line)
    print(f"report: {os.path.join(out, 'report.csv')}")
    return 0


def cmd_plot(args):
    out = args.out or os.path.splitext(args.csv)[0] + ".svg"
    plot(args.kind, args.csv, out)
    print(f"wrote {out}")
    return 0


# -- parser --------------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="base seed (fold k uses seed + k)")
    common.add_argument("--config", default=None, help="INI file with [experiment], [model], [constraint], [train]")
    common.add_argument("--out", default=None, help="output file or directory")
    common.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cdgp", description="Constrained deep GPs with random features.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="simulate a benchmark dataset to CSV")
    g.add_argument("scenario", help="e.g. lotka-volterra/1, fhn/2, biopathways/1, lorenz96/125[/partial]")
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", parents=[common], help="train a model; writes model, trace and posterior files")
    f.add_argument("scenario", nargs="?", default=None, help="overrides [experiment] scenario")
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("predict", parents=[common], help="posterior summaries of f and df/dt")
    r.add_argument("model", help="model file written by fit")
    r.add_argument("--times", required=True, help="a:b:n for an even grid, or a comma list")
    r.add_argument("--samples", type=int, default=100)
    r.set_defaults(func=cmd_predict)

    b = sub.add_parser("benchmark", parents=[common], help="run a benchmark suite")
    b.add_argument("suite", choices=bench.SUITES)
    b.add_argument("--folds", type=int, default=5)
    b.add_argument("--n-values", default=None, help="comma list overriding the suite's sample sizes")
    b.add_argument("--scenarios", default=None, help="comma list for ode-rmse")
    b.add_argument("--lorenz-dim", type=int, default=50)
    b.set_defaults(func=cmd_benchmark)

    q = sub.add_parser("plot", parents=[common], help="render a result CSV as SVG")
    q.add_argument("kind", choices=sorted(PLOT_COLUMNS))
    q.add_argument("csv")
    q.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except TrainingError as e:
        print(f"training aborted: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
