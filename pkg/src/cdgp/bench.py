"""Benchmark suites: repeated folds over scenarios and architectures.

Each suite expands into independent jobs (one fold of one configuration),
runs them with up to ``jobs`` worker processes and writes a report CSV whose
rows are ordered by job, never by completion time.  Wall-clock seconds go to
a separate ``timings.csv`` so the report itself is reproducible byte for byte;
the ``scaling-n`` suite reports seconds because timing is its output.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .experiment import ExperimentConfig, run_fold, save_fold, write_csv
from .plots import plot

SUITES = ("ode-rmse", "deep-vs-shallow", "scaling-n", "lorenz96")
ODE_SCENARIOS = ("lotka-volterra/1", "lotka-volterra/2", "fhn/1", "fhn/2", "biopathways/1", "biopathways/2")
METHODS = {"dgp-t": "student-t", "dgp-g": "gaussian"}
SCALING_N = (20, 40, 80, 150, 500, 1000, 4000)
ARCHITECTURES = (  # label, depth, kernel, nu
    ("rbf-1", 1, "rbf", None), ("rbf-2", 2, "rbf", None), ("rbf-3", 3, "rbf", None),
    ("matern-0.5", 1, "matern", 0.5), ("matern-1", 1, "matern", 1.0),
    ("matern-1.5", 1, "matern", 1.5), ("matern-2.5", 1, "matern", 2.5),
)


@dataclass(frozen=True)
class Job:
    label: dict           # identifying columns for the report row
    config: ExperimentConfig
    fold: int


REPORT_COLUMNS = {
    "ode-rmse": ["scenario", "method", "group", "fold", "seed", "param_rmse", "fit_rmse"],
    "deep-vs-shallow": ["n", "architecture", "group", "fold", "seed", "param_rmse", "fit_rmse"],
    "scaling-n": ["n", "fold", "seed", "seconds", "param_rmse", "fit_rmse"],
    "lorenz96": ["protocol", "group", "fold", "seed", "param_rmse", "fit_rmse_observed", "fit_rmse_unobserved"],
}


def expand(suite, base: ExperimentConfig, folds=5, scenarios=None, n_values=None, lorenz_dim=50):
    """List the jobs of ``suite``; ``base`` carries the training settings and seed."""
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    jobs = []
    if suite == "ode-rmse":
        for sc in scenarios or ODE_SCENARIOS:
            for method, noise in METHODS.items():
                cfg = base.replace(scenario=sc, constraint="equality", constraint_noise=noise, folds=folds)
                jobs += [Job({"scenario": sc, "method": method, "group": f"{sc} {method}"}, cfg, k)
                         for k in range(folds)]
    elif suite == "deep-vs-shallow":
        for n in n_values or (80, 1000):
            for label, depth, kern, nu in ARCHITECTURES:
                cfg = base.replace(scenario=f"fhn/1@n={n}", depth=depth, kernel=kern, nu=nu,
                                   constraint="equality", folds=folds)
                jobs += [Job({"n": n, "architecture": label, "group": f"n={n} {label}"}, cfg, k)
                         for k in range(folds)]
    elif suite == "scaling-n":
        for n in n_values or SCALING_N:
            cfg = base.replace(scenario=f"lotka-volterra/1@n={n}", constraint="equality", folds=folds)
            jobs += [Job({"n": n}, cfg, k) for k in range(folds)]
    else:
        for protocol, name in (("full", f"lorenz96/{lorenz_dim}"), ("partial", f"lorenz96/{lorenz_dim}/partial")):
            cfg = base.replace(scenario=name, constraint="equality", folds=folds)
            jobs += [Job({"protocol": protocol, "group": protocol}, cfg, k) for k in range(folds)]
    return jobs


def _run_job(job: Job, out_dir=None):
    res = run_fold(job.config, job.fold)
    if out_dir:
        tag = "_".join(str(v).replace("/", "-").replace(" ", "_") for k, v in job.label.items() if k != "group")
        save_fold(res, os.path.join(out_dir, "folds"), suffix=f"_{tag}_fold{job.fold}")
    row = dict(job.label)
    row.update(res.row())
    row["seconds"] = res.seconds
    return row


def run_jobs(jobs, n_jobs=1, out_dir=None):
    if n_jobs <= 1 or len(jobs) <= 1:
        return [_run_job(j, out_dir) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        futures = [pool.submit(_run_job, j, out_dir) for j in jobs]
        return [f.result() for f in futures]


def run_suite(suite, base: ExperimentConfig, out_dir, n_jobs=1, folds=5, **kw):
    """Run a suite and write ``report.csv`` (+ ``timings.csv`` and an SVG); returns the rows."""
    jobs = expand(suite, base, folds=folds, **kw)
    os.makedirs(out_dir, exist_ok=True)
    rows = run_jobs(jobs, n_jobs, out_dir)
    report = os.path.join(out_dir, "report.csv")
    write_csv(report, rows, REPORT_COLUMNS[suite])
    label_cols = [c for c in REPORT_COLUMNS[suite] if c in jobs[0].label] + ["fold", "seed"]
    write_csv(os.path.join(out_dir, "timings.csv"), rows, label_cols + ["seconds"])
    if suite == "scaling-n":
        plot("scaling", report, os.path.join(out_dir, "scaling.svg"))
    else:
        boxes = os.path.join(out_dir, "boxplot.csv")
        if suite == "lorenz96":
            # one box per protocol and state class; the value column keeps the plot schema
            box_rows = [{"group": f"{r['group']} {which}", "param_rmse": r[f"fit_rmse_{which}"]}
                        for r in rows for which in ("observed", "unobserved")]
        else:
            box_rows = [{"group": r["group"], "param_rmse": r["param_rmse"]} for r in rows]
        box_rows = [b for b in box_rows if np.isfinite(b["param_rmse"])]
        write_csv(boxes, box_rows, ["group", "param_rmse"])
        if box_rows:
            plot("boxplot", boxes, os.path.join(out_dir, "boxplot.svg"))
    return rows


def summarize(suite, rows):
    """Per-group medians printed by the CLI."""
    key = "group" if suite != "scaling-n" else "n"
    out = {}
    for r in rows:
        out.setdefault(r[key], []).append(r)
    lines = []
    for g, rs in out.items():
        if suite == "scaling-n":
            lines.append(f"n={g}: {np.median([r['seconds'] for r in rs]):.2f} s")
        elif suite == "lorenz96":
            lines.append(f"{g}: observed {np.median([r['fit_rmse_observed'] for r in rs]):.3f} "
                         f"unobserved {np.median([r['fit_rmse_unobserved'] for r in rs]):.3f}")
        else:
            lines.append(f"{g}: param rmse {np.median([r['param_rmse'] for r in rs]):.3f} "
                         f"fit rmse {np.median([r['fit_rmse'] for r in rs]):.3f}")
    return lines
