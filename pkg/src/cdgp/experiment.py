"""Experiment configuration, single-fold runs and result files.

A run is described by :class:`ExperimentConfig`, which round-trips through an
INI file with sections ``[experiment]``, ``[model]``, ``[constraint]`` and
``[train]``.  Every field has a default, so a scenario name alone is runnable.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import os
from dataclasses import dataclass, field

import numpy as np

from .constraints import ConstraintSpec, ThetaPosterior, default_grid
from .dgp import model_from_text, model_to_text, parse_array, parse_kv
from .features import KernelConfig
from .inference import FitResult, TrainConfig, build_model, predict, train
from .ode import TimeSeriesDataset, generate_dataset, get_scenario, monotone_counts

MONOTONE = "monotone-counts"
POSTERIOR_COLUMNS = ["parameter", "mean", "std", "q2.5", "q97.5"]
TRACE_COLUMNS = ["iter", "phase", "elbo", "data_ll", "constraint_ll", "kl_w", "kl_theta"]

_SECTIONS = {
    "experiment": ("scenario", "data", "likelihood", "folds", "seed", "out", "n_samples"),
    "model": ("depth", "hidden_width", "kernel", "nu", "n_rf"),
    "constraint": ("constraint", "constraint_noise", "n_grid", "psi_d"),
}
# INI key -> field name where they differ
_ALIASES = {"kind": "constraint", "noise": "constraint_noise"}


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "lotka-volterra/1"
    data: str | None = None           # CSV with columns t,y1..ys; replaces the scenario data
    likelihood: str = "gaussian"      # for CSV data
    folds: int = 1
    seed: int = 1
    out: str = "out"
    n_samples: int = 100
    depth: int = 2
    hidden_width: int = 2
    kernel: str = "rbf"
    nu: float | None = None
    n_rf: int = 100
    constraint: str = "equality"      # equality, inequality or none
    constraint_noise: str = "student-t"
    n_grid: int = 50
    psi_d: float = 5.0
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.folds < 1:
            raise ValueError("folds must be >= 1")
        if self.constraint not in ("equality", "inequality", "none"):
            raise ValueError(f"unknown constraint kind {self.constraint!r}")
        if self.depth < 1 or self.hidden_width < 1:
            raise ValueError("depth and hidden_width must be >= 1")
        KernelConfig(self.kernel, self.nu, self.n_rf)

    @property
    def kernel_config(self):
        return KernelConfig(self.kernel, self.nu, self.n_rf)

    def fold_seed(self, fold):
        return self.seed + fold

    def replace(self, **changes):
        train_changes = {k: changes.pop(k) for k in list(changes) if k in _TRAIN_FIELDS}
        cfg = dataclasses.replace(self, **changes)
        if train_changes:
            cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, **train_changes))
        return cfg

    # -- INI ---------------------------------------------------------------------

    @classmethod
    def from_ini(cls, text_or_path, base: "ExperimentConfig | None" = None):
        parser = configparser.ConfigParser()
        if os.path.exists(str(text_or_path)):
            with open(text_or_path) as fh:
                parser.read_file(fh)
        else:
            parser.read_string(str(text_or_path))
        cfg = base or cls()
        changes = {}
        for section in parser.sections():
            for key, raw in parser.items(section):
                name = _ALIASES.get(key, key) if section == "constraint" else key
                if section == "train":
                    if name not in _TRAIN_FIELDS:
                        raise ValueError(f"unknown key [train] {key}")
                    changes[name] = _coerce(raw, type(getattr(TrainConfig(), name)))
                elif section in _SECTIONS and name in _SECTIONS[section]:
                    changes[name] = _coerce_field(name, raw)
                elif section == "benchmark":
                    continue
                else:
                    raise ValueError(f"unknown key [{section}] {key}")
        return cfg.replace(**changes)

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        for section, names in _SECTIONS.items():
            inv = {v: k for k, v in _ALIASES.items()} if section == "constraint" else {}
            parser[section] = {inv.get(n, n): "" if getattr(self, n) is None else str(getattr(self, n))
                               for n in names}
        parser["train"] = {f.name: str(getattr(self.train, f.name)) for f in dataclasses.fields(TrainConfig)}
        lines = []
        for section in parser.sections():
            lines.append(f"[{section}]")
            lines += [f"{k} = {v}" for k, v in parser[section].items()]
            lines.append("")
        return "\n".join(lines)


_TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}
_FIELD_TYPES = {"folds": int, "seed": int, "n_samples": int, "depth": int, "hidden_width": int,
                "n_rf": int, "n_grid": int, "psi_d": float, "nu": float}


def _coerce(raw, typ):
    raw = raw.strip()
    if typ is bool:
        return raw.lower() in ("1", "true", "yes", "on")
    return typ(raw)


def _coerce_field(name, raw):
    raw = raw.strip()
    if name in ("nu", "data") and raw in ("", "none", "None"):
        return None
    typ = _FIELD_TYPES.get(name, str)
    return _coerce(raw, typ)


# -- data, model and constraint assembly ----------------------------------------------

@dataclass
class FoldData:
    dataset: TimeSeriesDataset
    theta_true: np.ndarray | None
    system: object


def load_fold_data(cfg: ExperimentConfig, fold: int) -> FoldData:
    seed = cfg.fold_seed(fold)
    if cfg.data:
        ds = TimeSeriesDataset.from_csv(cfg.data, cfg.likelihood)
        system = None if cfg.scenario == MONOTONE else _maybe_system(cfg.scenario)
        return FoldData(ds, None, system)
    if cfg.scenario == MONOTONE:
        return FoldData(monotone_counts(seed=seed), None, None)
    sc = get_scenario(cfg.scenario)
    return FoldData(generate_dataset(sc, seed), np.asarray(sc.theta, float), sc.system)


def _maybe_system(name):
    try:
        return get_scenario(name).system
    except KeyError:
        return None


def build_constraint(cfg: ExperimentConfig, fd: FoldData):
    if cfg.constraint == "none":
        return None
    grid = default_grid(fd.dataset.t, cfg.n_grid)
    dims = tuple(range(fd.dataset.dim))
    if cfg.constraint == "inequality":
        return ConstraintSpec("inequality", dims, grid, "logistic", psi_d=cfg.psi_d)
    if fd.system is None:
        raise ValueError(f"scenario {cfg.scenario!r} has no ODE system for an equality constraint")
    return ConstraintSpec("equality", dims, grid, cfg.constraint_noise, system=fd.system)


# -- fold runs -------------------------------------------------------------------------

@dataclass
class FoldResult:
    fold: int
    seed: int
    fit: FitResult
    data: FoldData
    posterior: list          # rows of POSTERIOR_COLUMNS
    param_rmse: float
    fit_rmse: float
    fit_rmse_observed: float
    fit_rmse_unobserved: float
    positive_fraction: float

    @property
    def seconds(self):
        return self.fit.seconds

    def row(self):
        return {"fold": self.fold, "seed": self.seed, "param_rmse": self.param_rmse, "fit_rmse": self.fit_rmse,
                "fit_rmse_observed": self.fit_rmse_observed, "fit_rmse_unobserved": self.fit_rmse_unobserved}


def parameter_rmse(posterior_rows, theta_true):
    """sqrt(mean over parameters of (posterior mean - truth)^2)."""
    if theta_true is None or not posterior_rows:
        return float("nan")
    means = np.array([float(r["mean"]) for r in posterior_rows])
    return float(np.sqrt(np.mean((means - np.asarray(theta_true, float)) ** 2)))


def trajectory_rmse(mean, truth, columns):
    if truth is None or len(columns) == 0:
        return float("nan")
    return float(np.sqrt(np.mean((mean[:, columns] - truth[:, columns]) ** 2)))


def run_fold(cfg: ExperimentConfig, fold: int = 0) -> FoldResult:
    seed = cfg.fold_seed(fold)
    fd = load_fold_data(cfg, fold)
    ds = fd.dataset
    constraint = build_constraint(cfg, fd)
    model = build_model(ds.dim, cfg.depth, cfg.hidden_width, cfg.kernel_config, seed=seed)
    fit = train(ds, model, constraint, dataclasses.replace(cfg.train, weight_seed=seed))
    pred = predict(model, fit.theta_posterior, ds.t, cfg.n_samples, seed=seed)
    mean = pred.F.mean(axis=0)
    posterior = fit.theta_posterior.summary() if fit.theta_posterior is not None else []
    obs = np.flatnonzero(ds.observed)
    unobs = np.flatnonzero(~ds.observed)
    positive = float("nan")
    if constraint is not None and constraint.kind == "inequality":
        positive = derivative_positive_fraction(model, ds.t, seed)
    return FoldResult(fold, seed, fit, fd, posterior, parameter_rmse(posterior, fd.theta_true),
                      trajectory_rmse(mean, ds.truth, np.arange(ds.dim)),
                      trajectory_rmse(mean, ds.truth, obs), trajectory_rmse(mean, ds.truth, unobs), positive)


def derivative_positive_fraction(model, t_obs, seed, n_grid=200, n_samples=50):
    """Share of sampled df/dt values above zero on an even grid (200 x 50 = 10^4 values by default)."""
    grid = np.linspace(np.min(t_obs), np.max(t_obs), n_grid)
    pred = predict(model, None, grid, n_samples, seed=seed)
    return float(np.mean(pred.dF_dt > 0))


# -- files -------------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, rows, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def read_csv(path, required=()):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = list(reader)
    missing = [c for c in required if c not in header]
    if missing:
        raise ValueError(f"{path}: missing column(s) {', '.join(missing)}")
    return rows


def save_fold(result: FoldResult, out_dir, suffix=""):
    """Write model, trace and posterior summary; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, f"{k}{suffix}.{ext}")
             for k, ext in (("model", "txt"), ("trace", "csv"), ("posterior", "csv"))}
    extra = {}
    fit = result.fit
    if fit.theta_posterior is not None:
        extra.update(fit.theta_posterior.params())
        extra["theta.transforms"] = " ".join(fit.theta_posterior.transforms)
        extra["theta.names"] = " ".join(fit.theta_posterior.names)
        extra["theta.prior"] = f"{fit.theta_posterior.prior_mean!r} {fit.theta_posterior.prior_std!r}"
        extra["constraint.log_scale"] = fit.constraint_log_scale
    with open(paths["model"], "w") as fh:
        fh.write(model_to_text(fit.model, extra))
    write_csv(paths["trace"], fit.trace, TRACE_COLUMNS)
    write_csv(paths["posterior"], result.posterior, POSTERIOR_COLUMNS)
    return paths


def load_model(path):
    """Inverse of the model file written by :func:`save_fold`: (model, theta posterior or None)."""
    with open(path) as fh:
        model, rest = model_from_text(fh.read())
    theta = None
    if "theta.mean" in rest:
        names = tuple(rest.get("theta.names", "").split())
        pm, ps = (float(v) for v in rest.get("theta.prior", "0.0 1.0").split())
        theta = ThetaPosterior(parse_array(rest["theta.mean"]), parse_array(rest["theta.log_diag"]),
                               parse_array(rest["theta.offdiag"]), tuple(rest["theta.transforms"].split()),
                               pm, ps, names)
    return model, theta


__all__ = ["ExperimentConfig", "FoldResult", "run_fold", "save_fold", "load_model", "parameter_rmse",
           "read_csv", "write_csv", "parse_kv", "POSTERIOR_COLUMNS", "TRACE_COLUMNS", "MONOTONE"]
