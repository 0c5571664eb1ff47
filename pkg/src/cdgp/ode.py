"""Benchmark ODE systems, a fixed-step RK4 integrator and dataset generation.

Drift functions are written with plain arithmetic and indexing so the same
code runs on ndarrays (integration) and on autodiff Variables (constraints).
States have shape (..., s) and parameters (..., p), broadcast against each
other.
"""
from __future__ import annotations

import csv
import functools
import re
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class OdeSystem:
    name: str
    state_dim: int
    param_names: tuple
    drift_fn: Callable = field(repr=False)

    @property
    def param_dim(self):
        return len(self.param_names)

    def drift(self, t, x, theta):
        return self.drift_fn(t, x, theta)


def _lotka_volterra(t, x, theta):
    f1, f2 = x[..., 0], x[..., 1]
    a, b, c, d = (theta[..., k] for k in range(4))
    return ad.stack([a * f1 - b * f1 * f2, -c * f2 + d * f1 * f2], axis=-1)


def _fitzhugh_nagumo(t, x, theta):
    # theta = (a, b, c); c is the timescale multiplier
    f1, f2 = x[..., 0], x[..., 1]
    a, b, c = theta[..., 0], theta[..., 1], theta[..., 2]
    return ad.stack([c * (f1 - b * (f1 * f1 * f1) / 3.0 + f2),
                     -(f1 - a + b * f2) / c], axis=-1)


def _biopathways(t, x, theta):
    f1, f2, f3, f4, f5 = (x[..., k] for k in range(5))
    k1, k2, k3, k4, V, Km = (theta[..., k] for k in range(6))
    denom = Km + f5
    if np.any(ad._val(denom) == 0):
        raise ZeroDivisionError("biopathways: Km + f5 = 0 makes the Michaelis-Menten term singular")
    mm = V * f5 / denom
    bind = k2 * f1 * f3
    return ad.stack([
        -k1 * f1 - bind + k3 * f4,
        k1 * f1,
        -bind + k3 * f4 + mm,
        bind - k3 * f4 - k4 * f4,
        k4 * f4 - mm,
    ], axis=-1)


def _lorenz96(t, x, theta):
    s = x.shape[-1]
    idx = np.arange(s)
    ip1, im1, im2 = (idx + 1) % s, (idx - 1) % s, (idx - 2) % s
    return (x[..., ip1] - x[..., im2]) * x[..., im1] - x + theta[..., 0:1]


LOTKA_VOLTERRA = OdeSystem("lotka-volterra", 2, ("alpha", "beta", "gamma", "delta"), _lotka_volterra)
FITZHUGH_NAGUMO = OdeSystem("fhn", 2, ("a", "b", "c"), _fitzhugh_nagumo)
BIOPATHWAYS = OdeSystem("biopathways", 5, ("k1", "k2", "k3", "k4", "V", "Km"), _biopathways)


def lorenz96(s: int) -> OdeSystem:
    if s < 4:
        raise ValueError("Lorenz96 needs at least 4 states")
    return OdeSystem(f"lorenz96/{s}", s, ("theta",), _lorenz96)


def drift(system: OdeSystem, t, x, theta):
    return system.drift(t, x, theta)


class IntegrationError(RuntimeError):
    pass


def integrate_rk4(system: OdeSystem, theta, x0, t_grid, step: float = 1e-3) -> np.ndarray:
    """Classical RK4 from ``t_grid[0]``, landing exactly on every grid time.

    Each interval between consecutive grid times is split into the smallest
    number of equal substeps no longer than ``step``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) < 0):
        raise ValueError("t_grid must be nondecreasing")
    theta = np.asarray(theta, dtype=float)
    x = np.array(x0, dtype=float)
    f = system.drift_fn
    out = np.empty((len(t_grid), x.size))
    out[0] = x
    t = t_grid[0]
    # blow-up is reported below, so overflow warnings are noise
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, len(t_grid)):
            span = t_grid[i] - t_grid[i - 1]
            n_sub = int(np.ceil(span / step - 1e-12)) if span > 0 else 0
            if n_sub:
                h = span / n_sub
                for k in range(n_sub):
                    tk = t_grid[i - 1] + k * h
                    k1 = f(tk, x, theta)
                    k2 = f(tk + 0.5 * h, x + 0.5 * h * k1, theta)
                    k3 = f(tk + 0.5 * h, x + 0.5 * h * k2, theta)
                    k4 = f(tk + h, x + h * k3, theta)
                    x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                if not np.all(np.isfinite(x)):
                    raise IntegrationError(f"{system.name}: state became non-finite before t={t_grid[i]:g}")
            out[i] = x
            t = t_grid[i]
    return out


# -- datasets -----------------------------------------------------------------

@dataclass
class TimeSeriesDataset:
    """Observations ``Y`` (n, s) at times ``t`` (n,).

    ``observed`` flags which columns enter the data likelihood; ``truth`` holds
    the noiseless trajectory when known.
    """

    t: np.ndarray
    Y: np.ndarray
    likelihood: tuple = ()
    observed: np.ndarray | None = None
    truth: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.Y = np.asarray(self.Y, dtype=float)
        if self.Y.ndim == 1:
            self.Y = self.Y[:, None]
        if len(self.t) != len(self.Y):
            raise ValueError(f"{len(self.t)} times but {len(self.Y)} observation rows")
        if not self.likelihood:
            self.likelihood = ("gaussian",) * self.Y.shape[1]
        if self.observed is None:
            self.observed = np.ones(self.Y.shape[1], dtype=bool)
        self.observed = np.asarray(self.observed, dtype=bool)

    @property
    def n(self):
        return len(self.t)

    @property
    def dim(self):
        return self.Y.shape[1]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"y{i + 1}" for i in range(self.dim)])
            for ti, row in zip(self.t, self.Y):
                w.writerow([repr(float(ti))] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, likelihood=None):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2:
            raise ValueError(f"{path}: no data rows")
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
        s = data.shape[1] - 1
        lik = (likelihood,) * s if isinstance(likelihood, str) else tuple(likelihood or ())
        return cls(data[:, 0], data[:, 1:], lik, name=str(path))


@dataclass(frozen=True)
class Scenario:
    name: str
    system: OdeSystem
    theta: tuple
    x0: tuple | None  # None: standard normal per fold
    times: tuple
    noise_std: float
    step: float = 1e-3
    observed_fraction: float = 1.0

    @property
    def t(self):
        return np.asarray(self.times, dtype=float)

    def with_n(self, n: int) -> "Scenario":
        """Same system and interval, ``n`` uniformly spaced observations."""
        t = np.linspace(self.times[0], self.times[-1], n)
        return replace(self, name=f"{self.name}@n={n}", times=tuple(t))


def _uniform(a, b, n):
    return tuple(np.linspace(a, b, n))


_BIO_TIMES = (0, 1, 2, 4, 5, 7, 10, 15, 20, 30, 40, 50, 60, 80, 100)
_LV_THETA = (0.2, 0.35, 0.7, 0.4)
_FHN_THETA = (0.2, 0.2, 3.0)  # (a, b, c)
_BIO_THETA = (0.07, 0.6, 0.05, 0.3, 0.017, 0.3)

SCENARIOS = {
    "lotka-volterra/1": Scenario("lotka-volterra/1", LOTKA_VOLTERRA, _LV_THETA, (1.0, 2.0), _uniform(0, 30, 34), 0.25),
    "lotka-volterra/2": Scenario("lotka-volterra/2", LOTKA_VOLTERRA, _LV_THETA, (1.0, 2.0), _uniform(0, 30, 51), 0.4),
    "fhn/1": Scenario("fhn/1", FITZHUGH_NAGUMO, _FHN_THETA, (-1.0, 1.0), _uniform(0, 20, 401), 0.5),
    "fhn/2": Scenario("fhn/2", FITZHUGH_NAGUMO, _FHN_THETA, (-1.0, 1.0), _uniform(0, 20, 20), 0.5),
    "biopathways/1": Scenario("biopathways/1", BIOPATHWAYS, _BIO_THETA, (1.0, 0.0, 1.0, 0.0, 0.0),
                              tuple(float(v) for v in _BIO_TIMES), float(np.sqrt(0.1))),
    "biopathways/2": Scenario("biopathways/2", BIOPATHWAYS, _BIO_THETA, (1.0, 0.0, 1.0, 0.0, 0.0),
                              tuple(float(v) for v in _BIO_TIMES), float(np.sqrt(0.05))),
}


def get_scenario(name: str) -> Scenario:
    """Look up a scenario; ``lorenz96/<s>`` and ``<name>@n=<n>`` are built on demand."""
    m = re.fullmatch(r"(.+)@n=(\d+)", name)
    if m:
        return get_scenario(m.group(1)).with_n(int(m.group(2)))
    if name in SCENARIOS:
        return SCENARIOS[name]
    m = re.fullmatch(r"lorenz96/(\d+)(/partial)?", name)
    if m:
        s = int(m.group(1))
        return Scenario(name, lorenz96(s), (8.0,), None, _uniform(0, 4, 32), 1.0,
                        observed_fraction=2.0 / 3.0 if m.group(2) else 1.0)
    raise KeyError(f"unknown scenario {name!r}; known: {sorted(SCENARIOS)} and lorenz96/<s>[/partial]")


def unobserved_states(s: int, seed: int | None = None) -> np.ndarray:
    """Indices held out when a third of the states is unobserved.

    Every third index by default; with a seed, a random subset of the same size.
    """
    every_third = np.arange(2, s, 3)
    if seed is None:
        return every_third
    rng = np.random.default_rng(seed)
    return np.sort(rng.permutation(s)[: len(every_third)])


@functools.lru_cache(maxsize=32)
def _fixed_truth(scenario: Scenario) -> np.ndarray:
    return integrate_rk4(scenario.system, scenario.theta, scenario.x0, scenario.t, scenario.step)


def generate_dataset(scenario: Scenario | str, noise_seed: int, noise_std: float | None = None,
                     permute_unobserved: bool = False) -> TimeSeriesDataset:
    if isinstance(scenario, str):
        scenario = get_scenario(scenario)
    rng = np.random.default_rng(noise_seed)
    s = scenario.system.state_dim
    if scenario.x0 is None:
        x0 = rng.standard_normal(s)
        truth = integrate_rk4(scenario.system, scenario.theta, x0, scenario.t, scenario.step)
    else:
        truth = _fixed_truth(scenario).copy()
    sigma = scenario.noise_std if noise_std is None else noise_std
    Y = truth + sigma * rng.standard_normal(truth.shape) if sigma > 0 else truth.copy()
    observed = np.ones(s, dtype=bool)
    if scenario.observed_fraction < 1.0:
        observed[unobserved_states(s, noise_seed if permute_unobserved else None)] = False
    return TimeSeriesDataset(scenario.t, Y, observed=observed, truth=truth, name=scenario.name)


def monotone_counts(n: int = 50, seed: int = 0, a: float = 1.0, b: float = 2.5,
                    steepness: float = 8.0, interval=(0.0, 1.0)) -> TimeSeriesDataset:
    """Synthetic increasing-rate counts, log-rate ``a + b * sigmoid(steepness*(t - mid))``."""
    rng = np.random.default_rng(seed)
    t = np.linspace(interval[0], interval[1], n)
    mid = 0.5 * (interval[0] + interval[1])
    log_rate = a + b / (1.0 + np.exp(-steepness * (t - mid)))
    y = rng.poisson(np.exp(log_rate)).astype(float)
    return TimeSeriesDataset(t, y[:, None], ("poisson",), truth=log_rate[:, None], name="monotone-counts")
