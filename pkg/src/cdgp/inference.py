"""ELBO assembly, Adam and the alternating training schedule."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .constraints import (ConstraintSpec, ThetaPosterior, cholesky_factor, equality_log_prob,
                          inequality_log_prob, kl_theta, sample_theta)
from .dgp import DgpModel, forward_with_derivative, kl_weights, sample_weights
from .features import KernelConfig
from .likelihoods import gaussian_log_lik, poisson_log_lik
from .ode import TimeSeriesDataset

log = logging.getLogger(__name__)

THETA_KEYS = ("theta.mean", "theta.log_diag", "theta.offdiag")
CONSTRAINT_NOISE_KEY = "constraint.log_scale"


class TrainingError(RuntimeError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace or []


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 500          # Adam steps per phase
    rounds: int = 20
    step_size: float = 1e-2        # phase A
    step_size_theta: float = 1e-3  # phase B
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    n_mc: int = 10
    weight_seed: int = 0
    theta_init: float = 0.1
    theta_init_std: float = 0.1
    weight_log_std_init: float = -2.0
    trace_every: int = 10

    def __post_init__(self):
        if min(self.iterations, self.rounds, self.n_mc, self.trace_every) < 1:
            raise ValueError("iteration counts and n_mc must be positive")
        if self.step_size <= 0 or self.step_size_theta <= 0:
            raise ValueError("step sizes must be positive")


@dataclass
class ElboReport:
    elbo: object
    data_ll: float
    constraint_ll: float
    kl_w: float
    kl_theta: float
    iteration: int = 0
    phase: str = ""

    @property
    def value(self):
        return float(ad._val(self.elbo))

    def row(self):
        return {"iter": self.iteration, "phase": self.phase, "elbo": self.value,
                "data_ll": self.data_ll, "constraint_ll": self.constraint_ll,
                "kl_w": self.kl_w, "kl_theta": self.kl_theta}


# -- Adam ------------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state: AdamState, step_size=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam ascent step; returns new params, mutates ``state``."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    out = dict(params)
    for k, g in grads.items():
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(g)
            state.v[k] = np.zeros_like(g)
        v = state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        out[k] = params[k] + step_size * (m / c1) / (np.sqrt(v / c2) + eps)
    return out


# -- objective ------------------------------------------------------------------------

class Objective:
    """Binds a model, data and (optional) constraint into an ELBO over named params.

    The DGP is evaluated once per draw on the union of observation times and
    the constraint grid; rows are then routed to the data and constraint terms.
    """

    def __init__(self, model: DgpModel, dataset: TimeSeriesDataset, constraint: ConstraintSpec | None = None,
                 theta_posterior: ThetaPosterior | None = None):
        self.model = model
        self.data = dataset
        self.constraint = constraint
        self.theta = theta_posterior
        if model.output_dim != dataset.dim:
            raise ValueError(f"model has {model.output_dim} outputs, data has {dataset.dim} columns")
        grid = constraint.grid if constraint is not None else np.empty(0)
        if constraint is not None:
            constraint.check_dims(dataset.dim)
            if constraint.kind == "equality" and theta_posterior is None:
                raise ValueError("equality constraint needs a ThetaPosterior")
        self.times = np.unique(np.concatenate([dataset.t, grid]))
        self.obs_rows = np.searchsorted(self.times, dataset.t)
        self.grid_rows = np.searchsorted(self.times, grid)
        self.obs_cols = np.flatnonzero(dataset.observed)
        lik = np.array(dataset.likelihood)
        self.gauss_cols = np.array([c for c in self.obs_cols if lik[c] == "gaussian"], dtype=int)
        self.poisson_cols = np.array([c for c in self.obs_cols if lik[c] == "poisson"], dtype=int)
        self.Y_gauss = dataset.Y[:, self.gauss_cols]
        self.Y_pois = dataset.Y[:, self.poisson_cols]

    def draw_noise(self, n_mc, seed):
        rng = np.random.default_rng(seed)
        w = self.model.weight_noise(n_mc, rng)
        th = rng.standard_normal((n_mc, self.theta.dim)) if self.uses_theta else None
        return w, th

    @property
    def uses_theta(self):
        return self.constraint is not None and self.constraint.kind == "equality"

    def evaluate(self, params, n_mc, seed, noise=None) -> ElboReport:
        """MC estimate of the ELBO; differentiable w.r.t. any Variable in ``params``."""
        w_noise, th_noise = self.draw_noise(n_mc, seed) if noise is None else noise
        W = sample_weights(self.model, w_noise, params)
        path = forward_with_derivative(self.model, self.times, W, params)
        F, dF = path.F, path.dF_dt

        data_ll = 0.0
        if self.gauss_cols.size:
            Fo = ad.getitem(F, (slice(None), self.obs_rows[:, None], self.gauss_cols[None, :]))
            sigma = ad.getitem(params["likelihood.log_noise"], self.gauss_cols)
            data_ll = ad.add(data_ll, gaussian_log_lik(self.Y_gauss, Fo, sigma))
        if self.poisson_cols.size:
            Fo = ad.getitem(F, (slice(None), self.obs_rows[:, None], self.poisson_cols[None, :]))
            data_ll = ad.add(data_ll, poisson_log_lik(self.Y_pois, Fo))
        data_ll = ad.mul(ad.sum(data_ll), 1.0 / n_mc)

        con_ll, klt = 0.0, 0.0
        c = self.constraint
        if c is not None and c.dims:
            Fg = ad.getitem(F, (slice(None), self.grid_rows))
            dFg = ad.getitem(dF, (slice(None), self.grid_rows))
            if c.kind == "equality":
                L = cholesky_factor(params["theta.log_diag"], params["theta.offdiag"])
                theta = sample_theta(params["theta.mean"], L, c.transforms, th_noise)
                con_ll = equality_log_prob(Fg, dFg, theta, c, params[CONSTRAINT_NOISE_KEY])
                klt = kl_theta(params["theta.mean"], L, c.prior_mean, c.prior_std)
            else:
                con_ll = inequality_log_prob(dFg, c)
            con_ll = ad.mul(ad.sum(con_ll), 1.0 / n_mc)
        elif self.uses_theta:
            L = cholesky_factor(params["theta.log_diag"], params["theta.offdiag"])
            klt = kl_theta(params["theta.mean"], L, c.prior_mean, c.prior_std)

        klw = kl_weights(self.model, params)
        total = ad.sub(ad.sub(ad.add(data_ll, con_ll), klw), klt)
        return ElboReport(total, float(ad._val(data_ll)), float(ad._val(con_ll)),
                          float(ad._val(klw)), float(ad._val(klt)))


def elbo_estimate(model, dataset, constraint=None, theta_posterior=None, n_mc=10, seed=0,
                  params=None, constraint_log_scale=None) -> ElboReport:
    """Convenience wrapper around :class:`Objective` using the stored parameter values."""
    obj = Objective(model, dataset, constraint, theta_posterior)
    values = all_params(model, theta_posterior, constraint_log_scale) if params is None else params
    return obj.evaluate(values, n_mc, seed)


def all_params(model, theta_posterior=None, constraint_log_scale=None):
    out = dict(model.params)
    if theta_posterior is not None:
        out.update(theta_posterior.params())
    if constraint_log_scale is not None:
        out[CONSTRAINT_NOISE_KEY] = np.asarray(constraint_log_scale, dtype=float)
    return out


# -- initialization --------------------------------------------------------------------

def _latent_targets(dataset):
    """Observed values mapped to the latent scale (log for count columns)."""
    cols = []
    for c in np.flatnonzero(dataset.observed):
        y = dataset.Y[:, c]
        cols.append(np.log(y + 0.5) if dataset.likelihood[c] == "poisson" else y)
    return np.concatenate(cols) if cols else np.zeros(1)


def initialize(model: DgpModel, dataset: TimeSeriesDataset, constraint: ConstraintSpec | None,
               config: TrainConfig):
    """Set starting values; returns (theta_posterior or None, constraint log scale or None)."""
    t_range = float(np.ptp(dataset.t)) or 1.0
    y = _latent_targets(dataset)
    y_range = float(np.ptp(y)) or 1.0
    alpha0 = np.log(y_range)
    noise_var0 = alpha0 / 1e5 if alpha0 > 0 else y_range ** 2 * 1e-5
    for layer in model.layers:
        p = model.params
        p[layer.key("log_lengthscale")] = np.full_like(p[layer.key("log_lengthscale")], np.log(t_range))
        p[layer.key("log_amplitude")] = np.array(alpha0)
        shape = p[layer.key("weight_mean")].shape
        # zero means start every layer at the prior mean path; random means
        # put the first fit far from the data and the drift far from theta
        p[layer.key("weight_mean")] = np.zeros(shape)
        p[layer.key("weight_log_std")] = np.full(shape, config.weight_log_std_init)
    model.params["likelihood.log_noise"] = np.full(model.output_dim, 0.5 * np.log(noise_var0))
    theta_post, log_scale = None, None
    if constraint is not None and constraint.kind == "equality":
        theta_post = ThetaPosterior.initial(constraint, config.theta_init, config.theta_init_std)
        # typical derivative magnitude of the data
        log_scale = np.full(len(constraint.dims), np.log(y_range / t_range))
    return theta_post, log_scale


# -- training -------------------------------------------------------------------------

@dataclass
class FitResult:
    model: DgpModel
    theta_posterior: ThetaPosterior | None
    constraint_log_scale: np.ndarray | None
    constraint: ConstraintSpec | None
    trace: list
    seconds: float = 0.0

    def params(self):
        return all_params(self.model, self.theta_posterior, self.constraint_log_scale)


def _phase_keys(model, objective):
    a = model.layer_keys()
    if objective.gauss_cols.size:
        a.append("likelihood.log_noise")
    b = []
    if objective.uses_theta:
        b = [CONSTRAINT_NOISE_KEY, *THETA_KEYS]
    return a, b


def _step_seed(base, phase, it):
    return np.random.SeedSequence([base, phase, it])


def train(dataset: TimeSeriesDataset, model: DgpModel, constraint: ConstraintSpec | None = None,
          config: TrainConfig = TrainConfig(), callback=None) -> FitResult:
    """Alternate Adam phases over (q(W), kernel and noise params) and (psi_D, q(theta))."""
    if dataset.n == 0:
        raise ValueError("empty dataset")
    theta_post, log_scale = initialize(model, dataset, constraint, config)
    obj = Objective(model, dataset, constraint, theta_post)
    params = all_params(model, theta_post, log_scale)
    keys_a, keys_b = _phase_keys(model, obj)
    phases = [("A", keys_a, config.step_size)]
    if keys_b:
        phases.append(("B", keys_b, config.step_size_theta))
    states = {name: AdamState() for name, _, _ in phases}
    trace = []
    it_global = 0
    start = time.monotonic()
    for rnd in range(config.rounds):
        for pi, (name, keys, lr) in enumerate(phases):
            for it in range(config.iterations):
                live = {k: ad.Variable(params[k], requires_grad=True) for k in keys}
                values = {**params, **live}
                with np.errstate(over="ignore", invalid="ignore"):
                    rep = obj.evaluate(values, config.n_mc, _step_seed(config.weight_seed, pi, it_global))
                val = rep.value
                if not np.isfinite(val):
                    raise TrainingError(f"non-finite ELBO at iteration {it_global} (phase {name})", trace)
                rep.elbo.backward()
                grads = {k: (np.zeros_like(params[k]) if v.grad is None else v.grad) for k, v in live.items()}
                params = adam_step(params, grads, states[name], lr, config.beta1, config.beta2, config.eps)
                if it_global % config.trace_every == 0:
                    rep.iteration, rep.phase = it_global, name
                    trace.append(rep.row())
                    if callback is not None:
                        callback(rep)
                it_global += 1
        log.debug("round %d elbo %.3f", rnd, trace[-1]["elbo"] if trace else float("nan"))
    seconds = time.monotonic() - start
    for k in model.params:
        model.params[k] = params[k]
    if theta_post is not None:
        theta_post.update(params)
        log_scale = params[CONSTRAINT_NOISE_KEY]
    return FitResult(model, theta_post, log_scale, constraint, trace, seconds)


# -- prediction ---------------------------------------------------------------------------

@dataclass
class Prediction:
    t: np.ndarray
    F: np.ndarray       # (n_samples, n, s)
    dF_dt: np.ndarray
    theta: np.ndarray | None

    def summary(self, which="F"):
        arr = self.F if which == "F" else self.dF_dt
        return {"mean": arr.mean(axis=0),
                "lower": np.percentile(arr, 2.5, axis=0),
                "upper": np.percentile(arr, 97.5, axis=0)}


def predict(model: DgpModel, theta_posterior: ThetaPosterior | None, t_star, n_samples=100, seed=0) -> Prediction:
    t_star = np.asarray(t_star, dtype=float).reshape(-1)
    if not np.all(np.isfinite(t_star)):
        raise ValueError("prediction times must be finite")
    rng = np.random.default_rng(seed)
    W = sample_weights(model, model.weight_noise(n_samples, rng))
    path = forward_with_derivative(model, t_star, W)
    theta = None
    if theta_posterior is not None:
        eps = rng.standard_normal((n_samples, theta_posterior.dim))
        theta = sample_theta(theta_posterior.mean, theta_posterior.chol, theta_posterior.transforms, eps)
    return Prediction(t_star, ad._val(path.F), ad._val(path.dF_dt), theta)


def build_model(dataset_dim, depth=2, hidden_width=2, kernel: KernelConfig | None = None, seed=0):
    """Default architecture: ``depth - 1`` hidden layers of ``hidden_width`` then the output layer."""
    widths = [hidden_width] * (depth - 1) + [dataset_dim]
    return DgpModel(widths, kernel or KernelConfig(), seed=seed)
