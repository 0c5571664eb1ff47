"""Soft equality and inequality constraints on function derivatives.

Equality constraints tie ``df_i/dt`` to an ODE drift evaluated on the sampled
path; inequality constraints push ``df_i/dt`` above a lower bound through a
logistic likelihood.  Parameters of the drift get a full-covariance Gaussian
variational posterior, sampled with the reparameterization trick.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special

from . import autodiff as ad
from .likelihoods import LOG_2PI
from .ode import OdeSystem

NOISE_MODELS = ("gaussian", "student-t", "logistic")


def default_grid(t_obs, n_uniform=50):
    """Observation times together with ``n_uniform`` evenly spaced points."""
    t_obs = np.asarray(t_obs, dtype=float)
    uniform = np.linspace(t_obs.min(), t_obs.max(), n_uniform) if n_uniform > 0 else []
    return np.unique(np.concatenate([t_obs, uniform]))


@dataclass(frozen=True)
class ConstraintSpec:
    """Which derivatives are constrained, how, and where.

    ``dims`` lists the constrained output dimensions (0-based); every entry is
    a first-order constraint, i.e. the index set is ``{(1, i) for i in dims}``.
    """

    kind: str
    dims: tuple
    grid: np.ndarray = field(repr=False)
    noise: str = "gaussian"
    system: OdeSystem | None = None
    lower_bound: Callable | None = None
    nu: float = 3.0
    psi_d: float = 5.0
    transforms: tuple = ()
    prior_mean: float = 0.0
    prior_std: float = 1.0
    interval: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("equality", "inequality"):
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if self.noise not in NOISE_MODELS:
            raise ValueError(f"unknown constraint noise model {self.noise!r}")
        if self.kind == "equality":
            if self.system is None:
                raise ValueError("equality constraints need an ODE system")
            if self.noise == "logistic":
                raise ValueError("logistic noise applies to inequality constraints only")
            if not self.transforms:
                object.__setattr__(self, "transforms", ("log",) * self.system.param_dim)
            if len(self.transforms) != self.system.param_dim:
                raise ValueError("one transform per ODE parameter is required")
        elif self.noise != "logistic":
            raise ValueError("inequality constraints use the logistic noise model")
        grid = np.asarray(self.grid, dtype=float).reshape(-1)
        if not np.all(np.isfinite(grid)):
            raise ValueError("constraint grid must be finite")
        if self.interval is not None:
            lo, hi = self.interval
            if grid.min() < lo or grid.max() > hi:
                raise ValueError(f"constraint grid leaves the interval [{lo}, {hi}]")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "dims", tuple(int(i) for i in self.dims))

    @property
    def index_set(self):
        return [(1, i) for i in self.dims]

    @property
    def n_theta(self):
        return self.system.param_dim if self.kind == "equality" else 0

    @property
    def has_trainable_noise(self):
        return self.kind == "equality"

    def check_dims(self, s):
        for i in self.dims:
            if not 0 <= i < s:
                raise ValueError(f"constrained dimension {i} outside 0..{s - 1}")
        if self.kind == "equality" and self.system.state_dim != s:
            raise ValueError(f"{self.system.name} has {self.system.state_dim} states, model outputs {s}")


# -- log-densities ---------------------------------------------------------------

def student_t_logpdf(z, mu, log_scale, nu):
    """Normalized Student-t log-density with location ``mu`` and scale ``exp(log_scale)``."""
    scale2 = ad.exp(ad.mul(log_scale, 2.0))
    if np.any(nu * ad._val(scale2) <= 0):
        raise ValueError("Student-t needs nu * scale^2 > 0")
    const = special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2) - 0.5 * np.log(nu * np.pi)
    r = ad.sub(z, mu)
    return const - log_scale - ((nu + 1) / 2) * ad.log(1.0 + ad.square(r) / (nu * scale2))


def gaussian_logpdf(z, mu, log_scale):
    r = ad.sub(z, mu)
    return -0.5 * LOG_2PI - log_scale - ad.square(r) / (2.0 * ad.exp(ad.mul(log_scale, 2.0)))


def drift_targets(spec: ConstraintSpec, F, theta):
    """Drift H(t, f, theta) on the grid; ``theta`` shape (..., p) is broadcast over grid points."""
    if ad._val(theta).ndim > 1:
        theta = ad.reshape(theta, ad._val(theta).shape[:-1] + (1, ad._val(theta).shape[-1])) \
            if isinstance(theta, ad.Variable) else np.asarray(theta)[..., None, :]
    return spec.system.drift(spec.grid, F, theta)


def equality_log_prob(F, dF_dt, theta, spec: ConstraintSpec, log_scale):
    """Sum over grid points and constrained dims of the derivative-mismatch log-density.

    ``F`` and ``dF_dt`` have shape (..., n_grid, s); ``theta`` is in natural
    space with shape (..., p).  ``log_scale`` holds one log noise scale per
    constrained dimension.
    """
    H = drift_targets(spec, F, theta)
    dims = list(spec.dims)
    d = ad.getitem(dF_dt, (..., dims)) if isinstance(dF_dt, ad.Variable) else np.asarray(dF_dt)[..., dims]
    h = ad.getitem(H, (..., dims)) if isinstance(H, ad.Variable) else np.asarray(H)[..., dims]
    if spec.noise == "gaussian":
        terms = gaussian_logpdf(d, h, log_scale)
    else:
        terms = student_t_logpdf(d, h, log_scale, spec.nu)
    return ad.sum(terms, axis=(-2, -1))


def inequality_log_prob(dF_dt, spec: ConstraintSpec):
    """Logistic monotonicity term ``sum -log(1 + exp(-psi (df/dt - lower)))``."""
    dims = list(spec.dims)
    d = ad.getitem(dF_dt, (..., dims)) if isinstance(dF_dt, ad.Variable) else np.asarray(dF_dt)[..., dims]
    if spec.lower_bound is not None:
        d = ad.sub(d, np.asarray(spec.lower_bound(spec.grid), dtype=float).reshape(-1, 1))
    return ad.sum(-ad.softplus(ad.mul(d, -spec.psi_d)), axis=(-2, -1))


# -- variational posterior over constraint parameters ------------------------------

@dataclass
class ThetaPosterior:
    """q(theta) = N(mean, L L^T) over transformed parameters.

    ``L`` is stored as a free strictly-lower part plus a log diagonal so it
    stays a valid Cholesky factor under unconstrained optimization.
    """

    mean: np.ndarray
    log_diag: np.ndarray
    offdiag: np.ndarray
    transforms: tuple
    prior_mean: float = 0.0
    prior_std: float = 1.0
    names: tuple = ()

    @classmethod
    def initial(cls, spec: ConstraintSpec, value=0.1, std=0.1):
        p = spec.n_theta
        mean = np.array([np.log(value) if tr == "log" else value for tr in spec.transforms], dtype=float)
        return cls(mean, np.full(p, np.log(std)), np.zeros((p, p)), tuple(spec.transforms),
                   spec.prior_mean, spec.prior_std, tuple(spec.system.param_names))

    @property
    def dim(self):
        return len(self.mean)

    @property
    def chol(self):
        return cholesky_factor(self.log_diag, self.offdiag)

    @property
    def cov(self):
        L = self.chol
        return L @ L.T

    @property
    def log_mask(self):
        return np.array([tr == "log" for tr in self.transforms], dtype=float)

    def params(self):
        return {"theta.mean": self.mean, "theta.log_diag": self.log_diag, "theta.offdiag": self.offdiag}

    def update(self, params):
        self.mean = np.array(params["theta.mean"])
        self.log_diag = np.array(params["theta.log_diag"])
        self.offdiag = np.array(params["theta.offdiag"])

    def summary(self):
        """Closed-form natural-space mean, std and central 95% interval per parameter."""
        sd = np.sqrt(np.diag(self.cov))
        z = 1.959963984540054
        rows = []
        for k, (mu, s, tr) in enumerate(zip(self.mean, sd, self.transforms)):
            if tr == "log":
                m = np.exp(mu + 0.5 * s * s)
                std = m * np.sqrt(np.expm1(s * s))
                lo, hi = np.exp(mu - z * s), np.exp(mu + z * s)
            else:
                m, std, lo, hi = mu, s, mu - z * s, mu + z * s
            name = self.names[k] if k < len(self.names) else f"theta{k + 1}"
            rows.append({"parameter": name, "mean": float(m), "std": float(std),
                         "q2.5": float(lo), "q97.5": float(hi)})
        return rows

    def natural_mean(self):
        return np.array([r["mean"] for r in self.summary()])


def cholesky_factor(log_diag, offdiag):
    p = ad._val(log_diag).shape[-1]
    lower = np.tril(np.ones((p, p)), -1)
    if isinstance(log_diag, ad.Variable) or isinstance(offdiag, ad.Variable):
        diag = ad.mul(ad.reshape(ad.exp(log_diag), (p, 1)), np.eye(p))
        return ad.add(ad.mul(offdiag, lower), diag)
    return np.asarray(offdiag) * lower + np.diag(np.exp(log_diag))


def sample_theta(mean, chol, transforms, eps):
    """Reparameterized draw ``transform(mean + L eps)``; ``eps`` has shape (..., p)."""
    log_mask = np.array([tr == "log" for tr in transforms], dtype=float)
    if isinstance(mean, ad.Variable) or isinstance(chol, ad.Variable):
        u = ad.add(mean, ad.matmul(eps, ad.swapaxes(ad.as_variable(chol), -1, -2)))
        return ad.add(ad.mul(ad.exp(ad.mul(u, log_mask)), log_mask), ad.mul(u, 1.0 - log_mask))
    u = np.asarray(mean) + np.asarray(eps) @ np.asarray(chol).T
    return np.where(log_mask > 0, np.exp(u * log_mask), u)


def kl_theta(mean, chol, prior_mean=0.0, prior_std=1.0):
    """KL( N(mean, L L^T) || N(prior_mean, prior_std^2 I) ), closed form."""
    diag_idx = np.arange(ad._val(mean).shape[-1])
    diag = ad.getitem(chol, (diag_idx, diag_idx)) if isinstance(chol, ad.Variable) \
        else np.asarray(chol)[diag_idx, diag_idx]
    if np.any(ad._val(diag) <= 0):
        raise ValueError("covariance factor must have a strictly positive diagonal")
    p = len(diag_idx)
    var_p = prior_std ** 2
    trace = ad.sum(ad.square(chol)) / var_p
    maha = ad.sum(ad.square(ad.sub(mean, prior_mean))) / var_p
    logdet = ad.mul(ad.sum(ad.log(diag)), 2.0)
    return 0.5 * (trace + maha - p + p * np.log(var_p) - logdet)
