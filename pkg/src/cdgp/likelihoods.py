"""Observation models linking latent function values to data.

All functions sum over the trailing (n, d) axes and keep any leading batch
(Monte Carlo) axes, so they return a scalar for unbatched input.
"""
from __future__ import annotations

import numpy as np
from scipy import special

from . import autodiff as ad

LOG_2PI = float(np.log(2.0 * np.pi))


def gaussian_log_lik(Y, F, log_sigma):
    """Independent Gaussian noise with one log standard deviation per column."""
    r = ad.sub(Y, F)
    var = ad.exp(ad.mul(log_sigma, 2.0))
    terms = ad.sub(-0.5 * LOG_2PI, log_sigma) - ad.square(r) / (2.0 * var)
    return ad.sum(terms, axis=(-2, -1))


def check_counts(y):
    y = np.asarray(y, dtype=float)
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise ValueError("Poisson observations must be nonnegative integers")
    return y


def poisson_log_lik(y, f):
    """Poisson counts with log link: ``sum(y f - exp(f) - log y!)``."""
    y = check_counts(y)
    terms = ad.sub(ad.mul(y, f), ad.exp(f)) - special.gammaln(y + 1.0)
    return ad.sum(terms, axis=(-2, -1))
