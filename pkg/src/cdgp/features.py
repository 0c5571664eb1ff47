"""Random Fourier features for RBF and Matérn covariances."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

MATERN_DEGREES = (0.5, 1.0, 1.5, 2.5)


@dataclass(frozen=True)
class KernelConfig:
    """Covariance family and size of the spectral expansion.

    Kernel hyperparameters (log lengthscale, log amplitude) are trainable and
    live on the layer, not here.
    """

    family: str = "rbf"
    nu: float | None = None
    n_rf: int = 100

    def __post_init__(self):
        if self.family not in ("rbf", "matern"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.family == "matern" and self.nu not in MATERN_DEGREES:
            raise ValueError(f"unsupported Matern degree {self.nu}; choose from {MATERN_DEGREES}")
        if self.n_rf < 1:
            raise ValueError("n_rf must be >= 1")

    @property
    def n_features(self):
        return 2 * self.n_rf


@dataclass(frozen=True)
class SpectralDraws:
    """Standardized spectral frequencies, fixed for the lifetime of a layer."""

    epsilon: np.ndarray  # (n_rf, d_in)
    seed: int

    def frequencies(self, log_lengthscale):
        """Omega = epsilon / exp(lambda); differentiable in ``log_lengthscale``."""
        return self.epsilon * ad.exp(-log_lengthscale) if isinstance(log_lengthscale, ad.Variable) \
            else self.epsilon * np.exp(-np.asarray(log_lengthscale))


def sample_spectral(config: KernelConfig, d_in: int, seed: int) -> SpectralDraws:
    if d_in < 1:
        raise ValueError("d_in must be >= 1")
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((config.n_rf, d_in))
    if config.family == "matern":
        # multivariate Student-t with 2*nu dof; the marginal in 1-D is Student-t(2 nu)
        dof = 2.0 * config.nu
        scale = np.sqrt(rng.chisquare(dof, size=(config.n_rf, 1)) / dof)
        eps = eps / scale
    eps.setflags(write=False)
    return SpectralDraws(eps, seed)


def _scale(log_amplitude, n_rf):
    if isinstance(log_amplitude, ad.Variable):
        return ad.exp(log_amplitude) * (1.0 / np.sqrt(n_rf))
    return np.exp(log_amplitude) / np.sqrt(n_rf)


def features(X, draws: SpectralDraws, log_lengthscale, log_amplitude):
    """Feature map ``sqrt(exp(2 alpha)/N) [cos(X Omega^T), sin(X Omega^T)]``.

    ``X`` may carry leading batch dimensions: shape (..., n, d_in).
    """
    n_rf, d_in = draws.epsilon.shape
    if np.shape(X)[-1] != d_in:
        raise ad.ShapeError(f"features: input has {np.shape(X)[-1]} columns, draws expect {d_in}")
    omega = draws.frequencies(log_lengthscale)
    Z = ad.matmul(X, ad.swapaxes(omega, -1, -2)) if _any_var(X, omega) else X @ omega.T
    scale = _scale(log_amplitude, n_rf)
    if _any_var(Z, scale):
        return ad.concat([ad.cos(Z), ad.sin(Z)], axis=-1) * scale
    return np.concatenate([np.cos(Z), np.sin(Z)], axis=-1) * scale


def features_with_input_derivative(X, dX_dt, draws: SpectralDraws, log_lengthscale, log_amplitude):
    """Return ``(Phi, dPhi_dt)`` where ``dPhi_dt`` is the time derivative given ``dX_dt``."""
    n_rf, d_in = draws.epsilon.shape
    if np.shape(X)[-1] != d_in:
        raise ad.ShapeError(f"features: input has {np.shape(X)[-1]} columns, draws expect {d_in}")
    if np.shape(dX_dt) != np.shape(X):
        raise ad.ShapeError(f"dX_dt shape {np.shape(dX_dt)} differs from X shape {np.shape(X)}")
    omega = draws.frequencies(log_lengthscale)
    scale = _scale(log_amplitude, n_rf)
    if not _any_var(X, dX_dt, omega, scale):
        Z, dZ = X @ omega.T, dX_dt @ omega.T
        c, s = np.cos(Z), np.sin(Z)
        return (np.concatenate([c, s], axis=-1) * scale,
                np.concatenate([-s * dZ, c * dZ], axis=-1) * scale)
    omega_t = ad.swapaxes(ad.as_variable(omega), -1, -2)
    Z = ad.matmul(X, omega_t)
    dZ = ad.matmul(dX_dt, omega_t)
    c, s = ad.cos(Z), ad.sin(Z)
    phi = ad.concat([c, s], axis=-1) * scale
    dphi = ad.concat([-(s * dZ), c * dZ], axis=-1) * scale
    return phi, dphi


def project_with_derivative(X, dX_dt, W, draws: SpectralDraws, log_lengthscale, log_amplitude):
    """``(Phi W, dPhi_dt W)`` without materializing the feature blocks.

    Numerically the same as multiplying the output of
    :func:`features_with_input_derivative` by ``W``.  The work runs in row
    blocks sized to stay in cache, with a hand-written backward pass, so the
    cost per step grows linearly with the number of time points.  The
    amplitude scale is applied after the projection, where the arrays are
    small.
    """
    n_rf, d_in = draws.epsilon.shape
    if np.shape(X)[-1] != d_in:
        raise ad.ShapeError(f"features: input has {np.shape(X)[-1]} columns, draws expect {d_in}")
    if np.shape(dX_dt) != np.shape(X):
        raise ad.ShapeError(f"dX_dt shape {np.shape(dX_dt)} differs from X shape {np.shape(X)}")
    if np.shape(W)[-2] != 2 * n_rf:
        raise ad.ShapeError(f"weights have {np.shape(W)[-2]} rows, expected {2 * n_rf}")
    k = np.shape(W)[-1]
    out = _fused_projection(X, dX_dt, W, draws.frequencies(log_lengthscale))
    scale = _scale(log_amplitude, n_rf)
    U = ad.getitem(out, (..., slice(0, k)))
    dU = ad.getitem(out, (..., slice(k, None)))
    return ad.mul(U, scale), ad.mul(dU, scale)


BLOCK_BYTES = 1 << 20  # per (batch, rows, n_rf) temporary; well inside L2


def _block_rows(batch, n_rf):
    return max(8, BLOCK_BYTES // (8 * max(1, int(np.prod(batch))) * n_rf))


def _fused_projection(X, dX, W, omega):
    """``[c Wc + s Ws, (c dZ) Ws - (s dZ) Wc]`` along the last axis, c/s = cos/sin(X omega^T)."""
    Xv, dXv, Wv, om = (np.asarray(ad._val(a), dtype=float) for a in (X, dX, W, omega))
    R = om.shape[0]
    Wc, Ws = Wv[..., :R, :], Wv[..., R:, :]
    batch = np.broadcast_shapes(Xv.shape[:-2], Wv.shape[:-2])
    n, k = Xv.shape[-2], Wv.shape[-1]
    rows = _block_rows(batch, R)
    out = np.empty(batch + (n, 2 * k))
    for a in range(0, n, rows):
        sl = slice(a, a + rows)
        Z, dZ = Xv[..., sl, :] @ om.T, dXv[..., sl, :] @ om.T
        c, s = np.cos(Z), np.sin(Z)
        out[..., sl, :k] = c @ Wc + s @ Ws
        out[..., sl, k:] = (c * dZ) @ Ws - (s * dZ) @ Wc
    cache = {}

    def grads(g):
        if cache.get("g") is not g:
            cache.clear()
            cache["g"] = g
            cache.update(zip(("X", "dX", "W", "omega"), _fused_backward(g, Xv, dXv, Wc, Ws, om, rows)))
        return cache

    return ad._node(out, [(X, lambda g: ad._unbroadcast(grads(g)["X"], Xv.shape)),
                          (dX, lambda g: ad._unbroadcast(grads(g)["dX"], dXv.shape)),
                          (W, lambda g: ad._unbroadcast(grads(g)["W"], Wv.shape)),
                          (omega, lambda g: grads(g)["omega"])])


def _fused_backward(g, Xv, dXv, Wc, Ws, om, rows):
    k = Wc.shape[-1]
    n = Xv.shape[-2]
    WcT, WsT = np.swapaxes(Wc, -1, -2), np.swapaxes(Ws, -1, -2)
    gX = np.empty(g.shape[:-1] + (Xv.shape[-1],))
    gdX = np.empty_like(gX)
    gWc = gWs = 0.0
    gom = np.zeros_like(om)
    for a in range(0, n, rows):
        sl = slice(a, a + rows)
        Xb, dXb = Xv[..., sl, :], dXv[..., sl, :]
        Z, dZ = Xb @ om.T, dXb @ om.T
        c, s = np.cos(Z), np.sin(Z)
        gU, gdU = g[..., sl, :k], g[..., sl, k:]
        C, D = gdU @ WsT, gdU @ WcT
        gc = gU @ WcT + dZ * C
        gs = gU @ WsT - dZ * D
        gdZ = c * C - s * D
        gZ = c * gs - s * gc
        cT, sT = np.swapaxes(c, -1, -2), np.swapaxes(s, -1, -2)
        gWc = gWc + cT @ gU - (sT * np.swapaxes(dZ, -1, -2)) @ gdU
        gWs = gWs + sT @ gU + (cT * np.swapaxes(dZ, -1, -2)) @ gdU
        gX[..., sl, :] = gZ @ om
        gdX[..., sl, :] = gdZ @ om
        go = np.swapaxes(gZ, -1, -2) @ Xb + np.swapaxes(gdZ, -1, -2) @ dXb
        gom += go.reshape((-1,) + om.shape).sum(axis=0)
    return gX, gdX, np.concatenate([gWc, gWs], axis=-2), gom


def rbf_kernel(x, y, log_lengthscale, log_amplitude):
    """Exact RBF covariance between two points, for checking the expansion."""
    d = np.asarray(x, float) - np.asarray(y, float)
    r2 = np.sum((d / np.exp(log_lengthscale)) ** 2)
    return np.exp(2.0 * log_amplitude) * np.exp(-0.5 * r2)


def _any_var(*xs):
    return any(isinstance(x, ad.Variable) for x in xs)
