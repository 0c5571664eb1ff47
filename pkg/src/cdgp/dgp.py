"""Deep GP built from random-feature layers, with exact time derivatives.

Each layer maps ``U -> Phi(U) W`` where ``Phi`` are random Fourier features
with fixed spectral draws and ``W`` has a fully factorized Gaussian
variational posterior.  Time derivatives are carried alongside the values by
the chain rule, so a sampled path and its derivative share the same weights.

Trainable values live in ``DgpModel.params`` (a flat name -> array mapping)
so the optimizer and serializer can treat them uniformly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .features import KernelConfig, SpectralDraws, project_with_derivative, sample_spectral


@dataclass(frozen=True)
class Layer:
    index: int
    kernel: KernelConfig
    draws: SpectralDraws
    d_in: int
    d_out: int

    def key(self, name):
        return f"layer{self.index}.{name}"


@dataclass
class PathSample:
    weights: list
    values: list
    F: object
    dF_dt: object


class DgpModel:
    """An ordered stack of random-feature GP layers plus per-output noise.

    Parameters
    ----------
    widths : sequence of int
        Layer output sizes; the last entry is the number of outputs ``s``.
    kernels : KernelConfig or sequence of KernelConfig
        One config shared by all layers, or one per layer.
    seed : int
        Seed for the spectral draws of layer ``l`` is ``seed + l``.
    """

    def __init__(self, widths, kernels=None, seed=0, d_in=1):
        widths = [int(w) for w in widths]
        if not widths or min(widths) < 1:
            raise ValueError("widths must be a nonempty list of positive ints")
        if kernels is None:
            kernels = KernelConfig()
        if isinstance(kernels, KernelConfig):
            kernels = [kernels] * len(widths)
        if len(kernels) != len(widths):
            raise ValueError("need one kernel config per layer")
        self.seed = seed
        self.layers = []
        self.params = {}
        dims = [d_in] + widths
        for l, (kern, a, b) in enumerate(zip(kernels, dims[:-1], dims[1:])):
            layer = Layer(l, kern, sample_spectral(kern, a, seed + l), a, b)
            self.layers.append(layer)
            self.params[layer.key("log_lengthscale")] = np.zeros(a) if a > 1 else np.array(0.0)
            self.params[layer.key("log_amplitude")] = np.array(0.0)
            self.params[layer.key("weight_mean")] = np.zeros((kern.n_features, b))
            self.params[layer.key("weight_log_std")] = np.full((kern.n_features, b), -2.0)
        self.params["likelihood.log_noise"] = np.zeros(widths[-1])

    @property
    def depth(self):
        return len(self.layers)

    @property
    def output_dim(self):
        return self.layers[-1].d_out

    @property
    def widths(self):
        return [layer.d_out for layer in self.layers]

    def layer_keys(self):
        return [k for k in self.params if k.startswith("layer")]

    def n_weights(self):
        return sum(self.params[l.key("weight_mean")].size for l in self.layers)

    # -- sampling -------------------------------------------------------------

    def weight_noise(self, n_samples, rng):
        """Standard normal draws, one (n_samples, 2N, d_out) block per layer."""
        return [rng.standard_normal((n_samples, l.kernel.n_features, l.d_out)) for l in self.layers]


def sample_weights(model: DgpModel, noise, params=None):
    """``W = m + exp(log s) * eps`` per layer; ``noise`` comes from ``model.weight_noise``
    or is an integer seed."""
    params = model.params if params is None else params
    if isinstance(noise, (int, np.integer)):
        noise = model.weight_noise(1, np.random.default_rng(noise))
    out = []
    for layer, eps in zip(model.layers, noise):
        m = params[layer.key("weight_mean")]
        log_s = params[layer.key("weight_log_std")]
        if isinstance(m, ad.Variable) or isinstance(log_s, ad.Variable):
            out.append(ad.add(m, ad.mul(ad.exp(log_s), eps)))
        else:
            out.append(m + np.exp(log_s) * eps)
    return out


def forward_with_derivative(model: DgpModel, t, weights, params=None) -> PathSample:
    """Propagate values and d/dt through every layer.

    ``t`` has shape (n,) or (n, 1).  Each weight sample may carry a leading
    batch axis; the first layer's features do not depend on weights and are
    shared across the batch.
    """
    params = model.params if params is None else params
    t = np.asarray(t, dtype=float).reshape(-1, 1)
    if len(weights) != model.depth:
        raise ValueError(f"got {len(weights)} weight samples for {model.depth} layers")
    U, dU = t, np.ones_like(t)
    values = []
    for layer, W in zip(model.layers, weights):
        if np.shape(U)[-1] != layer.d_in:
            raise ad.ShapeError(f"layer {layer.index} expects {layer.d_in} inputs, got {np.shape(U)[-1]}")
        wshape = ad._val(W).shape
        if wshape[-2:] != (layer.kernel.n_features, layer.d_out):
            raise ad.ShapeError(f"layer {layer.index} weights have shape {wshape}, "
                                f"expected (..., {layer.kernel.n_features}, {layer.d_out})")
        U, dU = project_with_derivative(
            U, dU, W, layer.draws,
            params[layer.key("log_lengthscale")], params[layer.key("log_amplitude")])
        values.append(U)
    return PathSample(list(weights), values, U, dU)


def kl_weights(model: DgpModel, params=None):
    """KL(q(W) || N(0, I)) summed over all weights of all layers."""
    params = model.params if params is None else params
    total = 0.0
    for layer in model.layers:
        m = params[layer.key("weight_mean")]
        log_s = params[layer.key("weight_log_std")]
        terms = ad.square(m) + ad.exp(ad.mul(log_s, 2.0)) - 1.0 - ad.mul(log_s, 2.0)
        total = ad.add(total, ad.sum(terms))
    return ad.mul(total, 0.5)


# -- serialization ------------------------------------------------------------------

def format_array(arr):
    arr = np.asarray(arr, dtype=float)
    shape = "x".join(str(n) for n in arr.shape) or "scalar"
    return f"{shape}: " + " ".join(repr(float(v)) for v in arr.reshape(-1))


def parse_array(text):
    shape, _, body = text.partition(":")
    shape = shape.strip()
    vals = np.array([float(v) for v in body.split()], dtype=float)
    if shape == "scalar":
        return vals.reshape(())
    return vals.reshape(tuple(int(n) for n in shape.split("x")))


def model_to_text(model: DgpModel, extra=None) -> str:
    """Flat ``key = value`` lines; matrices written row-major as ``RxC: v v ...``."""
    lines = [f"model.seed = {model.seed}", f"model.depth = {model.depth}",
             f"model.d_in = {model.layers[0].d_in}"]
    for layer in model.layers:
        k = layer.kernel
        lines += [f"{layer.key('family')} = {k.family}",
                  f"{layer.key('nu')} = {'' if k.nu is None else repr(float(k.nu))}",
                  f"{layer.key('n_rf')} = {k.n_rf}",
                  f"{layer.key('d_out')} = {layer.d_out}",
                  f"{layer.key('epsilon')} = {format_array(layer.draws.epsilon)}"]
    for key, val in model.params.items():
        lines.append(f"{key} = {format_array(val)}")
    for key, val in (extra or {}).items():
        lines.append(f"{key} = {val if isinstance(val, str) else format_array(val)}")
    return "\n".join(lines) + "\n"


def parse_kv(text):
    out = {}
    for line in text.splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ValueError(f"malformed line: {line!r}")
        out[key.strip()] = val.strip()
    return out


def model_from_text(text: str) -> tuple[DgpModel, dict]:
    """Inverse of :func:`model_to_text`; returns the model and the unrecognized keys."""
    kv = parse_kv(text)
    depth = int(kv.pop("model.depth"))
    seed = int(kv.pop("model.seed"))
    d_in = int(kv.pop("model.d_in"))
    kernels, widths = [], []
    for l in range(depth):
        nu = kv.pop(f"layer{l}.nu")
        kernels.append(KernelConfig(kv.pop(f"layer{l}.family"), float(nu) if nu else None,
                                    int(kv.pop(f"layer{l}.n_rf"))))
        widths.append(int(kv.pop(f"layer{l}.d_out")))
    model = DgpModel(widths, kernels, seed=seed, d_in=d_in)
    for l, layer in enumerate(model.layers):
        eps = parse_array(kv.pop(f"layer{l}.epsilon"))
        eps.setflags(write=False)
        model.layers[l] = Layer(l, layer.kernel, SpectralDraws(eps, layer.draws.seed), layer.d_in, layer.d_out)
    for key in list(model.params):
        model.params[key] = parse_array(kv.pop(key))
    return model, kv
