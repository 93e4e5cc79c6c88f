"""Probabilistic landmark regressor: a small dense network with a Gaussian
output head (mean + diagonal variance) and hand-written reverse-mode
gradients of the negative log posterior.

Weight vectors are flat float64 arrays. Flat layout, in order: for each
hidden layer (W, b), then the mean head (W, b), then the variance head
(W, b). The variance head output passes through softplus plus a small floor
so predicted variances stay strictly positive.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import json
import numpy as np

VARIANCE_FLOOR = 1e-6


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class NetworkArch:
    """Layer sizes of the regressor; hidden layers use tanh."""

    input_dim: int = 4096
    hidden: tuple = (128, 64)
    n_outputs: int = 24

    def layer_shapes(self):
        dims = [self.input_dim, *self.hidden]
        shapes = [((dims[i], dims[i + 1]), (dims[i + 1],)) for i in range(len(dims) - 1)]
        shapes.append(((dims[-1], self.n_outputs), (self.n_outputs,)))  # mean head
        shapes.append(((dims[-1], self.n_outputs), (self.n_outputs,)))  # variance head
        return shapes

    @property
    def num_params(self) -> int:
        return sum(int(np.prod(w)) + int(np.prod(b)) for w, b in self.layer_shapes())


@dataclass
class LandmarkDistribution:
    """Independent Gaussian over the flattened landmark vector, pixels."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.variance = np.asarray(self.variance, dtype=float)
        if self.mean.shape != self.variance.shape:
            raise ValueError("mean and variance must have matching shapes")
        if np.any(self.variance <= 0) or not np.all(np.isfinite(self.variance)):
            raise ValueError("variances must be finite and strictly positive")


@dataclass(frozen=True)
class Prior:
    """Zero-mean isotropic Gaussian over all weights."""

    sigma: float = 1.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("prior sigma must be positive")


def unflatten(w: np.ndarray, arch: NetworkArch):
    """Views into the flat vector, one (W, b) pair per block."""
    w = np.asarray(w)
    if w.shape != (arch.num_params,):
        raise ShapeMismatch(f"expected {arch.num_params} parameters, got {w.shape}")
    blocks = []
    off = 0
    for shape_w, shape_b in arch.layer_shapes():
        nw = int(np.prod(shape_w))
        nb = int(np.prod(shape_b))
        blocks.append((w[off : off + nw].reshape(shape_w), w[off + nw : off + nw + nb]))
        off += nw + nb
    return blocks


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inverse(y):
    # exact inverse of log(1 + exp(x)) for y > 0
    return y + np.log1p(-np.exp(-y))


def init_weights(
    arch: NetworkArch,
    rng: np.random.Generator,
    weight_scale: float = 0.1,
    mean_bias: float = 0.0,
    init_sigma_px: float | None = None,
) -> np.ndarray:
    """Gaussian init with std weight_scale/sqrt(fan_in), biases zero.

    mean_bias shifts the mean head (e.g. to the principal point) and
    init_sigma_px starts the variance head wide; both keep early training
    gradients bounded without touching the model definition.
    """
    shapes = arch.layer_shapes()
    parts = []
    for i, (shape_w, shape_b) in enumerate(shapes):
        fan_in = shape_w[0]
        parts.append(rng.normal(0.0, weight_scale / np.sqrt(fan_in), int(np.prod(shape_w))))
        b = np.zeros(int(np.prod(shape_b)))
        if i == len(shapes) - 2:
            b += mean_bias
        if i == len(shapes) - 1 and init_sigma_px is not None:
            b += softplus_inverse(init_sigma_px**2 - VARIANCE_FLOOR)
        parts.append(b)
    return np.concatenate(parts)


def _forward_cached(X, w, arch: NetworkArch):
    X = np.asarray(X, dtype=float)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[None, :]
    if X.shape[1] != arch.input_dim:
        raise ShapeMismatch(f"input dim {X.shape[1]} != descriptor {arch.input_dim}")
    blocks = unflatten(w, arch)
    acts = [X]
    h = X
    for W, b in blocks[:-2]:
        h = np.tanh(h @ W + b)
        acts.append(h)
    Wm, bm = blocks[-2]
    Wv, bv = blocks[-1]
    mean = h @ Wm + bm
    a = h @ Wv + bv
    var = softplus(a) + VARIANCE_FLOOR
    return mean, var, a, acts, blocks, squeeze


def forward(raster, w, arch: NetworkArch = NetworkArch()) -> LandmarkDistribution:
    """Raster (flattened or 2D) to its predicted landmark distribution."""
    x = np.asarray(raster, dtype=float).reshape(-1)
    mean, var, *_ = _forward_cached(x, w, arch)
    return LandmarkDistribution(mean[0], var[0])


def forward_batch(X, w, arch: NetworkArch = NetworkArch()):
    """(B, input_dim) batch to (means (B, K), variances (B, K))."""
    mean, var, *_ = _forward_cached(X, w, arch)
    return mean, var


def nll(dist: LandmarkDistribution, z) -> float:
    """Negative log likelihood of a landmark vector under the prediction."""
    z = np.asarray(z, dtype=float)
    return float(nll_arrays(dist.mean[None], dist.variance[None], z[None])[0])


def nll_arrays(means, variances, targets):
    d = targets - means
    return 0.5 * np.sum(np.log(2.0 * np.pi * variances) + d * d / variances, axis=-1)


def potential_and_grad(
    w,
    X,
    Z,
    n_total: int,
    prior: Prior = Prior(),
    arch: NetworkArch = NetworkArch(),
):
    """Negative log posterior and its exact gradient on one minibatch.

    U = (n_total / batch) * sum of batch NLLs + ||w||^2 / (2 sigma^2), the
    minibatch term rescaled so the stochastic gradient is unbiased for the
    full-data potential. An empty batch is allowed as a testing hook and
    leaves only the prior term.
    """
    w = np.asarray(w, dtype=float)
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if X.size == 0:
        U = float(w @ w) / (2.0 * prior.sigma**2)
        return U, w / prior.sigma**2

    mean, var, a, acts, blocks, _ = _forward_cached(X, w, arch)
    B = X.shape[0]
    scale = n_total / B
    U = scale * float(np.sum(nll_arrays(mean, var, Z))) + float(w @ w) / (2.0 * prior.sigma**2)

    # heads
    d = mean - Z
    g_mean = scale * d / var
    g_var = scale * 0.5 * (1.0 / var - (d * d) / (var * var))
    g_a = g_var * _sigmoid(a)

    h = acts[-1]
    Wm, _ = blocks[-2]
    Wv, _ = blocks[-1]
    grads = [None] * len(blocks)
    grads[-2] = (h.T @ g_mean, g_mean.sum(axis=0))
    grads[-1] = (h.T @ g_a, g_a.sum(axis=0))
    g_h = g_mean @ Wm.T + g_a @ Wv.T

    for li in range(len(blocks) - 3, -1, -1):
        pre_act_grad = g_h * (1.0 - acts[li + 1] ** 2)  # tanh'
        W, _ = blocks[li]
        grads[li] = (acts[li].T @ pre_act_grad, pre_act_grad.sum(axis=0))
        g_h = pre_act_grad @ W.T

    flat = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
    return U, flat + w / prior.sigma**2


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def make_potential_oracle(
    X,
    Z,
    arch: NetworkArch,
    batch_size: int,
    prior: Prior | None = Prior(),
    n_total: int | None = None,
):
    """Minibatch gradient oracle f(w, rng) -> (U, dU/dw).

    prior=None drops the prior term (the likelihood-only objective used by
    the unregularized point estimator).
    """
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    N = X.shape[0]
    n_total = N if n_total is None else n_total
    eff_prior = prior if prior is not None else Prior(sigma=np.inf)

    def oracle(w, rng: np.random.Generator):
        idx = rng.choice(N, size=min(batch_size, N), replace=False)
        return potential_and_grad(w, X[idx], Z[idx], n_total, eff_prior, arch)

    return oracle


def make_objective(X, Z, arch: NetworkArch, prior: Prior | None = None):
    """Full-data objective (mean NLL, plus the prior term when given)."""
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)

    def objective(w):
        mean, var = forward_batch(X, w, arch)
        val = float(np.mean(nll_arrays(mean, var, Z)))
        if prior is not None:
            val += float(w @ w) / (2.0 * prior.sigma**2 * X.shape[0])
        return val

    return objective


# --- checkpoint file: json descriptor line + raw float64 weights -----------

_WEIGHTS_MAGIC = b"BGWTS1\n"


def save_weights(path, w, arch: NetworkArch) -> None:
    w = np.asarray(w, dtype="<f8")
    if w.shape != (arch.num_params,):
        raise ShapeMismatch(f"weights length {w.shape} != descriptor {arch.num_params}")
    header = {"input_dim": arch.input_dim, "hidden": list(arch.hidden), "n_outputs": arch.n_outputs}
    with open(path, "wb") as fh:
        fh.write(_WEIGHTS_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(w.tobytes())


def load_weights(path):
    with open(path, "rb") as fh:
        if fh.readline() != _WEIGHTS_MAGIC:
            raise ValueError(f"{Path(path).name}: not a weight checkpoint")
        header = json.loads(fh.readline().decode())
        arch = NetworkArch(header["input_dim"], tuple(header["hidden"]), header["n_outputs"])
        w = np.frombuffer(fh.read(), "<f8")
    if w.shape != (arch.num_params,):
        raise ValueError(f"{Path(path).name}: weight payload does not match descriptor")
    return w.copy(), arch
