"""Multi-stage landmark refinement driven by predicted uncertainty.

A shared dense trunk turns the raster into a feature vector. Stage 1 regresses
a landmark distribution from the features alone; every later stage re-reads
the features concatenated with per-landmark probability maps rendered from
the previous stage's mean and variance, so confident predictions pin the next
stage down while uncertain ones leave it room to search. Only the final
stage's Gaussian NLL is supervised; earlier stages receive gradient through
the map pathway.

Ensemble-level uncertainty (variance of means across weight samples plus the
mean of predicted variances) is computed separately by decompose_uncertainty;
a single forward pass always renders maps from its own prediction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .network import (
    VARIANCE_FLOOR,
    LandmarkDistribution,
    Prior,
    ShapeMismatch,
    nll_arrays,
    softplus,
    softplus_inverse,
    _sigmoid,
)

# Maps are rendered with this much variance added (px^2): half a grid cell
# squared, so a confident prediction still lights up its nearest node instead
# of aliasing to an all-zero map.
MAP_RENDER_FLOOR = 4.0


@dataclass(frozen=True)
class CascadeArch:
    input_dim: int = 4096
    feature_dim: int = 128
    stage_hidden: int = 64
    n_landmarks: int = 12
    map_size: int = 16
    map_scale: float = 4.0
    stages: int = 3

    def __post_init__(self):
        if self.stages < 1:
            raise ValueError("need at least one stage")

    @property
    def n_outputs(self) -> int:
        return 2 * self.n_landmarks

    @property
    def map_dim(self) -> int:
        return self.n_landmarks * self.map_size**2

    def stage_input_dim(self, s: int) -> int:
        return self.feature_dim if s == 0 else self.feature_dim + self.map_dim

    def layer_shapes(self):
        shapes = [((self.input_dim, self.feature_dim), (self.feature_dim,))]
        for s in range(self.stages):
            din = self.stage_input_dim(s)
            shapes.append(((din, self.stage_hidden), (self.stage_hidden,)))
            shapes.append(((self.stage_hidden, self.n_outputs), (self.n_outputs,)))
            shapes.append(((self.stage_hidden, self.n_outputs), (self.n_outputs,)))
        return shapes

    @property
    def num_params(self) -> int:
        return sum(int(np.prod(w)) + int(np.prod(b)) for w, b in self.layer_shapes())

    def grid_coords(self) -> np.ndarray:
        # centers of map_scale-wide pixel blocks, in pixel units
        return (np.arange(self.map_size) + 0.5) * self.map_scale - 0.5


def unflatten_cascade(w, arch: CascadeArch):
    w = np.asarray(w)
    if w.shape != (arch.num_params,):
        raise ShapeMismatch(f"expected {arch.num_params} parameters, got {w.shape}")
    blocks = []
    off = 0
    for shape_w, shape_b in arch.layer_shapes():
        nw, nb = int(np.prod(shape_w)), int(np.prod(shape_b))
        blocks.append((w[off : off + nw].reshape(shape_w), w[off + nw : off + nw + nb]))
        off += nw + nb
    return blocks


def init_cascade_weights(
    arch: CascadeArch,
    rng: np.random.Generator,
    weight_scale: float = 0.1,
    mean_bias: float = 0.0,
    init_sigma_px: float | None = None,
) -> np.ndarray:
    shapes = arch.layer_shapes()
    parts = []
    for i, (shape_w, shape_b) in enumerate(shapes):
        parts.append(rng.normal(0.0, weight_scale / np.sqrt(shape_w[0]), int(np.prod(shape_w))))
        b = np.zeros(int(np.prod(shape_b)))
        # per-stage blocks repeat (hidden, mean head, var head) after the trunk
        if i > 0 and (i - 1) % 3 == 1:
            b += mean_bias
        if i > 0 and (i - 1) % 3 == 2 and init_sigma_px is not None:
            b += softplus_inverse(init_sigma_px**2 - VARIANCE_FLOOR)
        parts.append(b)
    return np.concatenate(parts)


def _render_maps(mu, var, arch: CascadeArch):
    """Separable Gaussian maps from (B, 24) means/variances.

    Returns (maps (B, map_dim), cache) with maps flattened in
    (landmark, row, column) order.
    """
    g = arch.grid_coords()
    x = mu[:, 0::2]  # (B, L)
    y = mu[:, 1::2]
    sx = var[:, 0::2] + MAP_RENDER_FLOOR
    sy = var[:, 1::2] + MAP_RENDER_FLOOR
    dx = g[None, None, :] - x[:, :, None]  # (B, L, G)
    dy = g[None, None, :] - y[:, :, None]
    col = np.exp(-(dx**2) / (2.0 * sx[:, :, None]))
    row = np.exp(-(dy**2) / (2.0 * sy[:, :, None]))
    maps = row[:, :, :, None] * col[:, :, None, :]  # (B, L, G, G)
    cache = (dx, dy, col, row, sx, sy)
    return maps.reshape(mu.shape[0], -1), cache


def _render_maps_backward(g_maps, cache, arch: CascadeArch):
    """Gradient of the map layer wrt the previous stage's mean and variance."""
    dx, dy, col, row, sx, sy = cache
    B = g_maps.shape[0]
    G = g_maps.reshape(B, arch.n_landmarks, arch.map_size, arch.map_size)
    g_row = np.einsum("blij,blj->bli", G, col)
    g_col = np.einsum("blij,bli->blj", G, row)
    # d col / dx = col * dx / sx ; d col / d sx = col * dx^2 / (2 sx^2)
    g_x = np.einsum("blj,blj->bl", g_col, col * dx) / sx
    g_y = np.einsum("bli,bli->bl", g_row, row * dy) / sy
    g_sx = np.einsum("blj,blj->bl", g_col, col * dx**2) / (2.0 * sx**2)
    g_sy = np.einsum("bli,bli->bl", g_row, row * dy**2) / (2.0 * sy**2)
    g_mu = np.empty((B, 2 * arch.n_landmarks))
    g_var = np.empty_like(g_mu)
    g_mu[:, 0::2] = g_x
    g_mu[:, 1::2] = g_y
    g_var[:, 0::2] = g_sx
    g_var[:, 1::2] = g_sy
    return g_mu, g_var


def _cascade_forward_cached(X, w, arch: CascadeArch):
    X = np.asarray(X, dtype=float)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[None, :]
    if X.shape[1] != arch.input_dim:
        raise ShapeMismatch(f"input dim {X.shape[1]} != descriptor {arch.input_dim}")
    blocks = unflatten_cascade(w, arch)
    Wt, bt = blocks[0]
    F = np.tanh(X @ Wt + bt)

    stage_cache = []
    means, variances = [], []
    prev = None
    for s in range(arch.stages):
        W1, b1 = blocks[1 + 3 * s]
        Wm, bm = blocks[2 + 3 * s]
        Wv, bv = blocks[3 + 3 * s]
        if s == 0:
            inp = F
            map_cache = None
        else:
            maps, map_cache = _render_maps(means[-1], variances[-1], arch)
            inp = np.concatenate([F, maps], axis=1)
        h = np.tanh(inp @ W1 + b1)
        mu = h @ Wm + bm
        a = h @ Wv + bv
        var = softplus(a) + VARIANCE_FLOOR
        stage_cache.append((inp, h, a, map_cache))
        means.append(mu)
        variances.append(var)
        prev = (mu, var)
    return means, variances, F, stage_cache, blocks, X, squeeze


def cascade_forward(raster, w, arch: CascadeArch) -> LandmarkDistribution:
    """Final-stage landmark distribution for one raster."""
    x = np.asarray(raster, dtype=float).reshape(-1)
    means, variances, *_ = _cascade_forward_cached(x, w, arch)
    return LandmarkDistribution(means[-1][0], variances[-1][0])


def cascade_forward_batch(X, w, arch: CascadeArch, all_stages: bool = False):
    """(B, input_dim) batch to final (means, variances); optionally per stage."""
    means, variances, *_ = _cascade_forward_cached(X, w, arch)
    if all_stages:
        return means, variances
    return means[-1], variances[-1]


def cascade_potential_and_grad(
    w,
    X,
    Z,
    n_total: int,
    prior: Prior = Prior(),
    arch: CascadeArch = CascadeArch(),
):
    """Negative log posterior of the final-stage output and its exact gradient.

    Mirrors the single-stage potential; the only extra machinery is the
    backward pass through the probability-map layers connecting stages.
    """
    w = np.asarray(w, dtype=float)
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if X.size == 0:
        U = float(w @ w) / (2.0 * prior.sigma**2)
        return U, w / prior.sigma**2

    means, variances, F, stage_cache, blocks, Xb, _ = _cascade_forward_cached(X, w, arch)
    B = Xb.shape[0]
    scale = n_total / B
    U = scale * float(np.sum(nll_arrays(means[-1], variances[-1], Z)))
    U += float(w @ w) / (2.0 * prior.sigma**2)

    d = means[-1] - Z
    g_mu = scale * d / variances[-1]
    g_var = scale * 0.5 * (1.0 / variances[-1] - (d * d) / variances[-1] ** 2)

    grads = [None] * len(blocks)
    g_F = np.zeros_like(F)
    for s in range(arch.stages - 1, -1, -1):
        inp, h, a, map_cache = stage_cache[s]
        W1, _ = blocks[1 + 3 * s]
        Wm, _ = blocks[2 + 3 * s]
        Wv, _ = blocks[3 + 3 * s]
        g_a = g_var * _sigmoid(a)
        grads[2 + 3 * s] = (h.T @ g_mu, g_mu.sum(axis=0))
        grads[3 + 3 * s] = (h.T @ g_a, g_a.sum(axis=0))
        g_h = g_mu @ Wm.T + g_a @ Wv.T
        g_pre = g_h * (1.0 - h * h)
        grads[1 + 3 * s] = (inp.T @ g_pre, g_pre.sum(axis=0))
        g_inp = g_pre @ W1.T
        g_F += g_inp[:, : arch.feature_dim]
        if s > 0:
            g_maps = g_inp[:, arch.feature_dim :]
            g_mu, g_var = _render_maps_backward(g_maps, map_cache, arch)
        else:
            g_mu = g_var = None

    Wt, _ = blocks[0]
    g_pre_F = g_F * (1.0 - F * F)
    grads[0] = (Xb.T @ g_pre_F, g_pre_F.sum(axis=0))

    flat = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
    return U, flat + w / prior.sigma**2


def make_cascade_oracle(
    X,
    Z,
    arch: CascadeArch,
    batch_size: int,
    prior: Prior | None = Prior(),
    n_total: int | None = None,
):
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    N = X.shape[0]
    n_total = N if n_total is None else n_total
    eff_prior = prior if prior is not None else Prior(sigma=np.inf)

    def oracle(w, rng: np.random.Generator):
        idx = rng.choice(N, size=min(batch_size, N), replace=False)
        return cascade_potential_and_grad(w, X[idx], Z[idx], n_total, eff_prior, arch)

    return oracle


def make_cascade_objective(X, Z, arch: CascadeArch, prior: Prior | None = None):
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)

    def objective(w):
        mean, var = cascade_forward_batch(X, w, arch)
        val = float(np.mean(nll_arrays(mean, var, Z)))
        if prior is not None:
            val += float(w @ w) / (2.0 * prior.sigma**2 * X.shape[0])
        return val

    return objective


def train_cascade(X, Z, arch: CascadeArch, cfg, init_w=None, prior: Prior | None = Prior(), rng=None):
    """Train a cascade with either a point optimizer or the SGHMC sampler.

    cfg decides the route: an OptimizerConfig returns an OptimizeResult, a
    SamplerConfig returns collected weight samples.
    """
    from .sghmc import OptimizerConfig, SamplerConfig, optimize_map, run_chain

    if init_w is None:
        init_w = init_cascade_weights(
            arch, np.random.default_rng(cfg.seed), mean_bias=32.0, init_sigma_px=8.0
        )
    oracle = make_cascade_oracle(X, Z, arch, cfg.batch_size, prior=prior)
    if isinstance(cfg, SamplerConfig):
        return run_chain(init_w, oracle, cfg, rng=rng)
    if isinstance(cfg, OptimizerConfig):
        objective = make_cascade_objective(X, Z, arch, prior=prior)
        return optimize_map(init_w, oracle, cfg, rng=rng, objective=objective)
    raise TypeError(f"unsupported config type {type(cfg).__name__}")


# --- ensemble uncertainty (over weight samples) -----------------------------


@dataclass
class UncertaintySummary:
    mean: np.ndarray  # (24,)
    epistemic: np.ndarray  # (24,) variance of the per-sample means
    aleatoric: np.ndarray  # (24,) mean of the per-sample variances
    total: np.ndarray  # (24,) epistemic + aleatoric, exact


def decompose_uncertainty(means, variances) -> UncertaintySummary:
    """Split cross-sample landmark uncertainty into epistemic and aleatoric
    parts (diagonal entries only; coordinates are treated as independent)."""
    M = np.asarray(means, dtype=float)
    V = np.asarray(variances, dtype=float)
    if M.ndim != 2 or M.shape != V.shape:
        raise ValueError("means and variances must both be (m, K)")
    mean = M.mean(axis=0)
    epistemic = np.mean((M - mean) ** 2, axis=0)
    aleatoric = V.mean(axis=0)
    return UncertaintySummary(mean=mean, epistemic=epistemic, aleatoric=aleatoric, total=epistemic + aleatoric)


@dataclass
class ProbabilityMap:
    """Gaussian confidence map for one landmark on an (h, w) node grid.

    Node (i, j) sits at pixel coordinates (offset + j * scale,
    offset + i * scale); the default unit scale puts nodes on integer pixels.
    """

    values: np.ndarray
    scale: float = 1.0
    offset: float = 0.0


def probability_map(mean_xy, var_xy, shape, scale: float = 1.0, offset: float = 0.0) -> ProbabilityMap:
    """Evaluate exp(-(X-x)^2/(2 sx) - (Y-y)^2/(2 sy)) on the node grid."""
    x, y = float(mean_xy[0]), float(mean_xy[1])
    sx, sy = float(var_xy[0]), float(var_xy[1])
    if sx <= 0 or sy <= 0:
        raise ValueError("variances must be positive")
    h, w = shape
    X = offset + np.arange(w) * scale
    Y = offset + np.arange(h) * scale
    vals = np.exp(-((X[None, :] - x) ** 2) / (2.0 * sx) - ((Y[:, None] - y) ** 2) / (2.0 * sy))
    return ProbabilityMap(values=vals, scale=scale, offset=offset)


# --- checkpoint: stage manifest + flat weights ------------------------------

_CASCADE_MAGIC = b"BGCSC1\n"


def save_cascade(path, w, arch: CascadeArch) -> None:
    w = np.asarray(w, dtype="<f8")
    if w.shape != (arch.num_params,):
        raise ShapeMismatch("weights length does not match the stage manifest")
    manifest = {
        "input_dim": arch.input_dim,
        "feature_dim": arch.feature_dim,
        "stage_hidden": arch.stage_hidden,
        "n_landmarks": arch.n_landmarks,
        "map_size": arch.map_size,
        "map_scale": arch.map_scale,
        "stages": arch.stages,
    }
    with open(path, "wb") as fh:
        fh.write(_CASCADE_MAGIC)
        fh.write(json.dumps(manifest, sort_keys=True).encode() + b"\n")
        fh.write(w.tobytes())


def load_cascade(path):
    with open(path, "rb") as fh:
        if fh.readline() != _CASCADE_MAGIC:
            raise ValueError("not a cascade checkpoint")
        m = json.loads(fh.readline().decode())
        arch = CascadeArch(
            input_dim=m["input_dim"],
            feature_dim=m["feature_dim"],
            stage_hidden=m["stage_hidden"],
            n_landmarks=m["n_landmarks"],
            map_size=m["map_size"],
            map_scale=m["map_scale"],
            stages=m["stages"],
        )
        w = np.frombuffer(fh.read(), "<f8")
    if w.shape != (arch.num_params,):
        raise ValueError("cascade payload does not match the manifest")
    return w.copy(), arch
