"""Stochastic-gradient Hamiltonian Monte Carlo over a potential-energy
oracle, plus SGD-with-momentum point optimizers used as baselines.

One update, with potential U (a negative log posterior), learning rate eta
and friction beta:

    v <- (1 - beta) * v - eta * grad U(w) + Normal(0, 2 * eta * beta * I)
    w <- w + v

The mass matrix is the identity (any scalar multiple is absorbed into eta).
The oracle signature is f(w, rng) -> (U, grad U); oracles that subsample
minibatches draw them from the same rng, so a run is reproducible from
(seed, config, data order) alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class NonFiniteState(RuntimeError):
    """Chain state left the finite range; usually a divergent learning rate."""

    def __init__(self, message: str, update_index: int | None = None):
        super().__init__(message if update_index is None else f"update {update_index}: {message}")
        self.update_index = update_index


@dataclass(frozen=True)
class SamplerConfig:
    eta: float = 1e-4
    beta: float = 0.05
    burn_in: int = 2000
    interval: int = 100
    num_samples: int = 50
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if not (0 < self.beta <= 1):
            raise ValueError("beta must be in (0, 1]")
        if self.interval < 1:
            raise ValueError("interval must be >= 1")
        if self.burn_in < 0 or self.num_samples < 1 or self.batch_size < 1:
            raise ValueError("burn_in >= 0, num_samples >= 1, batch_size >= 1 required")


@dataclass
class ChainState:
    w: np.ndarray
    v: np.ndarray

    @classmethod
    def at(cls, w) -> "ChainState":
        w = np.asarray(w, dtype=float).copy()
        return cls(w=w, v=np.zeros_like(w))


def sghmc_step(
    state: ChainState,
    grad_oracle,
    cfg: SamplerConfig,
    rng: np.random.Generator,
) -> ChainState:
    """One momentum + one position update using one stochastic gradient."""
    _, grad = grad_oracle(state.w, rng)
    noise = rng.standard_normal(state.w.shape) * np.sqrt(2.0 * cfg.eta * cfg.beta)
    # overflow here is the divergence this check exists to catch
    with np.errstate(over="ignore", invalid="ignore"):
        v = (1.0 - cfg.beta) * state.v - cfg.eta * grad + noise
        w = state.w + v
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(v))):
        raise NonFiniteState("non-finite chain state")
    return ChainState(w=w, v=v)


def run_chain(
    init_w,
    grad_oracle,
    cfg: SamplerConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Burn in, then collect num_samples weight vectors every `interval` updates.

    Total updates: burn_in + interval * num_samples. Returns an
    (num_samples, P) array of collected positions.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    state = ChainState.at(init_w)
    samples = np.empty((cfg.num_samples, state.w.size))
    total = cfg.burn_in + cfg.interval * cfg.num_samples
    k = 0
    for step_idx in range(1, total + 1):
        try:
            state = sghmc_step(state, grad_oracle, cfg, rng)
        except NonFiniteState as exc:
            raise NonFiniteState(str(exc), update_index=step_idx) from exc
        if step_idx > cfg.burn_in and (step_idx - cfg.burn_in) % cfg.interval == 0:
            samples[k] = state.w
            k += 1
    assert k == cfg.num_samples
    return samples


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-3
    momentum: float = 0.9
    num_updates: int = 2000
    batch_size: int = 64
    eval_interval: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or not (0 <= self.momentum < 1):
            raise ValueError("lr > 0 and momentum in [0, 1) required")
        if self.num_updates < 1 or self.batch_size < 1 or self.eval_interval < 1:
            raise ValueError("num_updates, batch_size, eval_interval must be >= 1")


@dataclass
class OptimizeResult:
    w: np.ndarray
    objective: float
    history: list = field(default_factory=list)


def _sgd(init_w, grad_oracle, cfg: OptimizerConfig, rng, objective=None) -> OptimizeResult:
    w = np.asarray(init_w, dtype=float).copy()
    v = np.zeros_like(w)
    best_w = w.copy()
    best_val = np.inf if objective is None else float(objective(w))
    history = []
    for step_idx in range(1, cfg.num_updates + 1):
        _, grad = grad_oracle(w, rng)
        with np.errstate(over="ignore", invalid="ignore"):
            v = cfg.momentum * v - cfg.lr * grad
            w = w + v
        if not np.all(np.isfinite(w)):
            raise NonFiniteState("non-finite iterate", update_index=step_idx)
        if objective is not None and (step_idx % cfg.eval_interval == 0 or step_idx == cfg.num_updates):
            val = float(objective(w))
            history.append((step_idx, val))
            if val < best_val:
                best_val = val
                best_w = w.copy()
    if objective is None:
        best_w, best_val = w, np.nan
    return OptimizeResult(w=best_w, objective=best_val, history=history)


def optimize_mle(init_w, grad_oracle, cfg: OptimizerConfig, rng=None, objective=None) -> OptimizeResult:
    """SGD with momentum on the likelihood-only objective; keeps the iterate
    with the best running objective value when one is supplied."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    return _sgd(init_w, grad_oracle, cfg, rng, objective)


def optimize_map(init_w, grad_oracle, cfg: OptimizerConfig, rng=None, objective=None) -> OptimizeResult:
    """Same descent as optimize_mle; the caller passes a prior-bearing oracle."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    return _sgd(init_w, grad_oracle, cfg, rng, objective)


# --- chain archive: config echo + collected flat weight vectors ------------

_CHAIN_MAGIC = b"BGCHN1\n"


def save_chain(path, cfg: SamplerConfig, samples) -> None:
    samples = np.asarray(samples, dtype="<f8")
    header = {
        "eta": cfg.eta,
        "beta": cfg.beta,
        "burn_in": cfg.burn_in,
        "interval": cfg.interval,
        "num_samples": int(samples.shape[0]),
        "batch_size": cfg.batch_size,
        "seed": cfg.seed,
        "dim": int(samples.shape[1]),
    }
    with open(path, "wb") as fh:
        fh.write(_CHAIN_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(samples.tobytes())


def load_chain(path):
    with open(path, "rb") as fh:
        if fh.readline() != _CHAIN_MAGIC:
            raise ValueError("not a chain archive")
        header = json.loads(fh.readline().decode())
        flat = np.frombuffer(fh.read(), "<f8")
    m, dim = header["num_samples"], header["dim"]
    if flat.size != m * dim:
        raise ValueError("chain payload does not match header")
    cfg = SamplerConfig(
        eta=header["eta"],
        beta=header["beta"],
        burn_in=header["burn_in"],
        interval=header["interval"],
        num_samples=m,
        batch_size=header["batch_size"],
        seed=header["seed"],
    )
    return flat.reshape(m, dim).copy(), cfg
