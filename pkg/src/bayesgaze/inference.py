"""Monte-Carlo gaze inference: marginalize over posterior weight samples and
landmark draws, report the averaged gaze and its sample covariance.

For each of m weight samples the regressor predicts a landmark distribution;
n landmark vectors are drawn from each; every draw runs through the
geometric model. The reported gaze is the renormalized arithmetic mean of
the m*n unit gazes and the covariance is taken around the raw
(pre-normalization) mean. Draws that break the geometry (pupil ray missing
the eyeball) are dropped and counted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eye_model import EyeModelParams, estimate_gaze, estimate_gaze_batch
from .geometry import Pose, normalize
from .network import LandmarkDistribution


class AllSamplesFailed(RuntimeError):
    """Every landmark draw produced a geometric failure."""


@dataclass(frozen=True)
class InferenceConfig:
    m: int = 50  # weight samples
    n: int = 50  # landmark draws per weight sample
    seed: int = 0

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be >= 1")


@dataclass
class GazeEstimate:
    gaze: np.ndarray  # (3,) unit
    covariance: np.ndarray  # (3, 3)
    n_failed: int = 0
    per_sample_gazes: np.ndarray | None = None  # (m*n, 3) when requested


def sample_landmarks(dist: LandmarkDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    """n independent draws; each coordinate from its own Normal(mean, var)."""
    std = np.sqrt(dist.variance)
    return dist.mean[None, :] + rng.standard_normal((n, dist.mean.size)) * std[None, :]


def gaze_mean_and_covariance(gazes):
    """Renormalized mean gaze plus the sample covariance around the raw mean."""
    G = np.asarray(gazes, dtype=float)
    raw_mean = G.mean(axis=0)
    gaze = normalize(raw_mean)
    centered = G - raw_mean
    cov = centered.T @ centered / G.shape[0]
    return gaze, raw_mean, cov


def estimate_gaze_bayes(
    raster,
    weight_samples,
    predict_fn,
    params: EyeModelParams,
    cfg: InferenceConfig = InferenceConfig(),
    rng: np.random.Generator | None = None,
    init: Pose | None = None,
    keep_samples: bool = False,
) -> GazeEstimate:
    """Ensemble gaze estimate for one raster.

    predict_fn(raster, w) -> LandmarkDistribution maps a weight vector to its
    landmark prediction (single-stage or cascade). Draws are laid out in
    (weight sample, draw) order, so results do not depend on how the batch
    is later chunked or parallelized.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    weight_samples = np.asarray(weight_samples, dtype=float)
    m = weight_samples.shape[0]
    if m < cfg.m:
        raise ValueError(f"need {cfg.m} weight samples, got {m}")
    draws = []
    for i in range(cfg.m):
        dist = predict_fn(raster, weight_samples[i])
        draws.append(sample_landmarks(dist, cfg.n, rng))
    Z = np.concatenate(draws, axis=0)  # (m*n, 24)

    gazes, valid = estimate_gaze_batch(Z, params, init=init)
    n_failed = int(np.sum(~valid))
    if n_failed == Z.shape[0]:
        raise AllSamplesFailed(f"all {Z.shape[0]} landmark draws failed geometrically")
    kept = gazes[valid]
    gaze, _, cov = gaze_mean_and_covariance(kept)
    return GazeEstimate(
        gaze=gaze,
        covariance=cov,
        n_failed=n_failed,
        per_sample_gazes=kept if keep_samples else None,
    )


def estimate_gaze_point(
    raster,
    w,
    predict_fn,
    params: EyeModelParams,
    init: Pose | None = None,
) -> np.ndarray:
    """Deterministic baseline: geometric gaze of the predicted mean landmarks.

    No sampling; geometric failures (e.g. the pupil ray missing the eyeball)
    propagate to the caller.
    """
    dist = predict_fn(raster, np.asarray(w, dtype=float))
    return estimate_gaze(dist.mean, params, init=init)
