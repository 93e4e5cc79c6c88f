"""Shared analytic targets for sampler tests and the acceptance suite."""

import numpy as np


def conjugate_regression(seed=0, N=400):
    """Bayesian linear regression with a correlated 2D design.

    Returns (X, y, obs_sigma, prior_tau, posterior_mean, posterior_cov);
    the posterior is Gaussian and known in closed form.
    """
    rng = np.random.default_rng(seed)
    x1 = rng.normal(size=N)
    x2 = 0.95 * x1 + 0.3 * rng.normal(size=N)
    X = np.stack([x1, x2], axis=1)
    beta = np.array([1.0, -2.0])
    obs_sigma = 0.5
    y = X @ beta + rng.normal(0, obs_sigma, N)
    prior_tau = 2.0
    precision = X.T @ X / obs_sigma**2 + np.eye(2) / prior_tau**2
    cov = np.linalg.inv(precision)
    mean = cov @ (X.T @ y) / obs_sigma**2
    return X, y, obs_sigma, prior_tau, mean, cov


def conjugate_oracle(X, y, obs_sigma, prior_tau, batch_size):
    """Minibatch potential oracle for the regression posterior."""
    N = X.shape[0]

    def oracle(w, rng):
        idx = rng.choice(N, batch_size, replace=False)
        r = X[idx] @ w - y[idx]
        scale = N / batch_size
        U = scale * float(r @ r) / (2 * obs_sigma**2) + float(w @ w) / (2 * prior_tau**2)
        g = scale * X[idx].T @ r / obs_sigma**2 + w / prior_tau**2
        return U, g

    return oracle


class ZeroNoise:
    """Generator stand-in that injects no noise (testing hook)."""

    def standard_normal(self, shape):
        return np.zeros(shape)

    def choice(self, n, size=None, replace=True):
        return np.arange(size if size is not None else n)
