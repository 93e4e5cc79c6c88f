import numpy as np
import pytest

from bayesgaze.sghmc import (
    ChainState,
    NonFiniteState,
    OptimizerConfig,
    SamplerConfig,
    load_chain,
    optimize_map,
    optimize_mle,
    run_chain,
    save_chain,
    sghmc_step,
)

from helpers import ZeroNoise, conjugate_oracle, conjugate_regression


def quadratic_oracle(w, rng):
    return 0.5 * float(w @ w), w.copy()


def zero_oracle(w, rng):
    return 0.0, np.zeros_like(w)


class TestStep:
    def test_full_friction_forgets_momentum(self):
        # beta = 1: v_t = -eta grad + noise, previous momentum gone
        cfg = SamplerConfig(eta=0.01, beta=1.0, burn_in=0, interval=1, num_samples=1)
        state = ChainState(w=np.array([2.0]), v=np.array([5.0]))
        new = sghmc_step(state, quadratic_oracle, cfg, ZeroNoise())
        np.testing.assert_allclose(new.v, [-0.01 * 2.0])
        np.testing.assert_allclose(new.w, state.w + new.v)

    def test_momentum_decays_geometrically(self):
        cfg = SamplerConfig(eta=0.01, beta=0.25, burn_in=0, interval=1, num_samples=1)
        state = ChainState(w=np.zeros(3), v=np.array([1.0, -2.0, 4.0]))
        for k in range(1, 6):
            state = sghmc_step(state, zero_oracle, cfg, ZeroNoise())
            np.testing.assert_allclose(state.v, (1 - 0.25) ** k * np.array([1.0, -2.0, 4.0]))

    def test_injected_noise_covariance(self):
        # grad == 0: stationary Var(v) = 2 eta beta / (1 - (1-beta)^2)
        eta, beta = 1e-3, 0.1
        cfg = SamplerConfig(eta=eta, beta=beta, burn_in=0, interval=1, num_samples=1)
        rng = np.random.default_rng(0)
        state = ChainState(w=np.zeros(8), v=np.zeros(8))
        vs = []
        for i in range(120_000):
            state = sghmc_step(state, zero_oracle, cfg, rng)
            if i > 2000:
                vs.append(state.v.copy())
        measured = np.var(np.concatenate(vs))
        expected = 2 * eta * beta / (1 - (1 - beta) ** 2)
        assert measured == pytest.approx(expected, rel=0.05)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_state_detected(self):
        cfg = SamplerConfig(eta=1e30, beta=0.5, burn_in=0, interval=1, num_samples=1)

        def exploding(w, rng):
            return 0.0, np.full_like(w, 1e300)

        state = ChainState.at(np.ones(2))
        with pytest.raises(NonFiniteState):
            sghmc_step(state, exploding, cfg, np.random.default_rng(0))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SamplerConfig(eta=-1.0)
        with pytest.raises(ValueError):
            SamplerConfig(beta=0.0)
        with pytest.raises(ValueError):
            SamplerConfig(beta=1.5)
        with pytest.raises(ValueError):
            SamplerConfig(interval=0)


class TestRunChain:
    def test_collects_requested_count(self):
        cfg = SamplerConfig(eta=1e-3, beta=0.1, burn_in=50, interval=7, num_samples=50)
        samples = run_chain(np.zeros(2), quadratic_oracle, cfg, np.random.default_rng(1))
        assert samples.shape == (50, 2)

    def test_interval_one_no_burnin_emits_first_iterates(self):
        cfg = SamplerConfig(eta=1e-3, beta=0.1, burn_in=0, interval=1, num_samples=5)
        rng = np.random.default_rng(2)
        samples = run_chain(np.zeros(2), quadratic_oracle, cfg, rng)
        rng2 = np.random.default_rng(2)
        state = ChainState.at(np.zeros(2))
        expected = []
        for _ in range(5):
            state = sghmc_step(state, quadratic_oracle, cfg, rng2)
            expected.append(state.w.copy())
        np.testing.assert_array_equal(samples, np.array(expected))

    def test_determinism_bit_identical(self):
        cfg = SamplerConfig(eta=1e-3, beta=0.1, burn_in=20, interval=3, num_samples=10, seed=77)
        a = run_chain(np.zeros(4), quadratic_oracle, cfg)
        b = run_chain(np.zeros(4), quadratic_oracle, cfg)
        np.testing.assert_array_equal(a, b)

    def test_quadratic_stationary_variance(self):
        # U = w^2/2 targets a standard normal
        cfg = SamplerConfig(eta=1e-3, beta=0.2, burn_in=2000, interval=30, num_samples=2000)
        samples = run_chain(np.zeros(1), quadratic_oracle, cfg, np.random.default_rng(3))
        assert np.var(samples) == pytest.approx(1.0, rel=0.1)

    def test_conjugate_posterior_mean_and_covariance(self):
        X, y, s, tau, mu, Sigma = conjugate_regression()
        cfg = SamplerConfig(
            eta=2e-5, beta=0.2, burn_in=3000, interval=300, num_samples=500, batch_size=200
        )
        oracle = conjugate_oracle(X, y, s, tau, cfg.batch_size)
        samples = run_chain(np.zeros(2), oracle, cfg, np.random.default_rng(123))
        mean = samples.mean(axis=0)
        cov = np.cov(samples.T, ddof=1)
        se = np.sqrt(np.diag(Sigma) / cfg.num_samples)
        assert np.all(np.abs(mean - mu) < 3 * se)
        assert np.linalg.norm(cov - Sigma) / np.linalg.norm(Sigma) < 0.10

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_reports_update_index(self):
        cfg = SamplerConfig(eta=1e200, beta=0.01, burn_in=0, interval=1, num_samples=100)
        with pytest.raises(NonFiniteState) as err:
            run_chain(np.array([1.0]), quadratic_oracle, cfg, np.random.default_rng(4))
        assert err.value.update_index is not None


class TestOptimizers:
    def test_quadratic_bowl_converges(self):
        cfg = OptimizerConfig(lr=0.1, momentum=0.8, num_updates=300, batch_size=1)
        res = optimize_mle(np.array([5.0, -3.0]), quadratic_oracle, cfg)
        assert np.max(np.abs(res.w)) < 1e-6

    def test_map_prior_only_goes_to_zero(self):
        def prior_oracle(w, rng):
            return 0.5 * float(w @ w), w.copy()

        cfg = OptimizerConfig(lr=0.1, momentum=0.5, num_updates=300, batch_size=1)
        res = optimize_map(np.array([3.0, 3.0, -1.0]), prior_oracle, cfg)
        assert np.max(np.abs(res.w)) < 1e-6

    def test_map_equals_ridge_closed_form(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(40, 3))
        beta = np.array([0.5, -1.0, 2.0])
        y = X @ beta + rng.normal(0, 0.1, 40)
        s2, tau2 = 0.1**2, 1.0

        def oracle(w, _rng):
            r = X @ w - y
            U = float(r @ r) / (2 * s2) + float(w @ w) / (2 * tau2)
            return U, X.T @ r / s2 + w / tau2

        ridge = np.linalg.solve(X.T @ X / s2 + np.eye(3) / tau2, X.T @ y / s2)
        cfg = OptimizerConfig(lr=2e-4, momentum=0.95, num_updates=4000, batch_size=1)
        res = optimize_map(np.zeros(3), oracle, cfg)
        np.testing.assert_allclose(res.w, ridge, atol=1e-6)

    def test_best_iterate_tracking(self):
        # objective ranks candidates; the returned iterate must be the best seen
        calls = []

        def noisy_oracle(w, rng):
            return 0.0, rng.normal(0, 1.0, w.shape)

        def objective(w):
            val = float(w @ w)
            calls.append(val)
            return val

        cfg = OptimizerConfig(lr=0.5, momentum=0.0, num_updates=200, batch_size=1, eval_interval=10)
        res = optimize_mle(np.zeros(2), noisy_oracle, cfg, objective=objective)
        assert res.objective == pytest.approx(min(calls))

    def test_nonfinite_raises(self):
        cfg = OptimizerConfig(lr=1e200, momentum=0.0, num_updates=10, batch_size=1)
        with pytest.raises(NonFiniteState):
            optimize_mle(np.array([1.0]), quadratic_oracle, cfg)


class TestChainArchive:
    def test_round_trip(self, tmp_path):
        cfg = SamplerConfig(eta=1e-3, beta=0.1, burn_in=5, interval=2, num_samples=8)
        samples = run_chain(np.zeros(3), quadratic_oracle, cfg, np.random.default_rng(6))
        path = tmp_path / "chain.bgc"
        save_chain(path, cfg, samples)
        loaded, cfg2 = load_chain(path)
        np.testing.assert_array_equal(loaded, samples)
        assert cfg2 == cfg

    def test_corrupt_rejected(self, tmp_path):
        cfg = SamplerConfig(num_samples=4)
        path = tmp_path / "chain.bgc"
        save_chain(path, cfg, np.zeros((4, 2)))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError):
            load_chain(path)
