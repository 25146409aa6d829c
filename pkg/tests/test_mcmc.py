"""Tests for the pCN sampler, its diagnostics, and predictive pushes."""

import numpy as np
import pytest

from dsinv.errors import ConfigurationError, SimulationFailed
from dsinv.mcmc import (
    ChainConfig,
    effective_sample_size,
    pcn_step,
    push_predictive,
    run_chains,
    split_rhat,
)

CONSTANT_LL = lambda xi: 0.0


def test_chain_config_validation():
    with pytest.raises(ConfigurationError):
        ChainConfig(n_chains=0, n_iterations=10, n_params=2)
    with pytest.raises(ConfigurationError):
        ChainConfig(n_chains=1, n_iterations=0, n_params=2)
    with pytest.raises(ConfigurationError):
        ChainConfig(n_chains=1, n_iterations=10, n_params=2, beta=1.5)
    with pytest.raises(ConfigurationError):
        ChainConfig(n_chains=1, n_iterations=10, n_params=2, burn_in=1.0)
    cfg = ChainConfig(n_chains=4, n_iterations=1000, n_params=3, burn_in=0.5, thin=10)
    assert cfg.n_kept_per_chain == 50


def test_pcn_step_beta_one_constant_likelihood_always_accepts():
    rng = np.random.default_rng(0)
    xi = rng.standard_normal(4)
    draws = []
    for _ in range(5000):
        xi, ll, accepted, failed = pcn_step(xi, CONSTANT_LL, 1.0, rng, current_log_like=0.0)
        assert accepted and not failed
        draws.append(xi)
    draws = np.asarray(draws)
    # with beta = 1 the proposal is an independent prior draw
    assert np.abs(draws.mean(axis=0)).max() < 3.0 / np.sqrt(5000)
    assert np.abs(draws.std(axis=0) - 1.0).max() < 4.0 / np.sqrt(5000)


def test_pcn_step_small_beta_barely_moves():
    rng = np.random.default_rng(1)
    xi = rng.standard_normal(4)
    beta = 1e-6
    increments = []
    for _ in range(200):
        nxt, ll, accepted, _ = pcn_step(xi, CONSTANT_LL, beta, rng, current_log_like=0.0)
        increments.append(np.linalg.norm(nxt - xi))
        xi = nxt
    assert max(increments) < 1e-4


def test_pcn_linear_gaussian_matches_conjugate_posterior():
    # d = A xi + e with everything Gaussian: posterior is available in
    # closed form and the chain must land on it
    rng = np.random.default_rng(2)
    a = rng.normal(size=(4, 2))
    noise_std = 0.5
    xi_true = rng.standard_normal(2)
    d_obs = a @ xi_true + noise_std * rng.standard_normal(4)

    hessian = a.T @ a / noise_std**2 + np.eye(2)
    cov_post = np.linalg.inv(hessian)
    mean_post = cov_post @ (a.T @ d_obs) / noise_std**2

    def log_like(xi):
        r = d_obs - a @ xi
        return -0.5 * float(r @ r) / noise_std**2

    config = ChainConfig(n_chains=4, n_iterations=20_000, n_params=2, burn_in=0.5,
                         beta=0.4, thin=5, seed=3, adapt_beta=True)
    result = run_chains(config, log_like)
    pooled = result.samples
    se = pooled.std(axis=0, ddof=1) / np.sqrt(result.ess)
    assert np.all(np.abs(pooled.mean(axis=0) - mean_post) < 3.0 * se)
    sample_cov = np.cov(pooled, rowvar=False)
    assert np.linalg.norm(sample_cov - cov_post) / np.linalg.norm(cov_post) < 0.15


def test_run_chains_constant_likelihood_converges():
    config = ChainConfig(n_chains=4, n_iterations=4000, n_params=3, burn_in=0.5,
                         beta=0.8, thin=1, seed=4, adapt_beta=False)
    result = run_chains(config, CONSTANT_LL)
    assert np.all(result.rhat < 1.01)
    assert result.samples.shape == (4 * 2000, 3)


def test_run_chains_deterministic():
    config = ChainConfig(n_chains=2, n_iterations=500, n_params=2, burn_in=0.4,
                         beta=0.3, thin=2, seed=5)
    a = run_chains(config, CONSTANT_LL)
    b = run_chains(config, CONSTANT_LL)
    assert np.array_equal(a.samples_by_chain, b.samples_by_chain)
    assert a.acceptance_rate == b.acceptance_rate


def test_simulation_failure_auto_rejects():
    def flaky(xi):
        if xi[0] > 0.0:
            raise SimulationFailed("solver blew up")
        return 0.0

    config = ChainConfig(n_chains=2, n_iterations=2000, n_params=2, burn_in=0.5,
                         beta=0.5, thin=2, seed=6, adapt_beta=False)
    result = run_chains(config, flaky)
    assert result.failure_count > 0
    # retained states all lie in the feasible half-space
    assert np.all(result.samples[:, 0] <= 0.0)


def test_push_predictive_contracts():
    rng = np.random.default_rng(7)
    samples = rng.standard_normal((200, 3))

    out, failures = push_predictive(samples, lambda xi: xi)
    assert np.array_equal(out, samples)
    assert failures == 0

    out, _ = push_predictive(samples, lambda xi: np.array([2.0]))
    assert np.allclose(out.var(axis=0), 0.0)

    b = rng.normal(size=(4, 3))
    out, _ = push_predictive(samples, lambda xi: b @ xi)
    expected = b @ np.cov(samples, rowvar=False) @ b.T
    got = np.cov(out, rowvar=False)
    assert np.linalg.norm(got - expected) / np.linalg.norm(expected) < 1e-10


def test_push_predictive_drops_failures():
    samples = np.arange(10, dtype=float).reshape(10, 1)

    def sometimes(xi):
        if xi[0] % 2 == 0:
            raise SimulationFailed("boom")
        return xi

    out, failures = push_predictive(samples, sometimes)
    assert failures == 5
    assert out.shape == (5, 1)


def test_prior_preservation_moments():
    config = ChainConfig(n_chains=4, n_iterations=3000, n_params=3, burn_in=0.5,
                         beta=0.5, thin=1, seed=8, adapt_beta=False)
    result = run_chains(config, CONSTANT_LL)
    pooled = result.samples
    se_mean = pooled.std(axis=0, ddof=1) / np.sqrt(result.ess)
    assert np.all(np.abs(pooled.mean(axis=0)) < 3.0 * se_mean)
    se_var = np.sqrt(2.0 / result.ess)
    assert np.all(np.abs(pooled.var(axis=0, ddof=1) - 1.0) < 3.0 * se_var)


def test_acceptance_monotone_in_beta():
    rng = np.random.default_rng(9)
    a = rng.normal(size=(3, 2))
    d_obs = a @ rng.standard_normal(2)

    def log_like(xi):
        r = d_obs - a @ xi
        return -0.5 * float(r @ r) / 0.3**2

    rates, ses = [], []
    for beta in (0.05, 0.1, 0.25, 0.5):
        config = ChainConfig(n_chains=4, n_iterations=4000, n_params=2, burn_in=0.25,
                             beta=beta, thin=4, seed=10, adapt_beta=False)
        result = run_chains(config, log_like)
        n = config.n_chains * config.n_iterations
        rates.append(result.acceptance_rate)
        ses.append(np.sqrt(result.acceptance_rate * (1 - result.acceptance_rate) / n))
    for i in range(len(rates) - 1):
        slack = 3.0 * np.hypot(ses[i], ses[i + 1])
        assert rates[i + 1] <= rates[i] + slack


def test_diagnostics_exchangeable_under_chain_permutation():
    rng = np.random.default_rng(11)
    chains = rng.standard_normal((4, 300, 2)) + rng.normal(0, 0.1, (4, 1, 2))
    perm = [2, 0, 3, 1]
    assert np.allclose(split_rhat(chains), split_rhat(chains[perm]), rtol=1e-12)
    assert np.allclose(
        effective_sample_size(chains), effective_sample_size(chains[perm]), rtol=1e-12
    )


def test_split_rhat_detects_disagreement():
    rng = np.random.default_rng(12)
    chains = rng.standard_normal((4, 400, 1))
    chains[0] += 5.0  # one chain stuck elsewhere
    assert split_rhat(chains)[0] > 1.5
