"""Preconditioned Crank-Nicolson sampling over KL coefficients.

The proposal sqrt(1 - beta^2) xi + beta w preserves the standard-normal
prior exactly, so acceptance depends only on the log-likelihood
difference. Chains run independently from spawned RNG streams and are
pooled only at the end; results are deterministic given the master
seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.stats

from ._parallel import parallel_map
from .errors import ConfigurationError, SimulationFailed

TARGET_ACCEPTANCE = 0.25


@dataclass(frozen=True)
class ChainConfig:
    n_chains: int
    n_iterations: int
    n_params: int
    burn_in: float = 0.5
    beta: float = 0.25
    thin: int = 10
    seed: int = 0
    adapt_beta: bool = True

    def __post_init__(self):
        if self.n_chains < 1:
            raise ConfigurationError("need at least one chain")
        if self.n_iterations < 1:
            raise ConfigurationError("need at least one iteration")
        if not 0.0 < self.beta <= 1.0:
            raise ConfigurationError(f"beta must be in (0, 1], got {self.beta}")
        if not 0.0 <= self.burn_in < 1.0:
            raise ConfigurationError(f"burn-in fraction must be in [0, 1), got {self.burn_in}")
        if self.thin < 1:
            raise ConfigurationError("thinning interval must be >= 1")

    @property
    def n_burn(self) -> int:
        return int(self.burn_in * self.n_iterations)

    @property
    def n_kept_per_chain(self) -> int:
        return (self.n_iterations - self.n_burn) // self.thin


@dataclass
class ChainResult:
    samples_by_chain: np.ndarray  # (n_chains, n_kept, n_params)
    acceptance_rate: float
    failure_count: int
    rhat: np.ndarray  # per-coordinate rank-normalised split R-hat
    ess: np.ndarray  # per-coordinate effective sample size
    final_betas: np.ndarray

    @property
    def samples(self) -> np.ndarray:
        """All retained samples pooled across chains."""
        c, k, n = self.samples_by_chain.shape
        return self.samples_by_chain.reshape(c * k, n)


def pcn_step(xi, log_like, beta, rng, current_log_like=None):
    """One pCN transition.

    Returns (state, log_like_value, accepted, failed). A simulation
    failure at the proposal auto-rejects and is flagged so callers can
    count it separately.
    """
    xi = np.asarray(xi, dtype=float)
    if current_log_like is None:
        current_log_like = log_like(xi)
    w = rng.standard_normal(xi.shape[0])
    proposal = np.sqrt(1.0 - beta**2) * xi + beta * w
    log_u = np.log(rng.uniform())
    try:
        proposal_ll = log_like(proposal)
    except SimulationFailed:
        return xi, current_log_like, False, True
    if not np.isfinite(proposal_ll):
        return xi, current_log_like, False, True
    if log_u < min(0.0, proposal_ll - current_log_like):
        return proposal, proposal_ll, True, False
    return xi, current_log_like, False, False


def _run_chain(task):
    """One full chain; module-level so it can cross process boundaries."""
    config, log_like, seed_seq = task
    rng = np.random.default_rng(seed_seq)
    n_burn = config.n_burn
    beta = config.beta

    xi = rng.standard_normal(config.n_params)
    try:
        ll = log_like(xi)
    except SimulationFailed:
        # a failing initial draw never blocks the chain: any finite
        # proposal is then accepted
        ll = -np.inf
    kept = np.empty((config.n_kept_per_chain, config.n_params))
    k = 0
    n_accept = 0
    n_failed = 0
    log_beta = np.log(beta)
    for i in range(1, config.n_iterations + 1):
        xi, ll, accepted, failed = pcn_step(xi, log_like, beta, rng, current_log_like=ll)
        n_accept += accepted
        n_failed += failed
        if config.adapt_beta and i <= n_burn:
            # diminishing Robbins-Monro drift toward the target rate;
            # the kernel is frozen once burn-in ends
            log_beta += (float(accepted) - TARGET_ACCEPTANCE) / i**0.66
            beta = float(np.clip(np.exp(log_beta), 1e-6, 1.0))
        if i > n_burn and (i - n_burn) % config.thin == 0 and k < kept.shape[0]:
            kept[k] = xi
            k += 1
    return kept, n_accept / config.n_iterations, n_failed, beta


def run_chains(config: ChainConfig, log_like, workers: int = 1) -> ChainResult:
    """Run independent chains, pool them, and attach diagnostics."""
    seed_seqs = np.random.SeedSequence(config.seed).spawn(config.n_chains)
    tasks = [(config, log_like, s) for s in seed_seqs]
    outcomes = parallel_map(_run_chain, tasks, workers=workers)

    samples = np.stack([out[0] for out in outcomes])
    acceptance = float(np.mean([out[1] for out in outcomes]))
    failures = int(np.sum([out[2] for out in outcomes]))
    betas = np.array([out[3] for out in outcomes])
    rhat = split_rhat(samples)
    ess = effective_sample_size(samples)
    return ChainResult(
        samples_by_chain=samples,
        acceptance_rate=acceptance,
        failure_count=failures,
        rhat=rhat,
        ess=ess,
        final_betas=betas,
    )


class _GuardedPredictive:
    """Module-level callable so process pools can pickle it."""

    def __init__(self, predictive):
        self.predictive = predictive

    def __call__(self, xi):
        try:
            return self.predictive(xi)
        except SimulationFailed:
            return None


def push_predictive(samples, predictive, workers: int = 1):
    """Evaluate the predictive model on each sample (failures dropped).

    Returns (prediction matrix over successes, failure count).
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    results = parallel_map(_GuardedPredictive(predictive), list(samples), workers=workers)
    good = [r for r in results if r is not None]
    n_failed = len(results) - len(good)
    if not good:
        raise SimulationFailed("every predictive evaluation failed")
    return np.vstack(good), n_failed


def _rank_normalize(values: np.ndarray) -> np.ndarray:
    """Fractional ranks mapped through the standard-normal quantile."""
    flat = values.reshape(-1, values.shape[-1])
    z = np.empty_like(flat)
    n = flat.shape[0]
    for j in range(flat.shape[1]):
        ranks = scipy.stats.rankdata(flat[:, j], method="average")
        z[:, j] = scipy.stats.norm.ppf((ranks - 0.375) / (n + 0.25))
    return z.reshape(values.shape)


def split_rhat(chains: np.ndarray) -> np.ndarray:
    """Rank-normalised split R-hat per coordinate.

    ``chains`` has shape (n_chains, n_samples, dim); each chain is split
    in half so stationarity failures inflate the statistic.
    """
    chains = np.asarray(chains, dtype=float)
    c, n, dim = chains.shape
    half = n // 2
    if half < 2:
        raise ConfigurationError("chains too short for split R-hat")
    splits = np.concatenate([chains[:, :half], chains[:, half : 2 * half]], axis=0)
    z = _rank_normalize(splits)
    chain_means = z.mean(axis=1)
    chain_vars = z.var(axis=1, ddof=1)
    within = chain_vars.mean(axis=0)
    between = half * chain_means.var(axis=0, ddof=1)
    var_hat = (half - 1) / half * within + between / half
    return np.sqrt(var_hat / within)


def effective_sample_size(chains: np.ndarray) -> np.ndarray:
    """Bulk ESS per coordinate via Geyer's initial-monotone estimator."""
    chains = np.asarray(chains, dtype=float)
    c, n, dim = chains.shape
    z = _rank_normalize(chains)
    ess = np.empty(dim)
    for j in range(dim):
        acov = _autocov(z[:, :, j])
        chain_means = z[:, :, j].mean(axis=1)
        within = acov[:, 0].mean() * n / (n - 1)
        var_hat = within * (n - 1) / n + (chain_means.var(ddof=1) if c > 1 else 0.0)
        rho = 1.0 - (within - acov.mean(axis=0)) / var_hat
        # Geyer: accumulate while successive pair sums stay positive
        tau = 1.0
        t = 1
        while t + 1 < n:
            pair = rho[t] + rho[t + 1]
            if pair <= 0:
                break
            tau += 2.0 * pair
            t += 2
        ess[j] = min(c * n / tau, c * n * np.log10(c * n + 10.0))
    return ess


def _autocov(chains_1d: np.ndarray) -> np.ndarray:
    """Per-chain autocovariance (biased, FFT-based); shape (c, n)."""
    c, n = chains_1d.shape
    centred = chains_1d - chains_1d.mean(axis=1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(centred, size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), size, axis=1)[:, :n].real
    return acov / n
