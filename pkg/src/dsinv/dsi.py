"""Data space inversion: ensemble moments, Gaussian conditioning, sampling.

A prior ensemble of (parameter, simulated data, simulated prediction)
triples is reduced to joint sample moments; conditioning those moments
on the observed data gives the predictive mean and covariance directly,
with no further simulations. The data-plus-noise covariance is handled
through a Cholesky solve rather than an explicit inverse, and the
conditional covariance is symmetrised and PSD-clamped before a sampling
factor is built (sample covariances of large prediction vectors are
rank-deficient by construction).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
import scipy.linalg

from ._parallel import parallel_map
from .errors import ConfigurationError, NumericalError, SimulationFailed


class MemberStatus(IntEnum):
    OK = 0
    FAILED = 1
    NON_PHYSICAL = 2


@dataclass
class Ensemble:
    """Aligned prior samples with their simulated data and predictions.

    Rows of failed members hold NaN and are excluded from moments.
    """

    params: np.ndarray  # (n_members, n_params)
    data: np.ndarray  # (n_members, n_data)
    preds: np.ndarray  # (n_members, n_preds)
    status: np.ndarray  # (n_members,), MemberStatus values

    def __post_init__(self):
        self.params = np.atleast_2d(np.asarray(self.params, dtype=float))
        self.data = np.atleast_2d(np.asarray(self.data, dtype=float))
        self.preds = np.atleast_2d(np.asarray(self.preds, dtype=float))
        self.status = np.asarray(self.status, dtype=np.uint8)
        n = self.params.shape[0]
        if self.data.shape[0] != n or self.preds.shape[0] != n or self.status.shape != (n,):
            raise ConfigurationError("ensemble blocks have inconsistent member counts")
        ok = self.success_mask
        for block in (self.data[ok], self.preds[ok]):
            if block.size and not np.all(np.isfinite(block)):
                raise ConfigurationError("successful members contain non-finite values")

    @property
    def n_members(self) -> int:
        return self.params.shape[0]

    @property
    def dims(self) -> tuple:
        return self.params.shape[1], self.data.shape[1], self.preds.shape[1]

    @property
    def success_mask(self) -> np.ndarray:
        return self.status == MemberStatus.OK

    @property
    def n_success(self) -> int:
        return int(np.sum(self.success_mask))

    def take(self, n: int) -> "Ensemble":
        """Leading-member subset (used for sample-size sweeps)."""
        if not 1 <= n <= self.n_members:
            raise ConfigurationError(f"cannot take {n} of {self.n_members} members")
        return Ensemble(
            params=self.params[:n].copy(),
            data=self.data[:n].copy(),
            preds=self.preds[:n].copy(),
            status=self.status[:n].copy(),
        )


@dataclass
class JointMoments:
    """Sample means and joint covariance blocks of (data, predictions)."""

    d0: np.ndarray
    p0: np.ndarray
    cov_dd: np.ndarray
    cov_pp: np.ndarray
    cov_pd: np.ndarray  # (n_preds, n_data)
    n_effective: int

    @property
    def cov_dp(self) -> np.ndarray:
        """Transpose view of cov_pd; equality holds bit-exactly."""
        return self.cov_pd.T


@dataclass
class GaussianConditional:
    """Conditional predictive Gaussian with its sampling factor."""

    mean: np.ndarray
    covariance: np.ndarray
    factor: np.ndarray

    def draw(self, rng: np.random.Generator, n_samples: int) -> np.ndarray:
        xi = rng.standard_normal((n_samples, self.mean.shape[0]))
        return self.mean + xi @ self.factor.T


@dataclass
class _MemberRunner:
    """Module-level callable so process pools can pickle it."""

    forward: object
    predictive: object

    def __call__(self, k):
        try:
            d = np.asarray(self.forward(k), dtype=float)
            p = np.asarray(self.predictive(k), dtype=float)
        except SimulationFailed:
            return None, None, MemberStatus.FAILED
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(p))):
            return None, None, MemberStatus.NON_PHYSICAL
        return d, p, MemberStatus.OK


def build_ensemble(prior_sampler, forward, predictive, n_members: int, seed: int,
                   workers: int = 1) -> Ensemble:
    """Draw prior samples and push each through both models.

    All parameter draws come from one seeded generator before any
    simulation runs, so the ensemble is deterministic for a given seed
    regardless of worker count. Simulation failures are flagged, never
    raised.
    """
    if n_members < 2:
        raise ConfigurationError("need at least 2 ensemble members")
    rng = np.random.default_rng(seed)
    params = [np.asarray(prior_sampler(rng), dtype=float) for _ in range(n_members)]

    outcomes = parallel_map(_MemberRunner(forward, predictive), params, workers=workers)

    first_ok = next((o for o in outcomes if o[2] == MemberStatus.OK), None)
    if first_ok is None:
        raise SimulationFailed("every ensemble member failed")
    n_data, n_preds = first_ok[0].shape[0], first_ok[1].shape[0]

    data = np.full((n_members, n_data), np.nan)
    preds = np.full((n_members, n_preds), np.nan)
    status = np.empty(n_members, dtype=np.uint8)
    for i, (d, p, st) in enumerate(outcomes):
        status[i] = st
        if st == MemberStatus.OK:
            data[i] = d
            preds[i] = p

    ens = Ensemble(params=np.vstack(params), data=data, preds=preds, status=status)
    if ens.n_success < 2:
        raise SimulationFailed(
            f"only {ens.n_success} of {n_members} members succeeded; need at least 2"
        )
    return ens


def _column_means(block: np.ndarray) -> np.ndarray:
    """Compensated column sums: permutation-invariant to the last bit."""
    return np.array([math.fsum(block[:, j]) for j in range(block.shape[1])]) / block.shape[0]


def ensemble_moments(ens: Ensemble) -> JointMoments:
    """Unbiased joint sample moments over the successful members."""
    ok = ens.success_mask
    ell = int(np.sum(ok))
    if ell < 2:
        raise ConfigurationError("moments need at least 2 successful members")
    d = ens.data[ok]
    p = ens.preds[ok]
    d0 = _column_means(d)
    p0 = _column_means(p)
    dc = d - d0
    pc = p - p0
    scale = 1.0 / (ell - 1)
    cov_dd = (dc.T @ dc) * scale
    cov_pp = (pc.T @ pc) * scale
    cov_pd = (pc.T @ dc) * scale
    return JointMoments(
        d0=d0,
        p0=p0,
        cov_dd=0.5 * (cov_dd + cov_dd.T),
        cov_pp=0.5 * (cov_pp + cov_pp.T),
        cov_pd=cov_pd,
        n_effective=ell,
    )


def condition(mom: JointMoments, d_obs, noise_cov) -> GaussianConditional:
    """Condition the joint Gaussian on the observed data.

    mean = p0 + Gpd (Gd + Ge)^-1 (d_obs - d0)
    cov  = Gp - Gpd (Gd + Ge)^-1 Gdp

    computed via a Cholesky factorisation of Gd + Ge.
    """
    d_obs = np.asarray(d_obs, dtype=float)
    noise_cov = np.atleast_2d(np.asarray(noise_cov, dtype=float))
    if d_obs.shape != mom.d0.shape:
        raise ConfigurationError("observed data length does not match ensemble data")
    if noise_cov.shape != mom.cov_dd.shape:
        raise ConfigurationError("noise covariance shape does not match data covariance")

    gamma_de = mom.cov_dd + noise_cov
    gamma_de = 0.5 * (gamma_de + gamma_de.T)
    try:
        chol = scipy.linalg.cho_factor(gamma_de, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(
            "data-plus-noise covariance is not positive definite "
            "(is the noise model misconfigured?)"
        ) from exc

    innovation = d_obs - mom.d0
    mean = mom.p0 + mom.cov_pd @ scipy.linalg.cho_solve(chol, innovation)
    reduction = mom.cov_pd @ scipy.linalg.cho_solve(chol, mom.cov_pd.T)
    cov_raw = mom.cov_pp - reduction
    m = cov_raw.shape[0]
    floor = 1.0e-12 * max(float(np.trace(mom.cov_pp)), 0.0) / max(m, 1)
    cov, factor = _psd_factor(cov_raw, floor)
    return GaussianConditional(mean=mean, covariance=cov, factor=factor)


def _psd_factor(cov: np.ndarray, floor: float) -> tuple[np.ndarray, np.ndarray]:
    cov = 0.5 * (cov + cov.T)
    try:
        vals, vecs = scipy.linalg.eigh(cov)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(f"conditional covariance eigendecomposition failed: {exc}") from exc
    vals = np.maximum(vals, floor)
    cov_fixed = (vecs * vals) @ vecs.T
    factor = (vecs * np.sqrt(vals)) @ vecs.T
    return 0.5 * (cov_fixed + cov_fixed.T), 0.5 * (factor + factor.T)


def sample_conditional(cond: GaussianConditional, xi) -> np.ndarray:
    """mean + factor @ xi for a standard-normal xi."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != cond.mean.shape:
        raise ConfigurationError("xi length does not match the prediction dimension")
    return cond.mean + cond.factor @ xi


def apply_transform(transform, ens: Ensemble) -> Ensemble:
    """Transformed copy of an ensemble (predictions re-expressed)."""
    ok_idx = np.flatnonzero(ens.success_mask)
    preds = ens.preds.copy()
    for i in ok_idx:
        try:
            preds[i] = transform.forward(ens.preds[i])
        except ConfigurationError as exc:
            raise ConfigurationError(f"transform rejected ensemble member {i}: {exc}") from exc
    return Ensemble(params=ens.params.copy(), data=ens.data.copy(), preds=preds,
                    status=ens.status.copy())


def dsi_pipeline(ens: Ensemble, d_obs, noise_cov, transform=None,
                 n_samples: int = 1000, seed: int = 0) -> np.ndarray:
    """Moments -> (transform) -> condition -> sample -> (inverse transform).

    Everything after the ensemble is matrix algebra; no simulations run
    here. Returns an (n_samples, n_preds) matrix of posterior
    predictive samples.
    """
    work = apply_transform(transform, ens) if transform is not None else ens
    mom = ensemble_moments(work)
    cond = condition(mom, d_obs, noise_cov)
    rng = np.random.default_rng(seed)
    samples = cond.draw(rng, n_samples)
    if transform is not None:
        samples = np.vstack([transform.inverse(row) for row in samples])
    return samples
