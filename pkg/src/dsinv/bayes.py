"""MAP estimation and linearised uncertainty propagation.

Inference runs in KL coefficient coordinates, where the prior is the
standard normal: the posterior covariance approximation is
(F' Ge^-1 F + I)^-1 with F the finite-difference Jacobian of the
forward model at the MAP point, and predictive uncertainty is pushed
through the Jacobian of the predictive model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from ._parallel import parallel_map
from .errors import ConfigurationError, NumericalError, SimulationFailed

FD_STEP = 1.0e-4  # KL coefficients are order-1


@dataclass
class NoiseModel:
    """Gaussian observation noise with an SPD covariance."""

    covariance: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.covariance = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        d = self.covariance.shape[0]
        if self.covariance.shape != (d, d):
            raise ConfigurationError("noise covariance must be square")
        if not np.allclose(self.covariance, self.covariance.T, rtol=1e-12, atol=0):
            raise ConfigurationError("noise covariance must be symmetric")
        try:
            self._chol = scipy.linalg.cholesky(self.covariance, lower=True)
        except scipy.linalg.LinAlgError as exc:
            raise ConfigurationError("noise covariance is not positive definite") from exc

    @classmethod
    def iid(cls, std: float, dim: int) -> "NoiseModel":
        if std <= 0:
            raise ConfigurationError("noise std must be positive")
        return cls(covariance=np.eye(dim) * std**2)

    @property
    def dim(self) -> int:
        return self.covariance.shape[0]

    def whiten(self, residual: np.ndarray) -> np.ndarray:
        """L^-1 r, so that |whiten(r)|^2 = r' Ge^-1 r."""
        return scipy.linalg.solve_triangular(self._chol, residual, lower=True)

    def sample(self, rng: np.random.Generator, size=None) -> np.ndarray:
        shape = (self.dim,) if size is None else (size, self.dim)
        return rng.standard_normal(shape) @ self._chol.T


@dataclass(frozen=True)
class GaussianPrior:
    """Prior over parameter coefficients; standard normal in KL coordinates."""

    dim: int

    @property
    def mean(self) -> np.ndarray:
        return np.zeros(self.dim)

    @property
    def covariance(self) -> np.ndarray:
        return np.eye(self.dim)


def symmetric_factor(cov: np.ndarray, floor: float = 1.0e-12) -> tuple[np.ndarray, np.ndarray]:
    """PSD-clamped covariance and a symmetric L with L L' = cov.

    Eigenvalues below ``floor`` are raised to it; the returned pair is
    exactly consistent (the covariance is rebuilt from the clamped
    spectrum).
    """
    cov = 0.5 * (cov + cov.T)
    try:
        vals, vecs = scipy.linalg.eigh(cov)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(f"covariance eigendecomposition failed: {exc}") from exc
    vals = np.maximum(vals, floor)
    cov_fixed = (vecs * vals) @ vecs.T
    factor = (vecs * np.sqrt(vals)) @ vecs.T
    return 0.5 * (cov_fixed + cov_fixed.T), 0.5 * (factor + factor.T)


@dataclass
class LinearizedPosterior:
    """MAP point with the local Gaussian approximation around it."""

    k_map: np.ndarray
    covariance: np.ndarray
    factor: np.ndarray
    converged: bool
    n_iterations: int
    solve_count: int
    objective_trace: list

    def report_lines(self) -> list:
        """Machine-readable run log, one JSON object per line."""
        lines = [
            json.dumps(
                {
                    "event": "iteration",
                    "iteration": i,
                    "objective": entry["objective"],
                    "grad_norm": entry["grad_norm"],
                    "step_length": entry["step_length"],
                    "solves": entry["solves"],
                }
            )
            for i, entry in enumerate(self.objective_trace)
        ]
        lines.append(
            json.dumps(
                {
                    "event": "summary",
                    "converged": self.converged,
                    "iterations": self.n_iterations,
                    "forward_like_solves": self.solve_count,
                }
            )
        )
        return lines


def neg_log_posterior(xi, d_obs, forward, noise: NoiseModel) -> float:
    """0.5 |d_obs - f(xi)|^2 in whitened data space + 0.5 |xi|^2."""
    xi = np.asarray(xi, dtype=float)
    residual = noise.whiten(np.asarray(d_obs, dtype=float) - forward(xi))
    return 0.5 * float(residual @ residual) + 0.5 * float(xi @ xi)


def jacobian(forward, xi, h: float = FD_STEP, workers: int = 1) -> np.ndarray:
    """Central finite-difference Jacobian, one column per coefficient."""
    xi = np.asarray(xi, dtype=float)
    n = xi.shape[0]
    points = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        points.append(xi + e)
        points.append(xi - e)
    values = parallel_map(forward, points, workers=workers)
    cols = [(values[2 * j] - values[2 * j + 1]) / (2.0 * h) for j in range(n)]
    return np.column_stack(cols)


def sample_gaussian(mean, factor, eta) -> np.ndarray:
    """mean + factor @ eta for a standard-normal eta."""
    mean = np.asarray(mean, dtype=float)
    factor = np.asarray(factor, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if factor.shape[1] != eta.shape[0]:
        raise ConfigurationError("factor and eta dimensions do not match")
    return mean + factor @ eta


def _cg(apply_h, rhs, tol, max_iter):
    """Conjugate gradients for the SPD Gauss-Newton system."""
    x = np.zeros_like(rhs)
    r = rhs.copy()
    p = r.copy()
    rs = float(r @ r)
    target = tol * np.sqrt(rs)
    for _ in range(max_iter):
        if np.sqrt(rs) <= target:
            break
        hp = apply_h(p)
        alpha = rs / float(p @ hp)
        x += alpha * p
        r -= alpha * hp
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


@dataclass
class MapOptions:
    max_iterations: int = 30
    grad_tol: float = 1.0e-6
    fd_step: float = FD_STEP
    max_halvings: int = 20
    workers: int = 1


def map_estimate(d_obs, forward, noise: NoiseModel, n_params: int,
                 options: MapOptions | None = None) -> LinearizedPosterior:
    """Gauss-Newton MAP search with CG inner solves and Armijo backtracking.

    Terminates when the gradient norm falls below ``grad_tol`` relative
    to its initial value (or absolutely, whichever is larger), or at the
    iteration cap; the best iterate is returned either way, with
    ``converged`` recording which. Every forward evaluation is counted
    as one forward-like solve.
    """
    opts = options or MapOptions()
    d_obs = np.asarray(d_obs, dtype=float)
    counter = {"solves": 0}

    def f(xi):
        counter["solves"] += 1
        return forward(xi)

    def objective(xi, fx):
        r = noise.whiten(d_obs - fx)
        return 0.5 * float(r @ r) + 0.5 * float(xi @ xi)

    xi = np.zeros(n_params)
    fx = f(xi)
    obj = objective(xi, fx)
    trace = []
    converged = False
    grad_norm0 = None
    iteration = 0

    for iteration in range(1, opts.max_iterations + 1):
        jac = jacobian(forward, xi, h=opts.fd_step, workers=opts.workers)
        counter["solves"] += 2 * n_params
        jac_w = noise.whiten(jac)
        res_w = noise.whiten(d_obs - fx)
        grad = -(jac_w.T @ res_w) + xi
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm0 is None:
            grad_norm0 = grad_norm
        if grad_norm <= opts.grad_tol * max(1.0, grad_norm0):
            converged = True
            trace.append(
                {"objective": obj, "grad_norm": grad_norm, "step_length": 0.0,
                 "solves": counter["solves"]}
            )
            break

        def apply_h(v, _jw=jac_w):
            return _jw.T @ (_jw @ v) + v

        # inexact Newton forcing: tighter as the gradient shrinks
        cg_tol = min(0.5, np.sqrt(grad_norm / max(grad_norm0, 1e-300)))
        direction = _cg(apply_h, -grad, tol=cg_tol, max_iter=4 * n_params)

        step_len = 1.0
        slope = float(grad @ direction)
        accepted = False
        for _ in range(opts.max_halvings + 1):
            candidate = xi + step_len * direction
            try:
                f_cand = f(candidate)
                obj_cand = objective(candidate, f_cand)
            except SimulationFailed:
                obj_cand = np.inf
            if np.isfinite(obj_cand) and obj_cand <= obj + 1.0e-4 * step_len * slope:
                accepted = True
                break
            step_len *= 0.5
        if not accepted:
            trace.append(
                {"objective": obj, "grad_norm": grad_norm, "step_length": 0.0,
                 "solves": counter["solves"]}
            )
            break
        xi, fx, obj = candidate, f_cand, obj_cand
        trace.append(
            {"objective": obj, "grad_norm": grad_norm, "step_length": step_len,
             "solves": counter["solves"]}
        )

    jac = jacobian(forward, xi, h=opts.fd_step, workers=opts.workers)
    counter["solves"] += 2 * n_params
    jac_w = noise.whiten(jac)
    hessian = jac_w.T @ jac_w + np.eye(n_params)
    vals, vecs = scipy.linalg.eigh(hessian)
    inv_vals = np.maximum(1.0 / vals, 1.0e-12)
    cov = (vecs * inv_vals) @ vecs.T
    factor = (vecs * np.sqrt(inv_vals)) @ vecs.T

    return LinearizedPosterior(
        k_map=xi,
        covariance=0.5 * (cov + cov.T),
        factor=0.5 * (factor + factor.T),
        converged=converged,
        n_iterations=iteration,
        solve_count=counter["solves"],
        objective_trace=trace,
    )


@dataclass
class PredictiveGaussian:
    """Gaussian approximation of the posterior predictive distribution."""

    mean: np.ndarray
    covariance: np.ndarray
    factor: np.ndarray

    def draw(self, rng: np.random.Generator, n_samples: int) -> np.ndarray:
        eta = rng.standard_normal((n_samples, self.mean.shape[0]))
        return self.mean + eta @ self.factor.T


def linearized_predictive(posterior: LinearizedPosterior, predictive,
                          h: float = FD_STEP, workers: int = 1) -> PredictiveGaussian:
    """Push the posterior Gaussian through the linearised predictive model."""
    q_map = np.asarray(predictive(posterior.k_map), dtype=float)
    q_jac = jacobian(predictive, posterior.k_map, h=h, workers=workers)
    cov = q_jac @ posterior.covariance @ q_jac.T
    cov, factor = symmetric_factor(cov, floor=1.0e-12 * max(1.0, float(np.trace(cov)) / max(cov.shape[0], 1)))
    return PredictiveGaussian(mean=q_map, covariance=cov, factor=factor)
