"""Gaussian random field prior on a structured 2D grid.

Provides the squared-exponential covariance, its truncated
Karhunen-Loeve basis, and log-permeability field sampling. Fields are
stored cell-wise in row-major order with x varying fastest:
``values[ix + nx * iy]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, NumericalError

# Tolerance for mutual orthonormality of KL modes.
ORTHO_TOL = 1.0e-8


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred grid on (0, lx) x (0, ly)."""

    nx: int
    ny: int
    lx: float
    ly: float

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ConfigurationError(f"cell counts must be >= 1, got {self.nx}x{self.ny}")
        if self.lx <= 0 or self.ly <= 0:
            raise ConfigurationError(f"domain extent must be positive, got {self.lx}x{self.ly}")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def dy(self) -> float:
        return self.ly / self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    def cell_centers(self) -> np.ndarray:
        """(n_cells, 2) array of cell-centre coordinates, x fastest."""
        xs = (np.arange(self.nx) + 0.5) * self.dx
        ys = (np.arange(self.ny) + 0.5) * self.dy
        xg, yg = np.meshgrid(xs, ys)
        return np.column_stack([xg.ravel(), yg.ravel()])

    def cell_index(self, x: float, y: float) -> int:
        """Index of the cell containing the point (x, y)."""
        if not (0.0 <= x <= self.lx and 0.0 <= y <= self.ly):
            raise ConfigurationError(f"point ({x}, {y}) outside domain ({self.lx} x {self.ly})")
        ix = min(int(x / self.dx), self.nx - 1)
        iy = min(int(y / self.dy), self.ny - 1)
        return ix + self.nx * iy


@dataclass(frozen=True)
class CovarianceModel:
    """Squared-exponential covariance with a constant mean."""

    sigma: float
    lengthscale: float
    mean: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigurationError(f"sigma must be positive, got {self.sigma}")
        if self.lengthscale <= 0:
            raise ConfigurationError(f"lengthscale must be positive, got {self.lengthscale}")


@dataclass
class Field:
    """Scalar quantity on a grid (log-permeability, permeability, pressure)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_cells,):
            raise ConfigurationError(
                f"field length {self.values.shape} does not match grid with "
                f"{self.grid.n_cells} cells"
            )
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("field contains non-finite values")

    def as_2d(self) -> np.ndarray:
        """(ny, nx) view of the values."""
        return self.values.reshape(self.grid.ny, self.grid.nx)


@dataclass
class KLBasis:
    """Truncated Karhunen-Loeve basis of a discretised GRF covariance.

    ``modes`` holds one orthonormal grid vector per column; eigenvalues
    are sorted in descending order with small negatives clamped to zero.
    Immutable once built and safe to share across workers.
    """

    grid: Grid
    eigenvalues: np.ndarray
    modes: np.ndarray
    mean: np.ndarray
    cov_trace: float
    _sqrt_eigenvalues: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=float)
        self.modes = np.asarray(self.modes, dtype=float)
        self.mean = np.asarray(self.mean, dtype=float)
        n = self.grid.n_cells
        if self.modes.shape != (n, self.n_modes):
            raise ConfigurationError(
                f"mode matrix shape {self.modes.shape} does not match "
                f"({n}, {self.n_modes})"
            )
        if self.mean.shape != (n,):
            raise ConfigurationError("mean vector length does not match the grid")
        if self.n_modes > n:
            raise ConfigurationError("more modes than grid cells")
        if np.any(np.diff(self.eigenvalues) > 0):
            raise NumericalError("eigenvalues are not sorted in descending order")
        if np.any(self.eigenvalues < 0):
            raise NumericalError("negative eigenvalue after clamping")
        gram = self.modes.T @ self.modes
        if not np.allclose(gram, np.eye(self.n_modes), atol=ORTHO_TOL):
            raise NumericalError("KL modes are not orthonormal")
        self._sqrt_eigenvalues = np.sqrt(self.eigenvalues)

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def retained_fraction(self) -> float:
        """Fraction of the covariance trace captured by the retained modes."""
        return float(np.sum(self.eigenvalues) / self.cov_trace)


def build_covariance_matrix(grid: Grid, model: CovarianceModel) -> np.ndarray:
    """Dense covariance matrix at the cell centres.

    Entry (i, j) is sigma^2 * exp(-|x_i - x_j|^2 / (2 l^2)).
    """
    centers = grid.cell_centers()
    sq_dists = (
        np.sum(centers**2, axis=1)[:, None]
        + np.sum(centers**2, axis=1)[None, :]
        - 2.0 * (centers @ centers.T)
    )
    np.maximum(sq_dists, 0.0, out=sq_dists)
    cov = model.sigma**2 * np.exp(-sq_dists / (2.0 * model.lengthscale**2))
    # exact symmetry and unit diagonal scale, free of rounding noise
    cov = 0.5 * (cov + cov.T)
    np.fill_diagonal(cov, model.sigma**2)
    return cov


def truncated_kl(
    cov: np.ndarray,
    n_modes: int,
    grid: Grid,
    mean: float | np.ndarray = 0.0,
) -> KLBasis:
    """KL basis from the ``n_modes`` largest eigenpairs of ``cov``.

    Squared-exponential matrices are numerically rank-deficient, so
    eigenvalues slightly below zero are clamped; anything below
    -1e-8 * trace signals a broken covariance and raises.
    """
    cov = np.asarray(cov, dtype=float)
    n = cov.shape[0]
    if cov.shape != (n, n):
        raise ConfigurationError(f"covariance must be square, got {cov.shape}")
    if n != grid.n_cells:
        raise ConfigurationError("covariance dimension does not match the grid")
    if not (1 <= n_modes <= n):
        raise ConfigurationError(f"n_modes must be in [1, {n}], got {n_modes}")
    if not np.allclose(cov, cov.T, atol=1e-10 * max(1.0, float(np.abs(cov).max()))):
        raise ConfigurationError("covariance matrix is not symmetric")

    trace = float(np.trace(cov))
    eps_eig = 1.0e-8 * trace
    try:
        # full dense decomposition, then truncate: grids stay small
        # enough (<= 6400 cells) and the whole spectrum gets checked
        eigvals, eigvecs = scipy.linalg.eigh(cov)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    if eigvals[0] < -eps_eig:
        raise NumericalError(
            f"eigenvalue {eigvals[0]:.3e} below -{eps_eig:.3e}: covariance is broken"
        )
    # eigh returns ascending order
    eigvals = np.maximum(eigvals[::-1][:n_modes], 0.0)
    eigvecs = eigvecs[:, ::-1][:, :n_modes]

    mean_vec = np.broadcast_to(np.asarray(mean, dtype=float), (n,)).copy()
    return KLBasis(
        grid=grid,
        eigenvalues=eigvals,
        modes=np.ascontiguousarray(eigvecs),
        mean=mean_vec,
        cov_trace=trace,
    )


def build_kl_basis(grid: Grid, model: CovarianceModel, n_modes: int) -> KLBasis:
    """Covariance assembly and truncation in one step."""
    cov = build_covariance_matrix(grid, model)
    return truncated_kl(cov, n_modes, grid, mean=model.mean)


def sample_field(basis: KLBasis, xi: np.ndarray) -> Field:
    """Log-permeability field mean + sum_i sqrt(lambda_i) v_i xi_i."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (basis.n_modes,):
        raise ConfigurationError(
            f"coefficient vector has length {xi.shape}, expected {basis.n_modes}"
        )
    values = basis.mean + basis.modes @ (basis._sqrt_eigenvalues * xi)
    return Field(grid=basis.grid, values=values)


def exp_field(u: Field) -> Field:
    """Cell-wise exponential, mapping log-permeability to permeability."""
    return Field(grid=u.grid, values=np.exp(u.values))
