"""Forward model for the 2D single-phase, slightly compressible reservoir.

Cell-centred finite differences with harmonic face permeabilities,
no-flux boundaries, backward-Euler time stepping and extraction wells
deposited into their containing cells. Volumetric well rates are
converted to 2D sources through a unit out-of-plane thickness.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

from . import kernels
from .errors import ConfigurationError
from .grf import Field, Grid
from .units import SECONDS_PER_DAY

THICKNESS = 1.0  # m, out-of-plane


@dataclass(frozen=True)
class FluidConfig:
    """Fluid and rock constants for the pressure equation."""

    compressibility: float  # Pa^-1
    viscosity: float  # Pa s
    porosity: float
    initial_pressure: float  # Pa

    def __post_init__(self):
        for name in ("compressibility", "viscosity", "porosity", "initial_pressure"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be strictly positive")


@dataclass
class WellSchedule:
    """Piecewise-constant extraction schedule for a set of wells.

    Rates are stored positive for extraction (m^3/s of fluid removed);
    the solver applies the sign. ``segment_ends`` are the cumulative
    segment end times in seconds, the last being the horizon.
    """

    well_positions: np.ndarray  # (n_wells, 2), metres
    segment_ends: np.ndarray  # (n_segments,), seconds
    rates: np.ndarray  # (n_segments, n_wells), m^3/s

    def __post_init__(self):
        self.well_positions = np.atleast_2d(np.asarray(self.well_positions, dtype=float))
        self.segment_ends = np.asarray(self.segment_ends, dtype=float)
        self.rates = np.atleast_2d(np.asarray(self.rates, dtype=float))
        n_seg = self.segment_ends.shape[0]
        if self.rates.shape != (n_seg, self.n_wells):
            raise ConfigurationError(
                f"rates shape {self.rates.shape} does not match "
                f"({n_seg} segments, {self.n_wells} wells)"
            )
        if n_seg == 0:
            raise ConfigurationError("schedule needs at least one segment")
        if self.segment_ends[0] <= 0 or np.any(np.diff(self.segment_ends) <= 0):
            raise ConfigurationError("segment ends must be positive and strictly increasing")
        if np.any(self.rates < 0):
            raise ConfigurationError("extraction rates must be non-negative")

    @property
    def n_wells(self) -> int:
        return self.well_positions.shape[0]

    @property
    def horizon(self) -> float:
        return float(self.segment_ends[-1])

    @property
    def segment_durations(self) -> np.ndarray:
        return np.diff(self.segment_ends, prepend=0.0)

    @classmethod
    def from_days(cls, well_positions, segment_ends_days, rates_m3_per_day) -> "WellSchedule":
        """Build from day/m^3-per-day quantities used at the config boundary."""
        ends = np.asarray(segment_ends_days, dtype=float) * SECONDS_PER_DAY
        rates = np.asarray(rates_m3_per_day, dtype=float) / SECONDS_PER_DAY
        return cls(well_positions=well_positions, segment_ends=ends, rates=rates)


@dataclass
class WellTimeDesign:
    """Which wells to sample, and when (times in seconds).

    Output ordering is well-major, time-minor: all times for the first
    well, then all times for the second, and so on.
    """

    well_indices: tuple
    positions: np.ndarray  # (n_selected, 2), metres
    times: np.ndarray  # seconds

    def __post_init__(self):
        self.well_indices = tuple(int(w) for w in self.well_indices)
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        self.times = np.asarray(self.times, dtype=float)
        if self.positions.shape[0] != len(self.well_indices):
            raise ConfigurationError("one position per well index required")
        if self.times.size == 0:
            raise ConfigurationError("design needs at least one sample time")

    @property
    def size(self) -> int:
        return len(self.well_indices) * self.times.shape[0]

    @classmethod
    def from_schedule(cls, schedule: WellSchedule, well_indices, times) -> "WellTimeDesign":
        idx = tuple(int(w) for w in well_indices)
        return cls(
            well_indices=idx,
            positions=schedule.well_positions[list(idx)],
            times=np.asarray(times, dtype=float),
        )


@dataclass
class PressureHistory:
    """Pressure states at the solver output instants."""

    grid: Grid
    times: np.ndarray  # (n_times,), seconds, starting at 0
    states: np.ndarray  # (n_times, n_cells), Pa

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.times[0] != 0.0 or np.any(np.diff(self.times) <= 0):
            raise ConfigurationError("output times must start at 0 and increase strictly")
        if self.states.shape != (self.times.shape[0], self.grid.n_cells):
            raise ConfigurationError("state matrix shape does not match times/grid")

    def field_at(self, index: int) -> Field:
        return Field(grid=self.grid, values=self.states[index].copy())

    def time_index(self, t: float) -> int:
        idx = int(np.argmin(np.abs(self.times - t)))
        if not np.isclose(self.times[idx], t, rtol=1e-9, atol=1e-6):
            raise ConfigurationError(f"time {t} s is not a solver output instant")
        return idx


@dataclass
class Operator:
    """Discrete diffusion operator: face transmissibilities plus volume scaling.

    ``tx``/``ty`` hold harmonic-mean face transmissibilities
    k_f * A_f / d [m^3]; the graph Laplacian they induce is symmetric
    negative semidefinite with constant fields in its null space.
    """

    grid: Grid
    fluid: FluidConfig
    tx: np.ndarray  # (ny, nx-1)
    ty: np.ndarray  # (ny-1, nx)
    _factor_cache: dict = field(default_factory=dict, repr=False)

    @property
    def cell_volume(self) -> float:
        return self.grid.cell_area * THICKNESS

    def matrix(self) -> scipy.sparse.csr_matrix:
        """Sparse L with (L p)_c = sum_faces T_f (p_nb - p_c)."""
        grid = self.grid
        nx, ny, n = grid.nx, grid.ny, grid.n_cells
        rows, cols, vals = [], [], []
        diag = np.zeros(n)

        def couple(a, b, t):
            rows.extend((a, b))
            cols.extend((b, a))
            vals.extend((t, t))
            diag[a] -= t
            diag[b] -= t

        for iy in range(ny):
            for ix in range(nx - 1):
                c = ix + nx * iy
                couple(c, c + 1, self.tx[iy, ix])
        for iy in range(ny - 1):
            for ix in range(nx):
                c = ix + nx * iy
                couple(c, c + nx, self.ty[iy, ix])
        rows.extend(range(n))
        cols.extend(range(n))
        vals.extend(diag)
        return scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def assemble_operator(grid: Grid, perm: Field, fluid: FluidConfig) -> Operator:
    """Face transmissibilities from a cell-wise permeability field.

    Interior faces use the harmonic mean of the adjacent cell
    permeabilities; boundary faces carry no flux and simply do not
    appear.
    """
    if perm.grid != grid:
        raise ConfigurationError("permeability field lives on a different grid")
    k = perm.as_2d()
    if np.any(k <= 0):
        raise ConfigurationError("permeability must be strictly positive everywhere")
    dx, dy = grid.dx, grid.dy
    kx_l, kx_r = k[:, :-1], k[:, 1:]
    tx = (2.0 * kx_l * kx_r / (kx_l + kx_r)) * (dy * THICKNESS / dx)
    ky_l, ky_r = k[:-1, :], k[1:, :]
    ty = (2.0 * ky_l * ky_r / (ky_l + ky_r)) * (dx * THICKNESS / dy)
    return Operator(grid=grid, fluid=fluid, tx=tx, ty=ty)


def step(p_prev: Field, dt: float, operator: Operator, sources: Field) -> Field:
    """One backward-Euler step.

    ``sources`` is the per-volume rate field (1/s); extraction wells
    contribute -q / (cell area * thickness) in their containing cell.
    """
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    grid = operator.grid
    fluid = operator.fluid
    vol = operator.cell_volume
    accum = fluid.compressibility * fluid.porosity * vol / dt
    states = kernels.run_pressure_steps(
        grid.nx,
        grid.ny,
        operator.tx / fluid.viscosity,
        operator.ty / fluid.viscosity,
        accum,
        (sources.values * vol)[None, :],
        np.array([1], dtype=np.int64),
        p_prev.values,
    )
    return Field(grid=grid, values=states[1])


def simulate(perm: Field, schedule: WellSchedule, fluid: FluidConfig, dt: float) -> PressureHistory:
    """Time-step the reservoir from uniform initial pressure over the horizon.

    ``dt`` must divide every schedule segment. Raises SimulationFailed
    if the solver produces a non-finite state; callers running
    ensembles catch this and flag the member instead of aborting.
    """
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    grid = perm.grid
    operator = assemble_operator(grid, perm, fluid)

    durations = schedule.segment_durations
    steps = np.rint(durations / dt).astype(np.int64)
    if np.any(steps < 1) or not np.allclose(steps * dt, durations, rtol=1e-9, atol=1e-6):
        raise ConfigurationError("dt must divide every schedule segment exactly")

    well_cells = [grid.cell_index(x, y) for x, y in schedule.well_positions]
    n_seg = schedule.segment_ends.shape[0]
    sources = np.zeros((n_seg, grid.n_cells))
    for seg in range(n_seg):
        for w, cell in enumerate(well_cells):
            sources[seg, cell] -= schedule.rates[seg, w]

    vol = operator.cell_volume
    accum = fluid.compressibility * fluid.porosity * vol / dt
    p_init = np.full(grid.n_cells, fluid.initial_pressure)
    states = kernels.run_pressure_steps(
        grid.nx,
        grid.ny,
        operator.tx / fluid.viscosity,
        operator.ty / fluid.viscosity,
        accum,
        sources,
        steps,
        p_init,
    )
    times = np.arange(states.shape[0]) * dt
    return PressureHistory(grid=grid, times=times, states=states)


def _extract(history: PressureHistory, design: WellTimeDesign) -> np.ndarray:
    cells = [history.grid.cell_index(x, y) for x, y in design.positions]
    t_idx = [history.time_index(t) for t in design.times]
    out = np.empty(design.size)
    k = 0
    for cell in cells:
        for ti in t_idx:
            out[k] = history.states[ti, cell]
            k += 1
    return out


def observe(history: PressureHistory, design: WellTimeDesign) -> np.ndarray:
    """Well-cell pressures at the design times (well-major, time-minor)."""
    return _extract(history, design)


def predict(history: PressureHistory, design: WellTimeDesign) -> np.ndarray:
    """Same extraction as ``observe``, over the prediction design."""
    return _extract(history, design)
