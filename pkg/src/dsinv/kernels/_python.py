"""Pure-Python (scipy) implementation of the implicit pressure kernel.

The implicit system for one backward-Euler step is

    (accum * I + Lap) p_new = accum * p_prev + s

where ``accum = c * phi * V / dt`` and ``Lap`` is the SPD graph
Laplacian built from the face conductances ``tx``/``ty`` (harmonic
permeability times face area over distance, divided by viscosity).
The matrix is constant across steps, so it is factorised once per call
with a banded Cholesky and reused for every step.
"""

import numpy as np
import scipy.linalg

from ..errors import SimulationFailed


def bandwidth(nx: int, ny: int) -> int:
    if ny > 1:
        return nx
    return 1 if nx > 1 else 0


def banded_system(nx, ny, tx, ty, accum):
    """Lower-banded storage (scipy layout) of accum*I + Lap."""
    n = nx * ny
    kd = bandwidth(nx, ny)
    ab = np.zeros((kd + 1, n))
    diag = np.full((ny, nx), float(accum))
    if nx > 1:
        diag[:, :-1] += tx
        diag[:, 1:] += tx
    if ny > 1:
        diag[:-1, :] += ty
        diag[1:, :] += ty
    ab[0] = diag.ravel()
    if nx > 1:
        off = np.zeros((ny, nx))
        off[:, :-1] = -tx
        ab[1] = off.ravel()
    if ny > 1:
        ab[kd, : n - nx] = -ty.ravel()
    return ab


def run_pressure_steps(nx, ny, tx, ty, accum, sources, steps_per_segment, p_init):
    """Backward-Euler time stepping with a piecewise-constant source.

    Parameters
    ----------
    nx, ny : grid cell counts.
    tx, ty : (ny, nx-1) and (ny-1, nx) face conductances [m^3 / (Pa s)].
    accum : c * phi * V / dt [m^3 / (Pa s)].
    sources : (n_segments, n_cells) volumetric source per cell [m^3/s].
    steps_per_segment : number of steps spent in each segment.
    p_init : (n_cells,) initial pressure [Pa].

    Returns
    -------
    (1 + total_steps, n_cells) array of pressure states, row 0 = p_init.
    """
    n = nx * ny
    ab = banded_system(nx, ny, tx, ty, accum)
    try:
        factor = scipy.linalg.cholesky_banded(ab, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise SimulationFailed(f"implicit system factorisation failed: {exc}") from exc

    n_total = int(np.sum(steps_per_segment))
    states = np.empty((n_total + 1, n))
    states[0] = p_init
    p = states[0]
    row = 1
    # non-finite values propagate through the solves and are caught by
    # the final scan, so per-call checks are skipped
    for seg in range(len(steps_per_segment)):
        s = sources[seg]
        for _ in range(int(steps_per_segment[seg])):
            p = scipy.linalg.cho_solve_banded((factor, True), accum * p + s,
                                              check_finite=False)
            states[row] = p
            row += 1
    if not np.all(np.isfinite(states)):
        raise SimulationFailed("pressure state became non-finite")
    return states
