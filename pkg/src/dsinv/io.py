"""Binary file formats and CSV exports.

All formats are little-endian with fixed headers and raw float64
payloads, and embed provenance (seed and config hash) so downstream
consumers can refuse mixed inputs. Writers are deterministic: the same
inputs produce byte-identical files.

Field file (magic ``DSF1``)::

    magic        4s
    nx, ny       uint32  cell counts
    lx, ly       float64 domain extent (m)
    seed         uint64
    config_hash  16s     ascii hex, zero-padded
    payload      nx*ny float64, index = ix + nx*iy

KL basis file (magic ``DSKL``)::

    magic, nx, ny, n_modes, lx, ly, cov_trace, seed, config_hash
    payload: mean (n), eigenvalues (n_modes), modes (n x n_modes, row-major)

Ensemble matrix file (magic ``DSEN``)::

    magic        4s
    n_members    uint64
    n_params, n_data, n_preds   uint32
    seed         uint64
    config_hash  16s
    status       n_members uint8
    payload: params, data, preds blocks (row-major float64; failed
    member rows hold NaN)

Plain sample matrices reuse the ensemble format with empty parameter
and data blocks.
"""

from __future__ import annotations

import csv
import struct

import numpy as np

from .dsi import Ensemble, MemberStatus
from .errors import ConfigurationError
from .grf import Field, Grid, KLBasis

FIELD_MAGIC = b"DSF1"
KL_MAGIC = b"DSKL"
ENSEMBLE_MAGIC = b"DSEN"

_FIELD_HEADER = struct.Struct("<4sIIddQ16s")
_KL_HEADER = struct.Struct("<4sIIIdddQ16s")
_ENSEMBLE_HEADER = struct.Struct("<4sQIIIQ16s")


def _hash_bytes(config_hash: str) -> bytes:
    raw = config_hash.encode("ascii")
    if len(raw) > 16:
        raise ConfigurationError("config hash must be at most 16 characters")
    return raw.ljust(16, b"\0")


def _hash_str(raw: bytes) -> str:
    return raw.rstrip(b"\0").decode("ascii")


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ConfigurationError("file truncated")
    return buf


def _read_floats(fh, count: int) -> np.ndarray:
    return np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8").copy()


def write_field(path, field: Field, seed: int = 0, config_hash: str = "") -> None:
    grid = field.grid
    with open(path, "wb") as fh:
        fh.write(
            _FIELD_HEADER.pack(
                FIELD_MAGIC, grid.nx, grid.ny, grid.lx, grid.ly, seed, _hash_bytes(config_hash)
            )
        )
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_field(path):
    """Returns (Field, metadata dict)."""
    with open(path, "rb") as fh:
        magic, nx, ny, lx, ly, seed, hash_raw = _FIELD_HEADER.unpack(
            _read_exact(fh, _FIELD_HEADER.size)
        )
        if magic != FIELD_MAGIC:
            raise ConfigurationError(f"not a field file: bad magic {magic!r}")
        grid = Grid(nx=nx, ny=ny, lx=lx, ly=ly)
        values = _read_floats(fh, grid.n_cells)
    return Field(grid=grid, values=values), {"seed": seed, "config_hash": _hash_str(hash_raw)}


def write_kl_basis(path, basis: KLBasis, seed: int = 0, config_hash: str = "") -> None:
    grid = basis.grid
    with open(path, "wb") as fh:
        fh.write(
            _KL_HEADER.pack(
                KL_MAGIC, grid.nx, grid.ny, basis.n_modes, grid.lx, grid.ly,
                basis.cov_trace, seed, _hash_bytes(config_hash),
            )
        )
        fh.write(np.ascontiguousarray(basis.mean, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(basis.eigenvalues, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(basis.modes, dtype="<f8").tobytes())


def read_kl_basis(path):
    """Returns (KLBasis, metadata dict)."""
    with open(path, "rb") as fh:
        magic, nx, ny, n_modes, lx, ly, trace, seed, hash_raw = _KL_HEADER.unpack(
            _read_exact(fh, _KL_HEADER.size)
        )
        if magic != KL_MAGIC:
            raise ConfigurationError(f"not a KL basis file: bad magic {magic!r}")
        grid = Grid(nx=nx, ny=ny, lx=lx, ly=ly)
        n = grid.n_cells
        mean = _read_floats(fh, n)
        eigenvalues = _read_floats(fh, n_modes)
        modes = _read_floats(fh, n * n_modes).reshape(n, n_modes)
    basis = KLBasis(grid=grid, eigenvalues=eigenvalues, modes=modes, mean=mean, cov_trace=trace)
    return basis, {"seed": seed, "config_hash": _hash_str(hash_raw)}


def write_ensemble(path, ens: Ensemble, seed: int = 0, config_hash: str = "") -> None:
    n, d, m = ens.dims
    with open(path, "wb") as fh:
        fh.write(
            _ENSEMBLE_HEADER.pack(
                ENSEMBLE_MAGIC, ens.n_members, n, d, m, seed, _hash_bytes(config_hash)
            )
        )
        fh.write(np.ascontiguousarray(ens.status, dtype=np.uint8).tobytes())
        for block in (ens.params, ens.data, ens.preds):
            fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())


def read_ensemble(path):
    """Returns (Ensemble, metadata dict)."""
    with open(path, "rb") as fh:
        magic, n_members, n, d, m, seed, hash_raw = _ENSEMBLE_HEADER.unpack(
            _read_exact(fh, _ENSEMBLE_HEADER.size)
        )
        if magic != ENSEMBLE_MAGIC:
            raise ConfigurationError(f"not an ensemble file: bad magic {magic!r}")
        status = np.frombuffer(_read_exact(fh, n_members), dtype=np.uint8).copy()
        params = _read_floats(fh, n_members * n).reshape(n_members, n)
        data = _read_floats(fh, n_members * d).reshape(n_members, d)
        preds = _read_floats(fh, n_members * m).reshape(n_members, m)
    ens = Ensemble(params=params, data=data, preds=preds, status=status)
    return ens, {"seed": seed, "config_hash": _hash_str(hash_raw)}


def write_sample_matrix(path, samples: np.ndarray, seed: int = 0, config_hash: str = "") -> None:
    """Prediction samples in the ensemble format (empty param/data blocks)."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    ens = Ensemble(
        params=np.empty((samples.shape[0], 0)),
        data=np.empty((samples.shape[0], 0)),
        preds=samples,
        status=np.full(samples.shape[0], MemberStatus.OK, dtype=np.uint8),
    )
    write_ensemble(path, ens, seed=seed, config_hash=config_hash)


def read_sample_matrix(path):
    """Returns (samples array, metadata dict)."""
    ens, meta = read_ensemble(path)
    return ens.preds, meta


def kl_basis_to_csv(path, basis: KLBasis) -> None:
    """Spectrum summary: eigenvalue and cumulative energy per mode."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "eigenvalue", "cumulative_energy_fraction"])
        cumulative = np.cumsum(basis.eigenvalues) / basis.cov_trace
        for i, (lam, frac) in enumerate(zip(basis.eigenvalues, cumulative)):
            writer.writerow([i, repr(float(lam)), f"{frac:.8f}"])


def field_to_csv(path, field: Field) -> None:
    centers = field.grid.cell_centers()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x_m", "y_m", "value"])
        for (x, y), v in zip(centers, field.values):
            writer.writerow([f"{x:.6f}", f"{y:.6f}", repr(float(v))])


def ensemble_to_csv(path_prefix, ens: Ensemble) -> None:
    """One CSV per block, rows indexed by member with its status."""
    blocks = {"params": ens.params, "data": ens.data, "preds": ens.preds}
    for name, block in blocks.items():
        with open(f"{path_prefix}_{name}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["member", "status"] + [f"c{j}" for j in range(block.shape[1])])
            for i in range(ens.n_members):
                writer.writerow(
                    [i, int(ens.status[i])] + [repr(float(v)) for v in block[i]]
                )
