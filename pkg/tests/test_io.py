"""Round-trip and format tests for the binary file layer."""

import numpy as np
import pytest

from dsinv.dsi import Ensemble, MemberStatus
from dsinv.errors import ConfigurationError
from dsinv.grf import CovarianceModel, Field, Grid, build_kl_basis
from dsinv.io import (
    ensemble_to_csv,
    field_to_csv,
    kl_basis_to_csv,
    read_ensemble,
    read_field,
    read_kl_basis,
    read_sample_matrix,
    write_ensemble,
    write_field,
    write_kl_basis,
    write_sample_matrix,
)


def test_field_round_trip(tmp_path):
    grid = Grid(5, 3, 500.0, 300.0)
    rng = np.random.default_rng(0)
    field = Field(grid, rng.normal(-31, 0.7, 15))
    path = tmp_path / "f.dsf"
    write_field(path, field, seed=42, config_hash="abc123")
    loaded, meta = read_field(path)
    assert loaded.grid == grid
    assert np.array_equal(loaded.values, field.values)
    assert meta == {"seed": 42, "config_hash": "abc123"}


def test_field_write_is_deterministic(tmp_path):
    grid = Grid(4, 4, 100.0, 100.0)
    field = Field(grid, np.arange(16.0))
    write_field(tmp_path / "a.dsf", field, seed=1, config_hash="x")
    write_field(tmp_path / "b.dsf", field, seed=1, config_hash="x")
    assert (tmp_path / "a.dsf").read_bytes() == (tmp_path / "b.dsf").read_bytes()


def test_field_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.dsf"
    path.write_bytes(b"NOPE" + b"\0" * 64)
    with pytest.raises(ConfigurationError):
        read_field(path)


def test_field_rejects_truncation(tmp_path):
    grid = Grid(4, 4, 100.0, 100.0)
    path = tmp_path / "t.dsf"
    write_field(path, Field(grid, np.zeros(16)))
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(ConfigurationError):
        read_field(path)


def test_kl_basis_round_trip(tmp_path):
    grid = Grid(4, 3, 400.0, 300.0)
    basis = build_kl_basis(grid, CovarianceModel(0.75, 150.0, -31.0), 5)
    path = tmp_path / "b.dskl"
    write_kl_basis(path, basis, seed=9, config_hash="deadbeef")
    loaded, meta = read_kl_basis(path)
    assert np.array_equal(loaded.eigenvalues, basis.eigenvalues)
    assert np.array_equal(loaded.modes, basis.modes)
    assert np.array_equal(loaded.mean, basis.mean)
    assert loaded.cov_trace == basis.cov_trace
    assert loaded.grid == grid
    assert meta["seed"] == 9


def test_ensemble_round_trip_with_failures(tmp_path):
    rng = np.random.default_rng(1)
    status = np.array([0, 1, 0, 2, 0], dtype=np.uint8)
    data = rng.normal(size=(5, 4))
    preds = rng.normal(size=(5, 2))
    data[status != MemberStatus.OK] = np.nan
    preds[status != MemberStatus.OK] = np.nan
    ens = Ensemble(params=rng.normal(size=(5, 3)), data=data, preds=preds, status=status)
    path = tmp_path / "e.dse"
    write_ensemble(path, ens, seed=3, config_hash="cafe")
    loaded, meta = read_ensemble(path)
    assert loaded.dims == (3, 4, 2)
    assert np.array_equal(loaded.status, status)
    assert np.array_equal(loaded.params, ens.params)
    assert np.array_equal(loaded.data[loaded.success_mask], ens.data[ens.success_mask])
    assert np.all(np.isnan(loaded.data[~loaded.success_mask]))
    assert meta["config_hash"] == "cafe"


def test_sample_matrix_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    samples = rng.normal(size=(20, 7))
    path = tmp_path / "s.dse"
    write_sample_matrix(path, samples, seed=5, config_hash="beef")
    loaded, meta = read_sample_matrix(path)
    assert np.array_equal(loaded, samples)
    assert meta["seed"] == 5
    ens, _ = read_ensemble(path)
    assert ens.dims == (0, 0, 7)


def test_hash_length_guard(tmp_path):
    grid = Grid(2, 2, 10.0, 10.0)
    with pytest.raises(ConfigurationError):
        write_field(tmp_path / "x.dsf", Field(grid, np.zeros(4)),
                    config_hash="0123456789abcdef0")


def test_csv_exports(tmp_path):
    grid = Grid(3, 2, 30.0, 20.0)
    field = Field(grid, np.arange(6.0))
    field_to_csv(tmp_path / "f.csv", field)
    lines = (tmp_path / "f.csv").read_text().strip().splitlines()
    assert lines[0] == "x_m,y_m,value"
    assert len(lines) == 7

    basis = build_kl_basis(grid, CovarianceModel(0.5, 15.0, 0.0), 3)
    kl_basis_to_csv(tmp_path / "kl.csv", basis)
    kl_lines = (tmp_path / "kl.csv").read_text().strip().splitlines()
    assert kl_lines[0] == "mode,eigenvalue,cumulative_energy_fraction"
    assert len(kl_lines) == 4

    ens = Ensemble(params=np.zeros((2, 1)), data=np.ones((2, 2)),
                   preds=np.full((2, 3), 2.0), status=np.zeros(2, dtype=np.uint8))
    ensemble_to_csv(tmp_path / "ens", ens)
    for block in ("params", "data", "preds"):
        assert (tmp_path / f"ens_{block}.csv").exists()
