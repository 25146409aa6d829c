"""Tests for prediction-vector reparametrisations."""

import numpy as np
import pytest

from dsinv.dsi import Ensemble, apply_transform
from dsinv.errors import ConfigurationError
from dsinv.transforms import (
    ComposedTransform,
    IdentityTransform,
    PressureRiseCapTransform,
)
from dsinv.units import PA_PER_MPA


def _declining_trajectory(rng, n_wells, n_times, p0=2.0e7, step_mpa=0.3):
    # strictly declining pressures: admissible for any positive delta
    drops = rng.uniform(0.05, step_mpa, size=(n_wells, n_times)) * PA_PER_MPA
    return (p0 - np.cumsum(drops, axis=1)).ravel()


def test_zero_difference_maps_to_log_delta():
    t = PressureRiseCapTransform(n_wells=1, n_times=3, horizon_index=1, delta_mpa=0.01)
    flat = np.array([2.0e7, 2.0e7, 2.0e7])  # constant pressure: all increments zero
    out = t.forward(flat)
    assert out[0] == flat[0]
    assert np.allclose(out[1:], np.log(0.01))


def test_round_trip_identity_on_admissible_trajectories():
    rng = np.random.default_rng(0)
    t = PressureRiseCapTransform(n_wells=3, n_times=8, horizon_index=4, delta_mpa=0.01)
    for _ in range(20):
        p = _declining_trajectory(rng, 3, 8)
        assert np.allclose(t.inverse(t.forward(p)), p, rtol=1e-10)


def test_forward_rejects_increase_at_or_above_delta():
    t = PressureRiseCapTransform(n_wells=1, n_times=4, horizon_index=1, delta_mpa=0.01)
    p = np.array([2.0e7, 2.0e7 + 0.02 * PA_PER_MPA, 2.0e7, 2.0e7])
    with pytest.raises(ConfigurationError):
        t.forward(p)
    # an increase before the horizon is untouched and fine
    t2 = PressureRiseCapTransform(n_wells=1, n_times=4, horizon_index=2, delta_mpa=0.01)
    p2 = np.array([2.0e7, 2.0e7 + 0.5 * PA_PER_MPA, 2.0e7, 1.9e7])
    out = t2.forward(p2)
    assert np.array_equal(out[:2], p2[:2])


def test_inverse_enforces_hard_cap():
    # any finite transformed values map back to increments < delta
    rng = np.random.default_rng(1)
    delta = 0.01
    t = PressureRiseCapTransform(n_wells=2, n_times=6, horizon_index=3, delta_mpa=delta)
    for _ in range(200):
        y = _declining_trajectory(rng, 2, 6)
        ty = t.forward(y)
        noisy = ty.copy()
        noisy[np.flatnonzero(t.transformed_mask())] += rng.normal(0, 2.0, size=6)
        back = t.inverse(noisy).reshape(2, 6)
        increments = np.diff(back[:, 2:], axis=1)  # all post-anchor steps
        assert np.all(increments < delta * PA_PER_MPA)


def test_metadata_records_transformed_coordinates():
    t = PressureRiseCapTransform(n_wells=2, n_times=4, horizon_index=2, delta_mpa=0.05)
    meta = t.describe()
    assert meta["units"] == "MPa"
    assert meta["delta_mpa"] == 0.05
    assert meta["transformed_coordinates"] == [2, 3, 6, 7]
    mask = t.transformed_mask()
    assert mask.sum() == 4


def test_constructor_validation():
    with pytest.raises(ConfigurationError):
        PressureRiseCapTransform(n_wells=1, n_times=4, horizon_index=0, delta_mpa=0.01)
    with pytest.raises(ConfigurationError):
        PressureRiseCapTransform(n_wells=1, n_times=4, horizon_index=4, delta_mpa=0.01)
    with pytest.raises(ConfigurationError):
        PressureRiseCapTransform(n_wells=1, n_times=4, horizon_index=1, delta_mpa=0.0)
    t = PressureRiseCapTransform(n_wells=1, n_times=4, horizon_index=1, delta_mpa=0.01)
    with pytest.raises(ConfigurationError):
        t.forward(np.zeros(5))


def test_identity_and_composition():
    rng = np.random.default_rng(2)
    p = _declining_trajectory(rng, 2, 5)
    ident = IdentityTransform()
    assert np.array_equal(ident.inverse(ident.forward(p)), p)

    cap = PressureRiseCapTransform(n_wells=2, n_times=5, horizon_index=2, delta_mpa=0.01)
    chain = ComposedTransform([ident, cap])
    assert np.allclose(chain.inverse(chain.forward(p)), p, rtol=1e-10)
    assert chain.describe()["stages"][1]["type"] == "pressure_rise_cap"


def test_apply_transform_names_offending_member():
    rng = np.random.default_rng(3)
    good = _declining_trajectory(rng, 1, 4)
    bad = good.copy()
    bad[2] = bad[1] + 0.5 * PA_PER_MPA  # big increase post horizon
    ens = Ensemble(
        params=np.zeros((3, 1)),
        data=np.zeros((3, 2)),
        preds=np.vstack([good, bad, good]),
        status=np.zeros(3, dtype=np.uint8),
    )
    t = PressureRiseCapTransform(n_wells=1, n_times=4, horizon_index=1, delta_mpa=0.01)
    with pytest.raises(ConfigurationError, match="member 1"):
        apply_transform(t, ens)

    ens_ok = Ensemble(
        params=np.zeros((2, 1)),
        data=np.zeros((2, 2)),
        preds=np.vstack([good, good]),
        status=np.zeros(2, dtype=np.uint8),
    )
    out = apply_transform(t, ens_ok)
    assert np.allclose(out.preds[0], t.forward(good))
    assert np.array_equal(out.data, ens_ok.data)
