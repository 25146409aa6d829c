"""Experiment configuration: schema, defaults, and object builders.

The config is a single JSON document; every field has a default, and
the defaults reproduce the 2D benchmark end to end (alternating
production schedule, 8-day observations over the first half, 1% noise,
distinct truth/inversion grids). ``config_hash`` fingerprints the fully
merged document so output files can be cross-checked.
"""

from __future__ import annotations

import copy
import hashlib
import json

import numpy as np

from .errors import ConfigurationError
from .grf import CovarianceModel, Grid
from .sim2d import FluidConfig, WellSchedule, WellTimeDesign
from .units import days_to_seconds, mpa_to_pa

# Nine wells on a 3x3 grid; odd-numbered wells (1-based) pump for the
# first 40 days at 50 m3/day, even-numbered for the next 40, all shut in
# for 40, then all produce at 25 m3/day.
_WELLS = [
    [250.0, 250.0], [500.0, 250.0], [750.0, 250.0],
    [250.0, 500.0], [500.0, 500.0], [750.0, 500.0],
    [250.0, 750.0], [500.0, 750.0], [750.0, 750.0],
]
_ODD = [50.0, 0.0, 50.0, 0.0, 50.0, 0.0, 50.0, 0.0, 50.0]
_EVEN = [0.0, 50.0, 0.0, 50.0, 0.0, 50.0, 0.0, 50.0, 0.0]

DEFAULT_CONFIG = {
    "extent_m": 1000.0,
    "grids": {"truth": [80, 80], "inversion": [50, 50]},
    "fluid": {
        "compressibility_per_pa": 2.9e-8,
        "viscosity_pa_s": 5.0e-4,
        "porosity": 0.3,
        "initial_pressure_mpa": 20.0,
    },
    "prior": {
        "sigma": 0.75,
        "lengthscale_m": 250.0,
        "mean_log_perm": -31.0,
        "n_modes": 50,
    },
    "wells": _WELLS,
    "schedule": [
        {"end_day": 40.0, "rates_m3_day": _ODD},
        {"end_day": 80.0, "rates_m3_day": _EVEN},
        {"end_day": 120.0, "rates_m3_day": [0.0] * 9},
        {"end_day": 160.0, "rates_m3_day": [25.0] * 9},
    ],
    "dt_days": 4.0,
    # well_indices: null observes every well; a list restricts the
    # observed subset (predictions always cover every well)
    "observation": {"spacing_days": 8.0, "end_day": 80.0, "well_indices": None},
    "prediction": {"spacing_days": 4.0},
    "noise": {"relative_std": 0.01},
    "dsi": {
        "n_members": 1000,
        "n_samples": 1000,
        "ell_sweep": [10, 100, 250, 500, 1000],
        "transform": None,
    },
    "mcmc": {
        "n_chains": 4,
        "n_iterations": 500_000,
        "burn_in": 0.5,
        "beta": 0.25,
        "thin": 10,
        "adapt_beta": True,
    },
    "map": {
        "max_iterations": 30,
        "grad_tol": 1.0e-6,
        "fd_step": 1.0e-4,
        "max_halvings": 20,
        "n_samples": 1000,
    },
    "seed": 0,
}


def _deep_merge(base: dict, override: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigurationError(f"unknown config key: {key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            merged[key] = _deep_merge(base[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


class ExperimentConfig:
    """Merged configuration with typed accessors for the model objects."""

    def __init__(self, overrides: dict | None = None, allow_inverse_crime: bool = False):
        self.raw = _deep_merge(DEFAULT_CONFIG, overrides or {})
        self.allow_inverse_crime = allow_inverse_crime
        self._validate()

    @classmethod
    def from_file(cls, path, allow_inverse_crime: bool = False) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                overrides = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(overrides, dict):
            raise ConfigurationError("config file must hold a JSON object")
        return cls(overrides, allow_inverse_crime=allow_inverse_crime)

    def _validate(self):
        raw = self.raw
        if tuple(raw["grids"]["truth"]) == tuple(raw["grids"]["inversion"]):
            if not self.allow_inverse_crime:
                raise ConfigurationError(
                    "truth and inversion grids are identical; this commits the "
                    "inverse crime (pass --allow-inverse-crime to override)"
                )
        horizon = raw["schedule"][-1]["end_day"]
        obs = raw["observation"]
        if obs["end_day"] > horizon:
            raise ConfigurationError("observation window extends past the schedule horizon")
        for key in ("dt_days",):
            if raw[key] <= 0:
                raise ConfigurationError(f"{key} must be positive")
        for box, field_name in ((raw["observation"], "spacing_days"),
                                (raw["prediction"], "spacing_days")):
            spacing = box[field_name]
            if spacing <= 0 or abs(spacing / raw["dt_days"] - round(spacing / raw["dt_days"])) > 1e-9:
                raise ConfigurationError("sample spacings must be positive multiples of dt")
        # zero noise is allowed for clean-data truth generation; inference
        # methods still require an SPD noise covariance and fail loudly
        if raw["noise"]["relative_std"] < 0:
            raise ConfigurationError("noise relative std must be non-negative")
        if raw["mcmc"]["n_iterations"] < 1:
            raise ConfigurationError("MCMC iteration count must be at least 1")
        if raw["dsi"]["n_members"] < 2:
            raise ConfigurationError("DSI needs at least 2 ensemble members")

    def canonical_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def grid(self, which: str) -> Grid:
        nx, ny = self.raw["grids"][which]
        extent = self.raw["extent_m"]
        return Grid(nx=int(nx), ny=int(ny), lx=extent, ly=extent)

    def fluid(self) -> FluidConfig:
        f = self.raw["fluid"]
        return FluidConfig(
            compressibility=f["compressibility_per_pa"],
            viscosity=f["viscosity_pa_s"],
            porosity=f["porosity"],
            initial_pressure=mpa_to_pa(f["initial_pressure_mpa"]),
        )

    def covariance_model(self) -> CovarianceModel:
        p = self.raw["prior"]
        return CovarianceModel(
            sigma=p["sigma"], lengthscale=p["lengthscale_m"], mean=p["mean_log_perm"]
        )

    @property
    def n_modes(self) -> int:
        return int(self.raw["prior"]["n_modes"])

    @property
    def dt(self) -> float:
        return days_to_seconds(self.raw["dt_days"])

    def schedule(self) -> WellSchedule:
        ends = [seg["end_day"] for seg in self.raw["schedule"]]
        rates = [seg["rates_m3_day"] for seg in self.raw["schedule"]]
        return WellSchedule.from_days(
            well_positions=np.asarray(self.raw["wells"], dtype=float),
            segment_ends_days=ends,
            rates_m3_per_day=rates,
        )

    def observation_design(self, schedule: WellSchedule) -> WellTimeDesign:
        obs = self.raw["observation"]
        times = np.arange(obs["spacing_days"], obs["end_day"] + 1e-9, obs["spacing_days"])
        wells = obs["well_indices"]
        if wells is None:
            wells = range(schedule.n_wells)
        return WellTimeDesign.from_schedule(schedule, wells, days_to_seconds(times))

    def prediction_design(self, schedule: WellSchedule) -> WellTimeDesign:
        spacing = self.raw["prediction"]["spacing_days"]
        horizon = self.raw["schedule"][-1]["end_day"]
        times = np.arange(spacing, horizon + 1e-9, spacing)
        return WellTimeDesign.from_schedule(
            schedule, range(schedule.n_wells), days_to_seconds(times)
        )

    @property
    def noise_std_pa(self) -> float:
        return self.raw["noise"]["relative_std"] * mpa_to_pa(
            self.raw["fluid"]["initial_pressure_mpa"]
        )

    def prediction_block_shape(self) -> tuple:
        """(n_wells, n_times, horizon_index) of the prediction layout."""
        spacing = self.raw["prediction"]["spacing_days"]
        horizon = self.raw["schedule"][-1]["end_day"]
        n_times = int(round(horizon / spacing))
        horizon_index = int(round(self.raw["observation"]["end_day"] / spacing))
        return len(self.raw["wells"]), n_times, horizon_index
