"""Invertible reparametrisations of prediction vectors.

Conditioning happens in the transformed space, so a transform encodes a
hard constraint on every sample drawn there. Transforms carry metadata
describing exactly which coordinates they touch, compose cleanly, and
must invert their forward map exactly on the admissible domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .units import PA_PER_MPA


class Transform:
    """Interface: forward/inverse maps on prediction vectors."""

    def forward(self, values: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def inverse(self, values: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict:
        raise NotImplementedError


@dataclass
class IdentityTransform(Transform):
    def forward(self, values):
        return np.asarray(values, dtype=float).copy()

    def inverse(self, values):
        return np.asarray(values, dtype=float).copy()

    def describe(self):
        return {"type": "identity"}


@dataclass
class ComposedTransform(Transform):
    """Applies ``stages`` in order on forward, reversed on inverse."""

    stages: list

    def forward(self, values):
        for stage in self.stages:
            values = stage.forward(values)
        return values

    def inverse(self, values):
        for stage in reversed(self.stages):
            values = stage.inverse(values)
        return values

    def describe(self):
        return {"type": "composed", "stages": [s.describe() for s in self.stages]}


@dataclass
class PressureRiseCapTransform(Transform):
    """Caps per-step pressure increases after the observation horizon.

    The prediction vector is well-major: ``n_wells`` blocks of
    ``n_times`` consecutive pressures. Within each block, entries up to
    ``horizon_index`` (exclusive) stay as absolute pressures; each later
    entry is replaced by log(delta - dp) of its increment dp over the
    previous entry, evaluated in MPa. Sampling in this space and mapping
    back guarantees every per-step increase stays strictly below
    ``delta_mpa``.

    ``delta_mpa`` must strictly exceed every per-step increase present
    in the vectors being transformed; violations raise instead of
    producing NaNs downstream.
    """

    n_wells: int
    n_times: int
    horizon_index: int
    delta_mpa: float

    def __post_init__(self):
        if self.delta_mpa <= 0:
            raise ConfigurationError("delta must be positive")
        if not 1 <= self.horizon_index < self.n_times:
            raise ConfigurationError(
                "horizon index must leave at least one anchor entry and one "
                "transformed entry per well"
            )

    def _blocks(self, values):
        values = np.asarray(values, dtype=float)
        expected = self.n_wells * self.n_times
        if values.shape != (expected,):
            raise ConfigurationError(
                f"vector length {values.shape} does not match "
                f"{self.n_wells} wells x {self.n_times} times"
            )
        return values.reshape(self.n_wells, self.n_times)

    def forward(self, values):
        blocks = self._blocks(values).copy()
        h = self.horizon_index
        increments_mpa = np.diff(blocks[:, h - 1 :], axis=1) / PA_PER_MPA
        margin = self.delta_mpa - increments_mpa
        if np.any(margin <= 0):
            worst = float(increments_mpa.max())
            raise ConfigurationError(
                f"per-step pressure increase {worst:.6g} MPa reaches the cap "
                f"delta = {self.delta_mpa:.6g} MPa; raise delta"
            )
        blocks[:, h:] = np.log(margin)
        return blocks.ravel()

    def inverse(self, values):
        blocks = self._blocks(values).copy()
        h = self.horizon_index
        increments_mpa = self.delta_mpa - np.exp(blocks[:, h:])
        pressures = blocks[:, h - 1, None] + np.cumsum(increments_mpa, axis=1) * PA_PER_MPA
        blocks[:, h:] = pressures
        return blocks.ravel()

    def transformed_mask(self) -> np.ndarray:
        """Boolean mask of the coordinates the transform rewrites."""
        mask = np.zeros((self.n_wells, self.n_times), dtype=bool)
        mask[:, self.horizon_index :] = True
        return mask.ravel()

    def describe(self):
        return {
            "type": "pressure_rise_cap",
            "delta_mpa": self.delta_mpa,
            "units": "MPa",
            "n_wells": self.n_wells,
            "n_times": self.n_times,
            "horizon_index": self.horizon_index,
            "transformed_coordinates": np.flatnonzero(self.transformed_mask()).tolist(),
        }
