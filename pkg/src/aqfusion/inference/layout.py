"""Naming and packing of the full parameter vector.

Order: ``a0, ac, theta_T[..], zeta_S[..], zeta_T[..], sigma0`` followed, for
each sensor in sorted id order, by ``beta, alpha, gamma_<ch>.., sigma``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import SPATIAL_NAMES, TEMPORAL_NAMES, BiasParameters
from ..errors import ConfigurationError
from ..measurement import CHANNELS, SensorCalibration


@dataclass(frozen=True)
class ParameterLayout:
    spatial_names: tuple = SPATIAL_NAMES
    temporal_names: tuple = TEMPORAL_NAMES
    channels: tuple = CHANNELS
    sensor_ids: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "sensor_ids", tuple(sorted(self.sensor_ids)))

    @classmethod
    def from_rows(cls, rows, spatial_names=None, temporal_names=None):
        k, l = rows.xs.shape[1], rows.xt.shape[1]
        spatial_names = tuple(spatial_names or (SPATIAL_NAMES if k == 3 else [f"xs{i + 1}" for i in range(k)]))
        temporal_names = tuple(temporal_names or (TEMPORAL_NAMES if l == 2 else [f"xt{i + 1}" for i in range(l)]))
        if len(spatial_names) != k or len(temporal_names) != l:
            raise ConfigurationError("covariate names do not match row dimensions")
        return cls(spatial_names, temporal_names, tuple(rows.channels), rows.sensor_ids)

    @property
    def k(self):
        return len(self.spatial_names)

    @property
    def l(self):  # noqa: E743
        return len(self.temporal_names)

    @property
    def q(self):
        return len(self.channels)

    @property
    def n_bias(self):
        """Bias block size including sigma0 (``3 + k + 2l``)."""
        return 3 + self.k + 2 * self.l

    @property
    def sensor_block(self):
        return self.q + 3

    @property
    def size(self):
        return self.n_bias + len(self.sensor_ids) * self.sensor_block

    @property
    def n_regression(self):
        """Count ``3 + k + 2l + J (q + 2)``: bias block with sigma0, sensor noise excluded."""
        return self.n_bias + len(self.sensor_ids) * (self.q + 2)

    # fixed offsets
    A0, AC, TH = 0, 1, 2

    @property
    def ZS(self):
        return 2 + self.l

    @property
    def ZT(self):
        return 2 + self.l + self.k

    @property
    def S0(self):
        return 2 + 2 * self.l + self.k

    def sensor_offset(self, j):
        return self.n_bias + j * self.sensor_block

    def bias_names(self):
        return (
            ["a0", "ac"]
            + [f"theta_T[{n}]" for n in self.temporal_names]
            + [f"zeta_S[{n}]" for n in self.spatial_names]
            + [f"zeta_T[{n}]" for n in self.temporal_names]
            + ["sigma0"]
        )

    def sensor_templates(self):
        return ["beta", "alpha"] + [f"gamma_{c}" for c in self.channels] + ["sigma"]

    @property
    def names(self):
        out = self.bias_names()
        for sid in self.sensor_ids:
            out += [f"{t}[{sid}]" for t in self.sensor_templates()]
        return out

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigurationError(f"unknown parameter {name!r}") from None

    @staticmethod
    def template(name):
        """``alpha[ASE4]`` -> ``alpha``; bias names are their own template."""
        if name.startswith(("theta_T[", "zeta_S[", "zeta_T[")):
            return name
        return name.split("[", 1)[0]

    def pack(self, bias: BiasParameters, calibrations=None):
        calibrations = calibrations or {}
        if bias.k != self.k or bias.l != self.l:
            raise ConfigurationError(
                f"bias parameters have k={bias.k}, l={bias.l}; layout expects k={self.k}, l={self.l}"
            )
        vec = [bias.a0, bias.ac, *bias.theta_T, *bias.zeta_S, *bias.zeta_T, bias.sigma0]
        for sid in self.sensor_ids:
            cal = calibrations[sid]
            if cal.q != self.q:
                raise ConfigurationError(f"calibration {sid} has q={cal.q}, expected {self.q}")
            vec += [cal.beta, cal.alpha, *cal.gamma, cal.sigma]
        return np.array(vec, dtype=float)

    def unpack(self, vec):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.size,):
            raise ConfigurationError(f"parameter vector has shape {vec.shape}, expected ({self.size},)")
        k, l = self.k, self.l
        bias = BiasParameters(
            vec[self.A0], vec[self.AC], vec[self.TH:self.TH + l], vec[self.ZS:self.ZS + k],
            vec[self.ZT:self.ZT + l], vec[self.S0],
        )
        cals = {}
        for j, sid in enumerate(self.sensor_ids):
            o = self.sensor_offset(j)
            cals[sid] = SensorCalibration(
                vec[o + 1], vec[o], vec[o + 2:o + 2 + self.q], vec[o + 2 + self.q], sid
            )
        return bias, cals
