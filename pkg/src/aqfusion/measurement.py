"""Measurement models for reference stations and low-cost sensors.

A station reads the concentration plus Gaussian noise. A sensor returns a raw
signal ``beta + alpha * C + gamma . y + eps`` where ``y`` holds its auxiliary
channels (NO, CO, Ox, RH, T) and ``alpha < 0``. Stations are the special case
``alpha = 1, beta = 0, gamma = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .core import DEFAULT_GUARD, BiasParameters, eval_l0, eval_lc
from .errors import ConfigurationError, SingularCorrectionError

CHANNELS = ("NO", "CO", "Ox", "RH", "T")
STATION = "station"
SENSOR = "sensor"

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class SensorCalibration:
    alpha: float
    beta: float
    gamma: np.ndarray
    sigma: float
    sensor_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "sigma", float(self.sigma))
        g = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        g.setflags(write=False)
        object.__setattr__(self, "gamma", g)
        if not self.sigma >= 0:
            raise ConfigurationError(f"sensor noise sd must be >= 0, got {self.sigma}")

    @property
    def q(self):
        return self.gamma.size

    @classmethod
    def station(cls, q=len(CHANNELS), sigma=1.0, sensor_id=""):
        return cls(1.0, 0.0, np.zeros(q), sigma, sensor_id)

    def __eq__(self, other):
        if not isinstance(other, SensorCalibration):
            return NotImplemented
        return (self.sensor_id == other.sensor_id and self.alpha == other.alpha
                and self.beta == other.beta and self.sigma == other.sigma
                and np.array_equal(self.gamma, other.gamma))

    __hash__ = None

    def to_dict(self, channels=CHANNELS):
        d = {"sensor_id": self.sensor_id, "alpha": self.alpha, "beta": self.beta}
        d["gamma"] = {ch: float(g) for ch, g in zip(channels, self.gamma)}
        d["sigma"] = self.sigma
        return d

    @classmethod
    def from_dict(cls, d, channels=CHANNELS):
        gamma = d["gamma"]
        if isinstance(gamma, dict):
            missing = [ch for ch in channels if ch not in gamma]
            if missing:
                raise ConfigurationError(f"calibration {d.get('sensor_id')} lacks gamma for {missing}")
            gamma = [gamma[ch] for ch in channels]
        return cls(d["alpha"], d["beta"], gamma, d["sigma"], d.get("sensor_id", ""))


@dataclass(frozen=True)
class DeviceRecord:
    device_id: str
    kind: str
    location: tuple
    z: float
    y: np.ndarray
    t: int


@dataclass(frozen=True)
class RegressionRow:
    m: float
    z: float
    y: np.ndarray
    xs: np.ndarray
    xt: np.ndarray
    device_id: str
    kind: str = STATION
    t: int = 0


def _check_y(cal, y):
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != cal.q:
        raise ConfigurationError(f"sensor covariates have length {y.shape[-1]}, calibration expects {cal.q}")
    return y


def sensor_forward(cal: SensorCalibration, c, y):
    """Noise-free raw signal for concentration ``c``."""
    if np.any(np.asarray(c) < 0):
        raise ConfigurationError("concentration must be >= 0")
    y = _check_y(cal, y)
    out = cal.beta + cal.alpha * np.asarray(c, dtype=float) + y @ cal.gamma
    return float(out) if np.ndim(out) == 0 else out


def sensor_invert(cal: SensorCalibration, z, y):
    """Concentration implied by signal ``z``. Negative results are returned as is."""
    if cal.alpha == 0:
        raise ConfigurationError(f"degenerate calibration for {cal.sensor_id!r}: alpha = 0")
    y = _check_y(cal, y)
    out = (np.asarray(z, dtype=float) - cal.beta - y @ cal.gamma) / cal.alpha
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Rows:
    """Regression rows stored column-wise, ordered by device id then time.

    ``device`` indexes into ``devices``/``kinds``. Stations have all-zero ``y``.
    """

    devices: tuple
    kinds: tuple
    device: np.ndarray
    t: np.ndarray
    m: np.ndarray
    z: np.ndarray
    y: np.ndarray
    xs: np.ndarray
    xt: np.ndarray
    n_skipped: int = 0
    channels: tuple = CHANNELS

    def __len__(self):
        return int(self.m.size)

    def __iter__(self) -> Iterator[RegressionRow]:
        for i in range(len(self)):
            d = int(self.device[i])
            yield RegressionRow(
                float(self.m[i]), float(self.z[i]), self.y[i], self.xs[i], self.xt[i],
                self.devices[d], self.kinds[d], int(self.t[i]),
            )

    @property
    def station_ids(self):
        return tuple(d for d, k in zip(self.devices, self.kinds) if k == STATION)

    @property
    def sensor_ids(self):
        return tuple(d for d, k in zip(self.devices, self.kinds) if k == SENSOR)

    def device_slices(self):
        """Yield ``(device_index, slice)`` for devices that have rows."""
        if len(self) == 0:
            return
        bounds = np.flatnonzero(np.diff(self.device)) + 1
        starts = np.concatenate([[0], bounds])
        ends = np.concatenate([bounds, [len(self)]])
        for s, e in zip(starts, ends):
            yield int(self.device[s]), slice(int(s), int(e))

    def subset(self, keep):
        """Rows where boolean ``keep`` is True; unused devices are dropped."""
        keep = np.asarray(keep, dtype=bool)
        used = sorted(set(self.device[keep].tolist()))
        remap = np.full(len(self.devices), -1)
        remap[used] = np.arange(len(used))
        return Rows(
            tuple(self.devices[i] for i in used),
            tuple(self.kinds[i] for i in used),
            remap[self.device[keep]],
            self.t[keep], self.m[keep], self.z[keep], self.y[keep],
            self.xs[keep], self.xt[keep], self.n_skipped, self.channels,
        )

    def without_devices(self, ids):
        ids = set(ids)
        drop = np.array([d in ids for d in self.devices], dtype=bool)
        return self.subset(~drop[self.device] if len(self) else np.zeros(0, bool))

    def stations_only(self):
        is_station = np.array([k == STATION for k in self.kinds], dtype=bool)
        return self.subset(is_station[self.device] if len(self) else np.zeros(0, bool))

    def in_hours(self, hours):
        return self.subset(np.isin(self.t, np.asarray(hours)))


def build_rows(observations) -> Rows:
    """Flatten an ObservationSet into regression rows.

    One row per (device, hour) where the model output, the measurement, the
    temporal covariates and (for sensors) every channel are available.
    Incomplete pairs are skipped and counted in ``n_skipped``.
    """
    obs = observations
    q = len(obs.channels)
    order = sorted(range(len(obs.device_ids)), key=lambda i: obs.device_ids[i])
    cols = {k: [] for k in ("device", "t", "m", "z", "y", "xs", "xt")}
    n_skipped = 0
    valid = obs.mask
    for new_idx, d in enumerate(order):
        ok = valid[d]
        n_skipped += int(np.count_nonzero(~ok))
        idx = np.flatnonzero(ok)
        cols["device"].append(np.full(idx.size, new_idx, dtype=np.int64))
        cols["t"].append(obs.hours[idx])
        cols["m"].append(obs.m[d, idx])
        cols["z"].append(obs.z[d, idx])
        if obs.kinds[d] == SENSOR:
            cols["y"].append(obs.y[d, idx, :])
        else:
            cols["y"].append(np.zeros((idx.size, q)))
        cols["xs"].append(np.repeat(obs.xs[d][None, :], idx.size, axis=0))
        cols["xt"].append(obs.xt[idx])
    k, l = obs.xs.shape[1], obs.xt.shape[1]
    if not order:
        empty = np.zeros(0)
        return Rows((), (), np.zeros(0, np.int64), np.zeros(0, np.int64), empty, empty,
                    np.zeros((0, q)), np.zeros((0, k)), np.zeros((0, l)), 0, tuple(obs.channels))
    return Rows(
        tuple(obs.device_ids[i] for i in order),
        tuple(obs.kinds[i] for i in order),
        np.concatenate(cols["device"]),
        np.concatenate(cols["t"]).astype(np.int64),
        np.concatenate(cols["m"]).astype(float),
        np.concatenate(cols["z"]).astype(float),
        np.concatenate(cols["y"]).reshape(-1, q).astype(float),
        np.concatenate(cols["xs"]).reshape(-1, k).astype(float),
        np.concatenate(cols["xt"]).reshape(-1, l).astype(float),
        n_skipped,
        tuple(obs.channels),
    )


def loglik_row(row: RegressionRow, p: BiasParameters, cal: SensorCalibration | None = None,
               *, form="output", noise="signal", guard=DEFAULT_GUARD):
    """Gaussian log density of one row.

    form="output": density of the model output given the measurement, mean
    ``L0 + (z - beta - gamma.y) (1 + Lc) / alpha``. Its sd is
    ``|1 + Lc| sigma / |alpha|`` with noise="signal" (sensor noise lives on the
    raw-signal scale) or ``|1 + Lc| sigma`` with noise="literal".

    form="measurement": density of the measurement given the model output,
    mean ``beta + alpha (M - L0) / (1 + Lc) + gamma.y`` and sd ``sigma``.

    ``cal=None`` applies the station convention with ``sigma = p.sigma0``.
    """
    if cal is None:
        alpha, beta, gdot, sigma = 1.0, 0.0, 0.0, p.sigma0
    else:
        alpha, beta, sigma = cal.alpha, cal.beta, cal.sigma
        gdot = float(_check_y(cal, row.y) @ cal.gamma)
    if alpha == 0:
        raise ConfigurationError("alpha = 0")
    if not sigma > 0:
        raise ConfigurationError("noise sd must be > 0 to evaluate a likelihood")
    l0 = eval_l0(p, row.xt)
    d = 1.0 + eval_lc(p, row.xs, row.xt)
    if not abs(d) > guard:
        raise SingularCorrectionError(
            f"|1 + Lc| <= {guard} for device {row.device_id} at t={row.t}",
            location=(row.device_id, row.t),
        )
    if form == "output":
        resid = row.m - l0 - (row.z - beta - gdot) * d / alpha
        if noise == "signal":
            sd = abs(d) * sigma / abs(alpha)
        elif noise == "literal":
            sd = abs(d) * sigma
        else:
            raise ConfigurationError(f"unknown noise convention {noise!r}")
    elif form == "measurement":
        resid = row.z - beta - alpha * (row.m - l0) / d - gdot
        sd = sigma
    else:
        raise ConfigurationError(f"unknown likelihood form {form!r}")
    return -0.5 * (resid / sd) ** 2 - math.log(sd) - _LOG_SQRT_2PI


def loglik_rows(rows: Rows, p: BiasParameters, calibrations=None, **kw):
    """Sum of :func:`loglik_row` over ``rows`` in their canonical order."""
    calibrations = calibrations or {}
    total = 0.0
    for row in rows:
        cal = None if row.kind == STATION else calibrations[row.device_id]
        total += loglik_row(row, p, cal, **kw)
    return total
