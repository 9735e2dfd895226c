"""Synthetic campaigns with known truth.

The latent concentration is a smooth spatial background scaled by weather and
a two-peak diurnal profile, plus a traffic term along synthetic roads. Model
output, station readings and raw sensor signals are then drawn from the bias
and measurement models, so every fitted quantity has a known target.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml
from scipy.ndimage import gaussian_filter

from .core import SPATIAL_NAMES, TEMPORAL_NAMES, BiasParameters, ConcentrationGrid
from .errors import ConfigurationError
from .io.campaign import (CampaignConfig, CovariateSpec, DeviceSpec, ObservationSet, save_config,
                          write_table)
from .io.grids import resample_elevation, write_grid
from .io.timeaxis import parse_timestamp, traffic_hours_filter, weekday_and_hour
from .measurement import CHANNELS, SENSOR, STATION, Rows, SensorCalibration

BUFFER_AREA = 0.785  # hm^2 in a 50 m disc

TRUE_BIAS = BiasParameters(-2.0, -0.6, [-2.5, -0.1], [-0.3, 0.35, 0.01], [0.2, 0.02], 15.0)


@dataclass(frozen=True)
class SynthSpec:
    nx: int = 40
    ny: int = 40
    cell_size: float = 10.0
    origin_x: float = 560000.0
    origin_y: float = 6925000.0
    coarse_cell: float = 25.0
    n_stations: int = 4
    n_sensors: int = 10
    n_hours: int = 300
    traffic_only: bool = True
    start: str = "2022-12-01T00:00"
    bias: BiasParameters = TRUE_BIAS
    calibrations: dict | None = None
    alpha_range: tuple = (-3.7, -1.0)
    sensor_sigma: tuple = (28.0, 35.0)
    background: float = 30.0
    traffic: float = 60.0
    channel_noise: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_stations < 1:
            raise ConfigurationError("a synthetic campaign needs at least one station")
        if self.n_sensors < 0 or self.n_hours < 1 or self.nx < 2 or self.ny < 2:
            raise ConfigurationError("invalid synthetic campaign dimensions")
        if self.n_stations + self.n_sensors > self.nx * self.ny:
            raise ConfigurationError("more devices than grid cells")
        b = self.bias
        if b.k != 3 or b.l != 2:
            raise ConfigurationError("the generator produces k=3 spatial and l=2 temporal covariates")
        if not (b.ac < 0 and b.theta_T[1] <= 0 and b.zeta_S[0] <= 0 and b.zeta_S[1] >= 0
                and b.zeta_S[2] >= 0):
            raise ConfigurationError("true bias parameters violate the sign constraints")
        lo, hi = self.alpha_range
        if not lo <= hi < 0:
            raise ConfigurationError("alpha_range must be negative")

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["bias"] = self.bias.to_dict()
        d["alpha_range"] = list(self.alpha_range)
        d["sensor_sigma"] = list(self.sensor_sigma)
        if self.calibrations is not None:
            d["calibrations"] = [c.to_dict() for _, c in sorted(self.calibrations.items())]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown synthetic spec keys {sorted(unknown)}")
        if "bias" in d:
            d["bias"] = BiasParameters.from_dict(d["bias"])
        if d.get("calibrations") is not None:
            cals = [SensorCalibration.from_dict(c) for c in d["calibrations"]]
            d["calibrations"] = {c.sensor_id: c for c in cals}
        for key in ("alpha_range", "sensor_sigma"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def load(cls, path):
        return cls.from_dict(yaml.safe_load(Path(path).read_text()))


@dataclass
class SynthCampaign:
    spec: SynthSpec
    observations: ObservationSet
    hours: np.ndarray
    latent: np.ndarray
    model: np.ndarray
    spatial: dict
    elevation_coarse: ConcentrationGrid
    calibrations: dict
    cells: dict = field(default_factory=dict)

    @property
    def bias(self):
        return self.spec.bias

    def grid(self, values, t):
        s = self.spec
        return ConcentrationGrid(s.origin_x, s.origin_y, s.cell_size, values, int(self.hours[t]))

    def model_grid(self, t):
        return self.grid(self.model[t], t)

    def latent_grid(self, t):
        return self.grid(self.latent[t], t)

    def spatial_stack(self):
        return np.stack([self.spatial[n].values for n in SPATIAL_NAMES], axis=-1)


def station_ids(n):
    return [f"ST{i + 1}" for i in range(n)]


def sensor_ids(n):
    return [f"LCS{j + 1:02d}" for j in range(n)]


def _hours(spec):
    start = parse_timestamp(spec.start)
    if not spec.traffic_only:
        return start + np.arange(spec.n_hours, dtype=np.int64)
    # 40 traffic hours per 168-hour week
    span = start + np.arange(spec.n_hours * 168 // 40 + 24 * 14, dtype=np.int64)
    hours = span[traffic_hours_filter(span)]
    return hours[:spec.n_hours]


def _unit_field(rng, shape, sigma):
    f = gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return (f - f.min()) / (f.max() - f.min())


def _rasters(spec, rng):
    ny, nx = spec.ny, spec.nx
    yy, xx = np.mgrid[0:ny, 0:nx] * spec.cell_size
    dist = np.full((ny, nx), np.inf)
    extent = np.array([nx, ny]) * spec.cell_size
    for _ in range(3):
        p = rng.uniform(0.15, 0.85, 2) * extent
        ang = rng.uniform(0, np.pi)
        nrm = np.array([-np.sin(ang), np.cos(ang)])
        dist = np.minimum(dist, np.abs((xx - p[0]) * nrm[0] + (yy - p[1]) * nrm[1]))
    roads = BUFFER_AREA * (0.02 + 0.95 * np.exp(-0.5 * (dist / 25.0) ** 2))
    greenish = _unit_field(rng, (ny, nx), 6.0)
    green = BUFFER_AREA * np.clip(greenish * (1.0 - 0.7 * roads / BUFFER_AREA), 0.0, 1.0)
    base = 0.7 + 0.6 * _unit_field(rng, (ny, nx), 8.0)

    # coarse elevation lattice extended by one coarse cell on each side
    cs = spec.coarse_cell
    cnx = int(np.ceil(nx * spec.cell_size / cs)) + 2
    cny = int(np.ceil(ny * spec.cell_size / cs)) + 2
    cyy = np.arange(cny)[:, None] / (cny - 1)
    relief = _unit_field(rng, (cny, cnx), 2.0)
    elev = 10.0 + 50.0 * cyy + 20.0 * relief
    coarse = ConcentrationGrid(spec.origin_x - cs, spec.origin_y - cs, cs, elev, 0)
    template = ConcentrationGrid(spec.origin_x, spec.origin_y, spec.cell_size, np.zeros((ny, nx)), 0)
    fine = resample_elevation(coarse, template)
    mk = lambda v: ConcentrationGrid(spec.origin_x, spec.origin_y, spec.cell_size, v, 0)
    return {"roads": mk(roads), "green": mk(green), "elevation": fine}, coarse, base


def _place(spec, rng, spatial):
    """Stations spread over covariate space (greedy farthest point); sensors at random cells."""
    ny, nx = spec.ny, spec.nx
    stack = np.stack([spatial[n].values for n in SPATIAL_NAMES], axis=-1).reshape(-1, 3)
    std = (stack - stack.mean(axis=0)) / stack.std(axis=0)
    cand = rng.choice(nx * ny, size=min(nx * ny, 400), replace=False)
    chosen = [int(cand[np.argmax(np.abs(std[cand]).sum(axis=1))])]
    while len(chosen) < spec.n_stations:
        d = np.min(np.linalg.norm(std[cand][:, None, :] - std[chosen][None, :, :], axis=2), axis=1)
        chosen.append(int(cand[np.argmax(d)]))
    free = np.setdiff1d(np.arange(nx * ny), chosen)
    sensors = rng.choice(free, size=spec.n_sensors, replace=False)
    cells = {}
    for sid, c in zip(station_ids(spec.n_stations), chosen):
        cells[sid] = divmod(int(c), nx)
    for sid, c in zip(sensor_ids(spec.n_sensors), sensors):
        cells[sid] = divmod(int(c), nx)
    return cells


def _calibrations(spec, rng):
    if spec.calibrations is not None:
        missing = set(sensor_ids(spec.n_sensors)) - set(spec.calibrations)
        if missing:
            raise ConfigurationError(f"calibrations missing for {sorted(missing)}")
        return dict(spec.calibrations)
    ids = sensor_ids(spec.n_sensors)
    alphas = np.linspace(spec.alpha_range[0], spec.alpha_range[1], len(ids))
    out = {}
    for sid, a in zip(ids, alphas):
        gamma = [rng.uniform(-0.1, 0.0), rng.uniform(-0.06, 0.0), rng.uniform(0.15, 0.35),
                 rng.uniform(-2.0, -0.5), rng.uniform(-30.0, 3.0)]
        out[sid] = SensorCalibration(a, rng.uniform(23500, 28500), gamma,
                                     rng.uniform(*spec.sensor_sigma), sid)
    return out


def _weather(hours, rng):
    n = hours.size
    a = np.empty(n)
    b = np.empty(n)
    a[0], b[0] = rng.standard_normal(2)
    for t in range(1, n):
        a[t] = 0.9 * a[t - 1] + np.sqrt(1 - 0.81) * rng.standard_normal()
        b[t] = 0.85 * b[t - 1] + np.sqrt(1 - 0.85 ** 2) * rng.standard_normal()
    _, hod = weekday_and_hour(hours)
    inv_ustar = 1.0 + 3.0 / (1.0 + np.exp(-1.5 * (0.6 * a + 0.4 * b)))
    temp = np.clip(6.0 + 3.0 * np.sin(2 * np.pi * (hod - 9) / 24) + 2.5 * b, 0.0, 12.0)
    return a, inv_ustar, temp


def _channels(c, temp, rng, noise=True):
    """Raw sensor channels (NO, CO, Ox, RH, T); the gas channels track the concentration."""
    n = c.size
    return np.column_stack([
        150 + 2.0 * c + (rng.normal(0, 60, n) if noise else 0),
        400 + 1.5 * c + (rng.normal(0, 80, n) if noise else 0),
        600 - 1.5 * c + (rng.normal(0, 60, n) if noise else 0),
        85 + (rng.normal(0, 6, n) if noise else np.zeros(n)),
        temp + 1.0 + (rng.normal(0, 0.5, n) if noise else 0),
    ])


def diurnal(hod):
    """Two-peak daily traffic shape with maxima at 08:00 and 17:00."""
    hod = np.asarray(hod, dtype=float)
    return np.exp(-0.5 * ((hod - 8) / 1.5) ** 2) + np.exp(-0.5 * ((hod - 17) / 1.5) ** 2)


def generate(spec: SynthSpec | None = None) -> SynthCampaign:
    """Draw a synthetic campaign; identical specs give identical campaigns."""
    spec = spec or SynthSpec()
    rng = np.random.default_rng(spec.seed)
    spatial, coarse, base = _rasters(spec, rng)
    cells = _place(spec, rng, spatial)
    cals = _calibrations(spec, rng)
    hours = _hours(spec)
    T = hours.size
    a, inv_ustar, temp = _weather(hours, rng)
    xt = np.column_stack([inv_ustar, temp])
    wd, hod = weekday_and_hour(hours)
    shape = diurnal(hod)
    workday = np.where(wd < 5, 1.0, 0.6)
    bg = spec.background * np.exp(0.35 * a) * (0.6 + 0.16 * inv_ustar) * (0.5 + shape)
    hot = spec.traffic * shape * workday * (inv_ustar / 2.5)
    roads_rel = spatial["roads"].values / BUFFER_AREA
    latent = bg[:, None, None] * base[None] + hot[:, None, None] * roads_rel[None]

    p = spec.bias
    xs_grid = np.stack([spatial[n].values for n in SPATIAL_NAMES], axis=-1)
    l0 = p.a0 + xt @ p.theta_T
    lc = p.ac + (xs_grid @ p.zeta_S)[None] + (xt @ p.zeta_T)[:, None, None]
    model = latent + l0[:, None, None] + latent * lc

    ids = station_ids(spec.n_stations) + sensor_ids(spec.n_sensors)
    kinds = [STATION] * spec.n_stations + [SENSOR] * spec.n_sensors
    q = len(CHANNELS)
    D = len(ids)
    z = np.empty((D, T))
    m = np.empty((D, T))
    y = np.full((D, T, q), np.nan)
    xs = np.empty((D, 3))
    loc = np.empty((D, 2))
    for d, (sid, kind) in enumerate(zip(ids, kinds)):
        r, c = cells[sid]
        cdev = latent[:, r, c]
        m[d] = model[:, r, c]
        xs[d] = xs_grid[r, c]
        loc[d] = (spec.origin_x + (c + 0.5) * spec.cell_size,
                  spec.origin_y + (spec.ny - r - 0.5) * spec.cell_size)
        if kind == STATION:
            z[d] = cdev + (rng.normal(0.0, p.sigma0, T) if p.sigma0 > 0 else 0.0)
        else:
            cal = cals[sid]
            yd = _channels(cdev, temp, rng, spec.channel_noise)
            y[d] = yd
            eps = rng.normal(0.0, cal.sigma, T) if cal.sigma > 0 else 0.0
            z[d] = cal.beta + cal.alpha * cdev + yd @ cal.gamma + eps
    obs = ObservationSet(hours, tuple(ids), tuple(kinds), loc, z, m, y, xs, xt,
                         CHANNELS, SPATIAL_NAMES, TEMPORAL_NAMES)
    return SynthCampaign(spec, obs, hours, latent, model, spatial, coarse, cals, cells)


def write_campaign(camp: SynthCampaign, outdir, *, binary=True, latent=True):
    """Write the campaign in the formats :func:`aqfusion.io.assemble` reads.

    Layout: ``config.yaml``, ``grids/``, ``covariates/``, ``devices/``,
    ``temporal.csv``, ``truth.yaml`` and, optionally, ``latent/``.
    """
    from .inference.summary import write_parameters

    out = Path(outdir)
    for sub in ("grids", "covariates", "devices"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    ext = ".bgrid" if binary else ".grid"
    for t in range(camp.hours.size):
        write_grid(camp.model_grid(t), out / "grids" / f"model_{int(camp.hours[t])}{ext}", binary)
    if latent:
        (out / "latent").mkdir(exist_ok=True)
        for t in range(camp.hours.size):
            write_grid(camp.latent_grid(t), out / "latent" / f"latent_{int(camp.hours[t])}{ext}", binary)
    write_grid(camp.spatial["roads"], out / "covariates" / "roads.grid")
    write_grid(camp.spatial["green"], out / "covariates" / "green.grid")
    write_grid(camp.elevation_coarse, out / "covariates" / "elevation_25m.grid")
    obs = camp.observations
    write_table(out / "temporal.csv", list(TEMPORAL_NAMES), obs.hours, obs.xt)
    devices = []
    for d, (sid, kind) in enumerate(zip(obs.device_ids, obs.kinds)):
        path = f"devices/{sid}.csv"
        if kind == SENSOR:
            data = np.column_stack([obs.z[d], obs.y[d]])
            write_table(out / path, ["value", *CHANNELS], obs.hours, data)
        else:
            write_table(out / path, ["value"], obs.hours, obs.z[d][:, None])
        devices.append(DeviceSpec(sid, kind, float(obs.locations[d, 0]), float(obs.locations[d, 1]), path))
    cfg = CampaignConfig(
        devices=devices,
        spatial=[CovariateSpec("roads", "covariates/roads.grid"),
                 CovariateSpec("green", "covariates/green.grid"),
                 CovariateSpec("elevation", "covariates/elevation_25m.grid", resample=True)],
        temporal_path="temporal.csv",
        grid_glob=f"grids/model_*{ext}",
        crs="synthetic local metres",
        base_dir=out,
    )
    save_config(cfg, out / "config.yaml")
    write_parameters(out / "truth.yaml", camp.bias, camp.calibrations,
                     meta={"seed": camp.spec.seed, "spec": _to_builtin(camp.spec.to_dict())})
    return out / "config.yaml"


def _to_builtin(v):
    if isinstance(v, dict):
        return {k: _to_builtin(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_to_builtin(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def regression_rows(n, bias: BiasParameters, seed=0, n_sites=50, z_mean=40.0, z_sd=20.0):
    """Station rows drawn directly in regression form.

    ``Z`` is exogenous (log-normal around ``z_mean``); the model output is
    ``M = L0 + Z (1 + Lc) + e`` with ``sd(e) = |1 + Lc| sigma0``. Used to check
    estimator consistency without latent-field structure.
    """
    rng = np.random.default_rng(seed)
    k, l = bias.k, bias.l
    site_xs = np.column_stack([
        rng.uniform(0, BUFFER_AREA, n_sites), rng.uniform(0, BUFFER_AREA, n_sites),
        rng.uniform(5, 80, n_sites),
    ])[:, :k] if k == 3 else rng.uniform(0, 1, (n_sites, k))
    site = np.sort(rng.integers(0, n_sites, n))
    xs = site_xs[site]
    xt = np.column_stack([rng.uniform(1, 4, n), rng.uniform(0, 12, n)])[:, :l] if l == 2 \
        else rng.uniform(0, 1, (n, l))
    s2 = np.log1p((z_sd / z_mean) ** 2)
    z = rng.lognormal(np.log(z_mean) - s2 / 2, np.sqrt(s2), n)
    d = 1.0 + bias.ac + xs @ bias.zeta_S + xt @ bias.zeta_T
    if np.any(np.abs(d) < 1e-3):
        raise ConfigurationError("1 + Lc vanishes on generated rows")
    m = bias.a0 + xt @ bias.theta_T + z * d + rng.normal(0.0, 1.0, n) * np.abs(d) * bias.sigma0
    devices = tuple(f"R{i:03d}" for i in range(n_sites))
    used = np.unique(site)
    remap = np.full(n_sites, -1)
    remap[used] = np.arange(used.size)
    return Rows(tuple(devices[i] for i in used), (STATION,) * used.size, remap[site],
                np.arange(n, dtype=np.int64), m, z, np.zeros((n, len(CHANNELS))), xs, xt)


def simulate_collocation(camp: SynthCampaign, n_hours=300, ref_sd=2.0):
    """Earlier collocation period: every sensor beside a reference analyser.

    Concentrations and temperatures are resampled from the campaign's first
    station; the reference reads them with noise ``ref_sd``. Each sensor's
    signal is regressed by OLS on ``[1, reference, channels]``.

    Returns
    -------
    dict
        ``sensor_id -> {beta, alpha, gamma_<channel>..., sigma, alpha_se}`` in the
        layout :func:`aqfusion.inference.init_from_collocation` reads.
    """
    spec = camp.spec
    rng = np.random.default_rng([spec.seed, 1])
    obs = camp.observations
    r, c = camp.cells[station_ids(spec.n_stations)[0]]
    out = {}
    for sid in sensor_ids(spec.n_sensors):
        pick = rng.integers(0, camp.hours.size, n_hours)
        conc = camp.latent[pick, r, c]
        y = _channels(conc, obs.xt[pick, 1], rng, spec.channel_noise)
        cal = camp.calibrations[sid]
        z = cal.beta + cal.alpha * conc + y @ cal.gamma + (rng.normal(0, cal.sigma, n_hours)
                                                          if cal.sigma > 0 else 0.0)
        ref = conc + rng.normal(0, ref_sd, n_hours)
        X = np.column_stack([np.ones(n_hours), ref, y])
        coef, *_ = np.linalg.lstsq(X, z, rcond=None)
        resid = z - X @ coef
        s2 = float(resid @ resid) / (n_hours - X.shape[1])
        cov = s2 * np.linalg.inv(X.T @ X)
        entry = {"beta": float(coef[0]), "alpha": float(coef[1])}
        entry.update({f"gamma_{ch}": float(g) for ch, g in zip(CHANNELS, coef[2:])})
        entry["sigma"] = float(np.sqrt(s2))
        entry["alpha_se"] = float(np.sqrt(cov[1, 1]))
        out[sid] = entry
    return out


def with_bias(spec: SynthSpec, bias: BiasParameters) -> SynthSpec:
    return replace(spec, bias=bias)
