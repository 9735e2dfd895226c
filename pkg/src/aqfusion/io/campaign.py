"""Campaign configuration, device/covariate tables and dataset assembly."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from ..core import SPATIAL_NAMES, TEMPORAL_NAMES, ConcentrationGrid
from ..errors import ConfigurationError, DataError, FormatError
from ..measurement import CHANNELS, SENSOR, STATION
from .grids import read_grid, resample_elevation
from .timeaxis import TrafficWindow, format_hour, parse_timestamp


@dataclass(frozen=True)
class DeviceSpec:
    device_id: str
    kind: str
    x: float
    y: float
    path: str

    def __post_init__(self):
        if self.kind not in (STATION, SENSOR):
            raise ConfigurationError(f"device {self.device_id}: kind must be station or sensor")


@dataclass(frozen=True)
class CovariateSpec:
    name: str
    path: str
    resample: bool = False


@dataclass
class CampaignConfig:
    devices: list
    spatial: list
    temporal_path: str
    grid_glob: str
    channels: dict = field(default_factory=lambda: {c: c for c in CHANNELS})
    temporal_columns: dict = field(default_factory=lambda: {n: n for n in TEMPORAL_NAMES})
    traffic: TrafficWindow = field(default_factory=TrafficWindow)
    grid_timestamp_pattern: str | None = None
    ustar_floor: float = 0.01
    crs: str = ""
    base_dir: Path = field(default_factory=Path)

    @property
    def channel_order(self):
        return tuple(self.channels)

    @property
    def spatial_names(self):
        return tuple(c.name for c in self.spatial)

    @property
    def temporal_names(self):
        return tuple(self.temporal_columns)

    def resolve(self, p):
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @classmethod
    def from_dict(cls, d, base_dir=Path(".")):
        try:
            devices = [
                DeviceSpec(str(e["id"]), e["kind"], float(e["x"]), float(e["y"]),
                           e.get("path", f"devices/{e['id']}.csv"))
                for e in d.get("devices") or []
            ]
            spatial = [CovariateSpec(e["name"], e["path"], bool(e.get("resample", False)))
                       for e in d["spatial"]]
            temporal = d["temporal"]
            cfg = cls(
                devices=devices,
                spatial=spatial,
                temporal_path=temporal["path"],
                temporal_columns=dict(temporal.get("columns") or {n: n for n in TEMPORAL_NAMES}),
                grid_glob=d["grids"]["glob"],
                grid_timestamp_pattern=d["grids"].get("timestamp_pattern"),
                channels=dict(d.get("channels") or {c: c for c in CHANNELS}),
                traffic=TrafficWindow.from_dict(d.get("traffic_hours")),
                ustar_floor=float(temporal.get("ustar_floor", 0.01)),
                crs=d.get("crs", ""),
                base_dir=Path(base_dir),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"campaign config missing or malformed entry: {exc}") from None
        if not all(isinstance(v, str) for v in cfg.channels.values()):
            raise ConfigurationError("channel mapping must map each channel to a raw column name")
        return cfg

    def to_dict(self):
        return {
            "crs": self.crs,
            "grids": {"glob": self.grid_glob, "timestamp_pattern": self.grid_timestamp_pattern},
            "spatial": [{"name": c.name, "path": c.path, "resample": c.resample} for c in self.spatial],
            "temporal": {"path": self.temporal_path, "columns": dict(self.temporal_columns),
                         "ustar_floor": self.ustar_floor},
            "channels": dict(self.channels),
            "traffic_hours": self.traffic.to_dict(),
            "devices": [{"id": d.device_id, "kind": d.kind, "x": d.x, "y": d.y, "path": d.path}
                        for d in self.devices],
        }


def load_config(path) -> CampaignConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise FormatError(f"{path}: invalid YAML ({exc})") from None
    if not isinstance(data, dict):
        raise FormatError(f"{path}: expected a mapping at top level")
    return CampaignConfig.from_dict(data, base_dir=path.parent)


def save_config(cfg: CampaignConfig, path):
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))


# --- delimited tables -------------------------------------------------------

def _fmt(v):
    v = float(v)
    return "" if np.isnan(v) else repr(v)


def _num(text, path, col):
    if text is None or text.strip() == "":
        return np.nan
    try:
        return float(text)
    except ValueError:
        raise FormatError(f"{path}: non-numeric value {text!r} in column {col!r}") from None


def write_table(path, columns, hours, data):
    """Write ``timestamp`` plus one column per entry of ``columns``; ``data`` is (T, len(columns))."""
    data = np.asarray(data, dtype=float).reshape(len(hours), len(columns))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", *columns])
        for h, row in zip(hours, data):
            w.writerow([format_hour(h), *(_fmt(v) for v in row)])


def read_table(path, columns):
    """Read a timestamped table; returns ``(hours, data)`` with NaN for blanks."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "timestamp" not in reader.fieldnames:
            raise FormatError(f"{path}: header row must start with 'timestamp'")
        missing = [c for c in columns if c not in reader.fieldnames]
        if missing:
            raise FormatError(f"{path}: missing columns {missing}")
        hours, rows = [], []
        for rec in reader:
            hours.append(parse_timestamp(rec["timestamp"]))
            rows.append([_num(rec[c], path, c) for c in columns])
    hours = np.array(hours, dtype=np.int64)
    if np.unique(hours).size != hours.size:
        dup = hours[np.flatnonzero(np.diff(np.sort(hours)) == 0)[0]]
        raise DataError(f"{path}: timestamp collision at {format_hour(dup)}")
    return hours, np.array(rows, dtype=float).reshape(len(hours), len(columns))


def read_temporal(cfg: CampaignConfig):
    """Temporal covariates; ``inv_ustar`` may be derived from a raw ``ustar`` column."""
    cols = list(cfg.temporal_columns.values())
    hours, data = read_table(cfg.resolve(cfg.temporal_path), cols)
    out = data.copy()
    for j, (name, col) in enumerate(cfg.temporal_columns.items()):
        if name == "inv_ustar" and col.lower() in ("ustar", "u_star", "u*"):
            ustar = data[:, j]
            small = ~(ustar > cfg.ustar_floor)
            with np.errstate(divide="ignore"):
                out[:, j] = np.where(small, np.nan, 1.0 / ustar)
    return hours, out


# --- observation set --------------------------------------------------------

@dataclass(frozen=True)
class ObservationSet:
    """Time-aligned model outputs, measurements and covariates at device locations.

    Arrays are indexed ``[device, hour]``; stations carry NaN in ``y``.
    """

    hours: np.ndarray
    device_ids: tuple
    kinds: tuple
    locations: np.ndarray
    z: np.ndarray
    m: np.ndarray
    y: np.ndarray
    xs: np.ndarray
    xt: np.ndarray
    channels: tuple = CHANNELS
    spatial_names: tuple = SPATIAL_NAMES
    temporal_names: tuple = TEMPORAL_NAMES

    @property
    def mask(self):
        ok = np.isfinite(self.z) & np.isfinite(self.m)
        ok &= np.all(np.isfinite(self.xt), axis=1)[None, :]
        is_sensor = np.array([k == SENSOR for k in self.kinds], dtype=bool)
        if self.y.shape[-1]:
            y_ok = np.all(np.isfinite(self.y), axis=2)
            ok &= np.where(is_sensor[:, None], y_ok, True)
        return ok

    def missing_report(self):
        mask = self.mask
        return {d: int(np.count_nonzero(~mask[i])) for i, d in enumerate(self.device_ids)}

    def select_devices(self, keep):
        idx = [i for i, d in enumerate(self.device_ids) if d in set(keep)]
        return replace(
            self,
            device_ids=tuple(self.device_ids[i] for i in idx),
            kinds=tuple(self.kinds[i] for i in idx),
            locations=self.locations[idx], z=self.z[idx], m=self.m[idx], y=self.y[idx],
            xs=self.xs[idx],
        )

    def drop_devices(self, ids):
        ids = set(ids)
        return self.select_devices([d for d in self.device_ids if d not in ids])

    def stations_only(self):
        return self.select_devices([d for d, k in zip(self.device_ids, self.kinds) if k == STATION])

    def select_hours(self, hours):
        keep = np.isin(self.hours, np.asarray(hours))
        return replace(self, hours=self.hours[keep], z=self.z[:, keep], m=self.m[:, keep],
                       y=self.y[:, keep], xt=self.xt[keep])

    def device_index(self, device_id):
        return self.device_ids.index(device_id)

    def equals(self, other):
        def same(a, b):
            a, b = np.asarray(a), np.asarray(b)
            return a.shape == b.shape and np.array_equal(a, b, equal_nan=a.dtype.kind == "f")
        return (
            self.device_ids == other.device_ids and self.kinds == other.kinds
            and self.channels == other.channels and self.spatial_names == other.spatial_names
            and self.temporal_names == other.temporal_names
            and all(same(getattr(self, f), getattr(other, f))
                    for f in ("hours", "locations", "z", "m", "y", "xs", "xt"))
        )


def list_grids(cfg: CampaignConfig):
    """Sorted ``[(timestamp, path)]`` of model-output grids; rejects collisions."""
    base = cfg.base_dir
    pattern = re.compile(cfg.grid_timestamp_pattern) if cfg.grid_timestamp_pattern else None
    found = {}
    for path in sorted(base.glob(cfg.grid_glob)):
        grid = read_grid(path)
        ts = grid.timestamp
        if pattern is not None:
            mt = pattern.search(path.name)
            if mt is None:
                raise FormatError(f"{path.name} does not match timestamp pattern")
            ts_name = parse_timestamp(mt.group("stamp"))
            if grid.timestamp not in (0, ts_name):
                raise DataError(f"{path.name}: header timestamp disagrees with file name")
            ts = ts_name
        if ts in found:
            raise DataError(f"timestamp collision: {found[ts].name} and {path.name} both at {format_hour(ts)}")
        found[ts] = path
    if not found:
        raise DataError(f"no model grids match {cfg.grid_glob!r} under {base}")
    return sorted(found.items())


def load_spatial_stack(cfg: CampaignConfig, template: ConcentrationGrid):
    """Spatial covariate rasters on the model grid, shape ``(ny, nx, k)``."""
    layers = []
    for cov in cfg.spatial:
        raster = read_grid(cfg.resolve(cov.path))
        if cov.resample:
            raster = resample_elevation(raster, template)
        elif not raster.same_geometry(template):
            raise ConfigurationError(
                f"covariate {cov.name!r} does not share the model grid geometry; "
                "set resample: true to interpolate it"
            )
        vals = np.where(raster.nodata_mask, np.nan, raster.values)
        layers.append(vals)
    return np.stack(layers, axis=-1)


def assemble(cfg: CampaignConfig) -> ObservationSet:
    """Join model grids, device series and covariates into an ObservationSet."""
    if not cfg.devices:
        raise DataError("device registry is empty")
    ids = [d.device_id for d in cfg.devices]
    if len(set(ids)) != len(ids):
        raise ConfigurationError("duplicate device ids in registry")
    grids = list_grids(cfg)
    hours = np.array([ts for ts, _ in grids], dtype=np.int64)
    first = read_grid(grids[0][1])

    cells = []
    for dev in cfg.devices:
        cell = first.locate(dev.x, dev.y)
        if cell is None:
            raise DataError(f"device {dev.device_id} at ({dev.x}, {dev.y}) lies outside the grid extent")
        cells.append(cell)
    rows_idx = np.array([c[0] for c in cells])
    cols_idx = np.array([c[1] for c in cells])

    stack = load_spatial_stack(cfg, first)
    xs = stack[rows_idx, cols_idx, :]
    if not np.all(np.isfinite(xs)):
        bad = [cfg.devices[i].device_id for i in np.flatnonzero(~np.all(np.isfinite(xs), axis=1))]
        raise DataError(f"spatial covariates are nodata at devices {bad}")

    n_dev, n_t = len(cfg.devices), hours.size
    m = np.empty((n_dev, n_t))
    for t, (_, path) in enumerate(grids):
        grid = first if t == 0 else read_grid(path)
        if not grid.same_geometry(first):
            raise DataError(f"{path.name}: grid geometry differs from {grids[0][1].name}")
        vals = np.where(grid.nodata_mask, np.nan, grid.values)
        m[:, t] = vals[rows_idx, cols_idx]

    t_hours, t_data = read_temporal(cfg)
    xt = np.full((n_t, len(cfg.temporal_columns)), np.nan)
    pos = {int(h): i for i, h in enumerate(t_hours)}
    for t, h in enumerate(hours):
        i = pos.get(int(h))
        if i is not None:
            xt[t] = t_data[i]

    channels = cfg.channel_order
    q = len(channels)
    z = np.full((n_dev, n_t), np.nan)
    y = np.full((n_dev, n_t, q), np.nan)
    hour_pos = {int(h): i for i, h in enumerate(hours)}
    for d, dev in enumerate(cfg.devices):
        cols = ["value"] + ([cfg.channels[c] for c in channels] if dev.kind == SENSOR else [])
        d_hours, data = read_table(cfg.resolve(dev.path), cols)
        for h, row in zip(d_hours, data):
            t = hour_pos.get(int(h))
            if t is None:
                continue
            z[d, t] = row[0]
            if dev.kind == SENSOR:
                y[d, t] = row[1:]

    return ObservationSet(
        hours=hours,
        device_ids=tuple(ids),
        kinds=tuple(d.kind for d in cfg.devices),
        locations=np.array([[d.x, d.y] for d in cfg.devices], dtype=float),
        z=z, m=m, y=y, xs=xs, xt=xt,
        channels=tuple(channels),
        spatial_names=cfg.spatial_names,
        temporal_names=cfg.temporal_names,
    )
