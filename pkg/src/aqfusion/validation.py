"""Scores, train/test split, leave-one-station-out validation and diurnal profiles."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import DEFAULT_GUARD, correct_values
from .errors import ConfigurationError, DataError
from .io.timeaxis import weekday_and_hour
from .measurement import SENSOR, STATION, build_rows, sensor_invert

MODES = ("S", "S+LCS")
ROW_LABELS = {"raw": "Model output", "S": "Correction (S)", "S+LCS": "Correction (S+LCS)"}


@dataclass(frozen=True)
class ScoreReport:
    ev: float
    mae: float
    rmse: float
    n: int
    scope: str = ""
    model: str = ""

    def __post_init__(self):
        if self.n <= 0:
            raise ConfigurationError("a score needs at least one pair")

    def to_dict(self):
        return asdict(self)


def scores(predictions, measurements, scope="", model="") -> ScoreReport:
    """Explained variance (%), MAE and RMSE of ``predictions`` against ``measurements``.

    EV is ``100 (1 - SSres / SStot)`` with SStot taken around the pooled mean
    of the measurements.
    """
    p = np.asarray(predictions, dtype=float).ravel()
    z = np.asarray(measurements, dtype=float).ravel()
    if p.shape != z.shape:
        raise ConfigurationError(f"predictions ({p.size}) and measurements ({z.size}) are not aligned")
    if p.size < 2:
        raise DataError("scores need at least 2 pairs")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(z))):
        raise DataError("scores received non-finite values")
    r = z - p
    ss_tot = float(np.sum((z - z.mean()) ** 2))
    if ss_tot == 0:
        raise DataError("measurements have zero variance; EV is undefined")
    ss_res = float(np.sum(r ** 2))
    return ScoreReport(100.0 * (1.0 - ss_res / ss_tot), float(np.mean(np.abs(r))),
                       math.sqrt(ss_res / r.size), int(r.size), scope, model)


def split_train_test(hours, fraction=0.7, seed=0):
    """Uniform hour-level split; the training set has ``round(fraction * n)`` hours (halves up)."""
    hours = np.unique(np.asarray(hours, dtype=np.int64))
    n = hours.size
    if n < 10:
        raise DataError(f"only {n} eligible hours; at least 10 are needed for a split")
    if not 0 < fraction <= 1:
        raise ConfigurationError("fraction must lie in (0, 1]")
    n_train = int(math.floor(fraction * n + 0.5))
    if n_train == 0 or n_train == n:
        raise ConfigurationError(f"fraction {fraction} leaves an empty {'training' if n_train == 0 else 'test'} set")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(hours[perm[:n_train]]), np.sort(hours[perm[n_train:]])


def apply_mode(obs, mode):
    if mode == "S":
        return obs.stations_only()
    if mode == "S+LCS":
        return obs
    raise ConfigurationError(f"unknown mode {mode!r}; expected one of {MODES}")


def corrected_series(obs, device_id, bias, guard=DEFAULT_GUARD):
    """Corrected model output at a device for every hour of ``obs`` (NaN where inputs are missing)."""
    d = obs.device_index(device_id)
    m = obs.m[d]
    ok = np.isfinite(m) & np.all(np.isfinite(obs.xt), axis=1)
    out = np.full(m.shape, np.nan)
    if ok.any():
        xs = np.broadcast_to(obs.xs[d], (int(ok.sum()), obs.xs.shape[1]))
        out[ok], _ = correct_values(bias, m[ok], xs, obs.xt[ok], guard)
    return out


@dataclass
class ValidationResult:
    """Scores per station and pooled, plus the series used to compute them."""

    protocol: str
    mode: str
    per_station: dict
    pooled: dict
    series: dict
    fitted: object = None


def _station_scores(obs, sid, corrected, hours):
    d = obs.device_index(sid)
    sel = np.isin(obs.hours, hours)
    z, m = obs.z[d, sel], obs.m[d, sel]
    c = corrected[sel]
    ok = np.isfinite(z) & np.isfinite(m) & np.isfinite(c)
    return z[ok], m[ok], c[ok]


def loo_station_cv(obs, fitter, mode="S+LCS", fit_hours=None, eval_hours=None,
                   guard=DEFAULT_GUARD) -> ValidationResult:
    """Leave-one-station-out validation.

    For each station, ``fitter(rows)`` is called on rows that exclude it
    (and all sensors in mode "S"); the fitted bias then corrects the model
    output at the withheld station over ``eval_hours``.

    Parameters
    ----------
    obs : ObservationSet
    fitter : callable
        ``rows -> BiasParameters`` or ``rows -> (BiasParameters, calibrations)``.
    fit_hours, eval_hours : array_like, optional
        Hours used for fitting and for scoring; all hours by default.
    """
    stations = [d for d, k in zip(obs.device_ids, obs.kinds) if k == STATION]
    if len(stations) < 2:
        raise DataError("leave-one-out needs at least 2 stations")
    fit_hours = obs.hours if fit_hours is None else np.asarray(fit_hours)
    eval_hours = obs.hours if eval_hours is None else np.asarray(eval_hours)
    data = apply_mode(obs, mode)
    per_station, series = {}, {}
    pooled_z, pooled_m, pooled_c = [], [], []
    for sid in sorted(stations):
        rows = build_rows(data.drop_devices([sid]).select_hours(fit_hours))
        fitted = fitter(rows)
        bias = fitted[0] if isinstance(fitted, tuple) else fitted
        corr = corrected_series(obs, sid, bias, guard)
        z, m, c = _station_scores(obs, sid, corr, eval_hours)
        per_station[sid] = {"raw": scores(m, z, "loo", "raw"), "corrected": scores(c, z, "loo", mode),
                            "bias": bias}
        series[sid] = corr
        pooled_z.append(z)
        pooled_m.append(m)
        pooled_c.append(c)
    z, m, c = map(np.concatenate, (pooled_z, pooled_m, pooled_c))
    pooled = {"raw": {"loo": scores(m, z, "loo", "raw")}, "corrected": {"loo": scores(c, z, "loo", mode)}}
    return ValidationResult("loo", mode, per_station, pooled, series)


def split_validation(obs, fitter, train_hours, test_hours, mode="S+LCS",
                     guard=DEFAULT_GUARD) -> ValidationResult:
    """Fit on training hours, score stations on training and test hours."""
    data = apply_mode(obs, mode)
    fitted = fitter(build_rows(data.select_hours(train_hours)))
    bias = fitted[0] if isinstance(fitted, tuple) else fitted
    stations = sorted(d for d, k in zip(obs.device_ids, obs.kinds) if k == STATION)
    per_station, series = {}, {}
    pooled = {"raw": {}, "corrected": {}}
    for scope, hours in (("training", train_hours), ("test", test_hours)):
        zs, ms, cs = [], [], []
        for sid in stations:
            corr = series.setdefault(sid, corrected_series(obs, sid, bias, guard))
            z, m, c = _station_scores(obs, sid, corr, hours)
            zs.append(z)
            ms.append(m)
            cs.append(c)
            per_station.setdefault(sid, {})[scope] = {
                "raw": scores(m, z, scope, "raw"), "corrected": scores(c, z, scope, mode)}
        z, m, c = map(np.concatenate, (zs, ms, cs))
        pooled["raw"][scope] = scores(m, z, scope, "raw")
        pooled["corrected"][scope] = scores(c, z, scope, mode)
    return ValidationResult("split", mode, per_station, pooled, series, fitted)


def diurnal_profile(obs, corrected, scope_hours=None, calibrations=None):
    """Hour-of-day means of measurement, raw model output and corrected output.

    Parameters
    ----------
    corrected : dict
        ``device_id -> corrected series`` aligned with ``obs.hours``.
    scope_hours : array_like, optional
        Hours to include (e.g. the test hours); all hours by default.
    calibrations : dict, optional
        Sensor calibrations; sensors without one get NaN measurement means.

    Returns
    -------
    list of dict
        One row per (device, hour of day) with at least one hour in scope.
    """
    keep = np.ones(obs.hours.size, bool) if scope_hours is None else np.isin(obs.hours, scope_hours)
    if not keep.any():
        raise DataError("diurnal profile scope is empty")
    _, hod = weekday_and_hour(obs.hours)
    calibrations = calibrations or {}
    rows = []
    for sid in sorted(corrected):
        d = obs.device_index(sid)
        if obs.kinds[d] == SENSOR:
            cal = calibrations.get(sid)
            meas = sensor_invert(cal, obs.z[d], obs.y[d]) if cal is not None else np.full(obs.hours.size, np.nan)
        else:
            meas = obs.z[d]
        for h in range(24):
            sel = keep & (hod == h)
            if not sel.any():
                continue
            rows.append({
                "device": sid, "hour": h, "n": int(sel.sum()),
                "measured": float(np.nanmean(meas[sel])) if np.isfinite(meas[sel]).any() else math.nan,
                "model": float(np.nanmean(obs.m[d, sel])),
                "corrected": float(np.nanmean(np.asarray(corrected[sid])[sel])),
            })
    return rows


def write_rows_csv(path, rows):
    rows = list(rows)
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def score_rows(results):
    """Flatten ValidationResults into table rows (pooled and per station)."""
    out = []
    for res in results:
        for key in ("raw", "corrected"):
            label = "raw" if key == "raw" else res.mode
            for scope, rep in res.pooled[key].items():
                out.append({"protocol": res.protocol, "mode": res.mode, "station": "pooled",
                            "scope": scope, "model": label, "ev": rep.ev, "mae": rep.mae,
                            "rmse": rep.rmse, "n": rep.n})
        for sid, entry in sorted(res.per_station.items()):
            scoped = {"loo": entry} if "raw" in entry else entry
            for scope, e in scoped.items():
                for key in ("raw", "corrected"):
                    rep = e[key]
                    out.append({"protocol": res.protocol, "mode": res.mode, "station": sid,
                                "scope": scope, "model": rep.model, "ev": rep.ev, "mae": rep.mae,
                                "rmse": rep.rmse, "n": rep.n})
    return out


def summary_block(results):
    """Plain-text table with one row for the raw model and one per correction mode."""
    scopes = []
    for res in results:
        for scope in res.pooled["corrected"]:
            if scope not in scopes:
                scopes.append(scope)
    head = f"{'':<22}" + "".join(f"{s + ' EV%':>12}{s + ' MAE':>12}{s + ' RMSE':>12}" for s in scopes)
    lines = [head]

    def fmt(label, reps):
        cells = []
        for s in scopes:
            r = reps.get(s)
            cells.append("".join(f"{v:>12.2f}" for v in (r.ev, r.mae, r.rmse)) if r else " " * 36)
        return f"{label:<22}" + "".join(cells)

    if results:
        lines.append(fmt(ROW_LABELS["raw"], results[0].pooled["raw"]))
    for res in results:
        lines.append(fmt(ROW_LABELS[res.mode], res.pooled["corrected"]))
    return "\n".join(lines)
