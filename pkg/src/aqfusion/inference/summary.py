"""Point estimates from draws, collocation initial values and parameter files."""

from __future__ import annotations

import csv
import math
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from ..core import BiasParameters
from ..errors import ConfigurationError, FormatError
from ..measurement import CHANNELS, SensorCalibration
from .layout import ParameterLayout
from .priors import prior_means


def binned_mode(x):
    """Mean of the draws in the most populated Freedman-Diaconis histogram bin."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise ConfigurationError("no draws")
    if x.size == 1 or np.all(x == x[0]):
        return float(x[0])
    edges = np.histogram_bin_edges(x, bins="fd")
    if edges.size < 2:
        return float(x.mean())
    counts, edges = np.histogram(x, bins=edges)
    b = int(np.argmax(counts))
    inside = (x >= edges[b]) & ((x < edges[b + 1]) | (b == counts.size - 1) & (x <= edges[b + 1]))
    return float(x[inside].mean())


def posterior_estimate(chains, kind="mean", layout: ParameterLayout | None = None):
    """Typed point estimate from a ChainResult.

    ``kind="mean"`` averages retained draws; ``kind="mode"`` takes the binned
    mode per parameter. Returns ``(BiasParameters, {sensor_id: SensorCalibration})``.
    """
    layout = layout or chains.layout
    if layout is None:
        raise ConfigurationError("chain result carries no parameter layout")
    if chains.draws.size == 0:
        raise ConfigurationError("no retained draws")
    if kind == "mean":
        vec = chains.mean()
    elif kind == "mode":
        vec = chains.mode()
    else:
        raise ConfigurationError(f"unknown estimate kind {kind!r}")
    if list(chains.names) != list(layout.names):
        raise ConfigurationError("draw columns do not match the parameter layout")
    return layout.unpack(vec)


_COLLOCATION_COLUMNS = ("sensor_id", "beta", "alpha") + tuple(f"gamma_{c}" for c in CHANNELS) + ("sigma",)


def read_collocation(path=None):
    """Collocation coefficients keyed by sensor id; the bundled winter-2021 table by default."""
    if path is None:
        text = resources.files("aqfusion.data").joinpath("collocation.csv").read_text()
        src = "bundled collocation table"
    else:
        text = Path(path).read_text()
        src = str(path)
    reader = csv.DictReader(text.splitlines())
    header = reader.fieldnames or []
    missing = [c for c in _COLLOCATION_COLUMNS if c not in header]
    if missing:
        raise FormatError(f"{src}: missing columns {missing}")
    out = {}
    for n, row in enumerate(reader, start=2):
        sid = row["sensor_id"].strip()
        if not sid or sid in out:
            raise FormatError(f"{src}:{n}: empty or duplicate sensor id {sid!r}")
        try:
            out[sid] = {c: float(row[c]) for c in _COLLOCATION_COLUMNS[1:]}
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{src}:{n}: bad value ({exc})") from None
    return out


def init_from_collocation(table, layout: ParameterLayout, priors):
    """Initial parameter vector.

    Sensors found in ``table`` take its coefficients; everything else (bias
    parameters and sensors absent from the table) starts at the prior mean.
    """
    plist = priors.for_layout(layout) if hasattr(priors, "for_layout") else list(priors)
    vec = prior_means(plist)
    if table is None:
        return vec
    if not isinstance(table, dict):
        raise FormatError("collocation table must map sensor ids to coefficients")
    names = layout.names
    for sid in layout.sensor_ids:
        if sid not in table:
            continue
        entry = table[sid]
        for tmpl in layout.sensor_templates():
            if tmpl not in entry:
                raise FormatError(f"collocation entry for {sid} lacks {tmpl}")
            v = float(entry[tmpl])
            if not math.isfinite(v):
                raise FormatError(f"collocation entry {tmpl}[{sid}] is not finite")
            vec[names.index(f"{tmpl}[{sid}]")] = v
    return vec


def write_parameters(path, bias: BiasParameters, calibrations=None, channels=CHANNELS, meta=None):
    doc = {"bias": bias.to_dict(),
           "sensors": [cal.to_dict(channels) for _, cal in sorted((calibrations or {}).items())]}
    if meta:
        doc["meta"] = meta
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))


def read_parameters(path, channels=CHANNELS):
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise FormatError(f"{path}: invalid YAML ({exc})") from None
    if not isinstance(doc, dict) or "bias" not in doc:
        raise FormatError(f"{path}: expected a 'bias' mapping")
    try:
        bias = BiasParameters.from_dict(doc["bias"])
        cals = {}
        for d in doc.get("sensors") or []:
            cal = SensorCalibration.from_dict(d, channels)
            cals[cal.sensor_id] = cal
    except (KeyError, TypeError, ValueError, ConfigurationError) as exc:
        raise FormatError(f"{path}: malformed parameters ({exc})") from None
    return bias, cals
