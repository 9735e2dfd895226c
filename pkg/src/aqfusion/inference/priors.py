"""Univariate priors, the default prior set and their (de)serialisation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from ..core import SPATIAL_NAMES, TEMPORAL_NAMES
from ..errors import ConfigurationError, FormatError
from ..measurement import CHANNELS

FAMILIES = ("normal", "gamma", "weibull")
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Prior:
    """``family(a, b)`` on the parameter, or on its opposite when ``negate``.

    normal: a = mean, b = sd. gamma: a = shape, b = scale.
    weibull: a = shape, b = scale.
    """

    family: str
    a: float
    b: float
    negate: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown prior family {self.family!r}")
        if not self.b > 0 or (self.family != "normal" and not self.a > 0):
            raise ConfigurationError(f"invalid {self.family} prior parameters ({self.a}, {self.b})")
        if self.family == "normal" and self.negate:
            raise ConfigurationError("negation only applies to gamma and weibull priors")

    @property
    def sign(self):
        """Support sign: -1 negative, +1 positive, 0 whole real line."""
        if self.family == "normal":
            return 0
        return -1 if self.negate else 1

    def logpdf(self, x):
        x = float(x)
        if self.family == "normal":
            return -0.5 * ((x - self.a) / self.b) ** 2 - math.log(self.b) - _LOG_SQRT_2PI
        v = -x if self.negate else x
        if not v > 0:
            return -math.inf
        if self.family == "gamma":
            return (self.a - 1) * math.log(v) - v / self.b - math.lgamma(self.a) - self.a * math.log(self.b)
        r = v / self.b
        return math.log(self.a / self.b) + (self.a - 1) * math.log(r) - r ** self.a

    def _magnitude_moments(self):
        if self.family == "normal":
            return self.a, self.b ** 2
        if self.family == "gamma":
            return self.a * self.b, self.a * self.b ** 2
        g1 = math.gamma(1 + 1 / self.a)
        g2 = math.gamma(1 + 2 / self.a)
        return self.b * g1, self.b ** 2 * (g2 - g1 ** 2)

    @property
    def mean(self):
        m, _ = self._magnitude_moments()
        return -m if self.negate else m

    @property
    def var(self):
        return self._magnitude_moments()[1]

    def sample(self, rng, size=None):
        if self.family == "normal":
            return rng.normal(self.a, self.b, size)
        if self.family == "gamma":
            v = rng.gamma(self.a, self.b, size)
        else:
            v = self.b * rng.weibull(self.a, size)
        return -v if self.negate else v

    def to_dict(self):
        d = {"family": self.family, "a": self.a, "b": self.b}
        if self.negate:
            d["negate"] = True
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d["family"], float(d["a"]), float(d["b"]), bool(d.get("negate", False)))
        except KeyError as exc:
            raise FormatError(f"prior entry lacks {exc}") from None


class PriorSpec(dict):
    """Mapping from parameter template (``alpha``) or full name (``alpha[ASE4]``) to Prior."""

    def resolve(self, name, template):
        if name in self:
            return self[name]
        if template in self:
            return self[template]
        raise ConfigurationError(f"no prior for parameter {name!r}")

    def for_layout(self, layout):
        priors = [self.resolve(n, layout.template(n)) for n in layout.names]
        for n, p in zip(layout.names, priors):
            if layout.template(n) in ("sigma", "sigma0") and p.sign != 1:
                raise ConfigurationError(f"noise scale {n} needs a positive-support prior")
        return priors

    def signs(self, layout):
        return {n: p.sign for n, p in zip(layout.names, self.for_layout(layout))}

    def to_dict(self):
        return {k: v.to_dict() for k, v in self.items()}

    @classmethod
    def from_dict(cls, d):
        return cls({k: Prior.from_dict(v) for k, v in d.items()})


def _check_rouen_shape(spatial_names, temporal_names, channels):
    if (tuple(spatial_names) != SPATIAL_NAMES or tuple(temporal_names) != TEMPORAL_NAMES
            or set(channels) != set(CHANNELS)):
        raise ConfigurationError(
            f"built-in priors cover spatial={SPATIAL_NAMES}, temporal={TEMPORAL_NAMES}, "
            f"channels={CHANNELS}; supply an explicit prior file for other campaigns"
        )


def default_priors(spatial_names=SPATIAL_NAMES, temporal_names=TEMPORAL_NAMES, channels=CHANNELS):
    """Reference prior set.

    Gamma and Weibull use (shape, scale). ``sigma0`` has no published prior
    and reuses the sensor noise prior.
    """
    _check_rouen_shape(spatial_names, temporal_names, channels)
    return PriorSpec({
        "a0": Prior("normal", 0.0, 1.0),
        "ac": Prior("gamma", 4.0, 0.25, negate=True),
        "theta_T[inv_ustar]": Prior("normal", 0.0, 1.0),
        "theta_T[temperature]": Prior("gamma", 2.0, 0.001, negate=True),
        "zeta_T[inv_ustar]": Prior("normal", 0.5, 1.0),
        "zeta_T[temperature]": Prior("gamma", 2.0, 0.001),
        "zeta_S[roads]": Prior("gamma", 1.0, 5.0, negate=True),
        "zeta_S[green]": Prior("gamma", 1.0, 5.0),
        "zeta_S[elevation]": Prior("weibull", 2.0, 1.0),
        "sigma0": Prior("weibull", 25.0, 5.0),
        "beta": Prior("normal", 27000.0, 1000.0),
        "alpha": Prior("gamma", 7.0, 0.5, negate=True),
        "sigma": Prior("weibull", 25.0, 5.0),
        "gamma_NO": Prior("normal", 0.0, 1.0),
        "gamma_Ox": Prior("normal", 0.0, 1.0),
        "gamma_CO": Prior("normal", 0.0, 1.0),
        "gamma_T": Prior("normal", -10.0, 5.0),
        "gamma_RH": Prior("normal", -1.0, 1.0),
    })


def weak_priors(spatial_names=SPATIAL_NAMES, temporal_names=TEMPORAL_NAMES, channels=CHANNELS):
    """Same families and sign constraints as :func:`default_priors`, wide scales.

    The reference noise prior Weibull(25, 5) is concentrated near 5, which
    leaves no room for noise levels around 15-35; this set is meant for
    synthetic campaigns and sensitivity runs.
    """
    _check_rouen_shape(spatial_names, temporal_names, channels)
    return PriorSpec({
        "a0": Prior("normal", 0.0, 20.0),
        "ac": Prior("gamma", 2.0, 0.25, negate=True),
        "theta_T[inv_ustar]": Prior("normal", 0.0, 20.0),
        "theta_T[temperature]": Prior("gamma", 1.0, 1.0, negate=True),
        "zeta_T[inv_ustar]": Prior("normal", 0.0, 2.0),
        "zeta_T[temperature]": Prior("gamma", 1.0, 0.1),
        "zeta_S[roads]": Prior("gamma", 1.0, 0.5, negate=True),
        "zeta_S[green]": Prior("gamma", 1.0, 1.0),
        "zeta_S[elevation]": Prior("weibull", 1.0, 0.05),
        "sigma0": Prior("weibull", 2.0, 30.0),
        "beta": Prior("normal", 26000.0, 5000.0),
        "alpha": Prior("gamma", 2.0, 2.0, negate=True),
        "sigma": Prior("weibull", 2.0, 40.0),
        "gamma_NO": Prior("normal", 0.0, 5.0),
        "gamma_Ox": Prior("normal", 0.0, 5.0),
        "gamma_CO": Prior("normal", 0.0, 5.0),
        "gamma_T": Prior("normal", -10.0, 30.0),
        "gamma_RH": Prior("normal", -1.0, 5.0),
    })


PRESETS = {"appendix-b": default_priors, "default": default_priors, "weak": weak_priors}


def log_prior(theta, priors):
    """Sum of component log densities; -inf outside any sign constraint."""
    total = 0.0
    for x, p in zip(np.asarray(theta, dtype=float), priors):
        lp = p.logpdf(x)
        if lp == -math.inf:
            return -math.inf
        total += lp
    return total


def prior_means(priors):
    return np.array([p.mean for p in priors])


def save_priors(spec: PriorSpec, path):
    Path(path).write_text(yaml.safe_dump({"priors": spec.to_dict()}, sort_keys=False))


def load_priors(path) -> PriorSpec:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise FormatError(f"{path}: invalid YAML ({exc})") from None
    if not isinstance(data, dict) or "priors" not in data:
        raise FormatError(f"{path}: expected a 'priors' mapping")
    return PriorSpec.from_dict(data["priors"])


def resolve_priors(choice, spatial_names=SPATIAL_NAMES, temporal_names=TEMPORAL_NAMES, channels=CHANNELS):
    """Preset name or path to a prior file."""
    if choice in PRESETS:
        return PRESETS[choice](spatial_names, temporal_names, channels)
    return load_priors(choice)


def collocation_priors(base: PriorSpec, table) -> PriorSpec:
    """Per-sensor slope priors centred on collocation estimates.

    Each table entry with ``alpha < 0`` and a standard error ``alpha_se`` gets
    ``-alpha[id] ~ Gamma`` with mean ``|alpha|`` and sd ``alpha_se``; every
    other parameter keeps its prior from ``base``.
    """
    out = PriorSpec(base)
    for sid, entry in (table or {}).items():
        a, se = entry.get("alpha"), entry.get("alpha_se")
        if a is None or se is None:
            continue
        if not (a < 0 and se > 0):
            raise ConfigurationError(f"collocation slope for {sid} must be negative with a positive se")
        m = -float(a)
        out[f"alpha[{sid}]"] = Prior("gamma", (m / se) ** 2, se ** 2 / m, negate=True)
    return out
