"""Bias model of the deterministic air-quality model and map correction.

The model output is written ``M = C + L0 + C * Lc`` with

    L0 = a0 + theta_T . x_T
    Lc = ac + zeta_S . x_S + zeta_T . x_T

so a corrected concentration is ``(M - L0) / (1 + Lc)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, SingularCorrectionError

DEFAULT_GUARD = 1e-3

SPATIAL_NAMES = ("roads", "green", "elevation")
TEMPORAL_NAMES = ("inv_ustar", "temperature")


def _vec(x, name):
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise ConfigurationError(f"{name} must be a vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class BiasParameters:
    """Parameters of the bias ``B = L0 + C * Lc``.

    Sign constraints (``ac < 0`` etc.) come from the priors and are checked by
    :meth:`satisfies_signs` rather than at construction, so that the all-zero
    (unbiased) model can be represented.
    """

    a0: float
    ac: float
    theta_T: np.ndarray
    zeta_S: np.ndarray
    zeta_T: np.ndarray
    sigma0: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "a0", float(self.a0))
        object.__setattr__(self, "ac", float(self.ac))
        object.__setattr__(self, "sigma0", float(self.sigma0))
        for name in ("theta_T", "zeta_S", "zeta_T"):
            arr = _vec(getattr(self, name), name)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.theta_T.shape != self.zeta_T.shape:
            raise ConfigurationError(
                f"theta_T and zeta_T must have the same length "
                f"({self.theta_T.size} != {self.zeta_T.size})"
            )
        if not self.sigma0 >= 0:
            raise ConfigurationError(f"sigma0 must be >= 0, got {self.sigma0}")

    def __eq__(self, other):
        if not isinstance(other, BiasParameters):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None

    @property
    def k(self):
        return self.zeta_S.size

    @property
    def l(self):  # noqa: E743
        return self.theta_T.size

    @classmethod
    def zeros(cls, k=3, l=2, sigma0=1.0):  # noqa: E741
        return cls(0.0, 0.0, np.zeros(l), np.zeros(k), np.zeros(l), sigma0)

    def satisfies_signs(self, signs):
        """Check a mapping ``name -> -1/0/+1`` of sign constraints."""
        for name, s in signs.items():
            if s == 0:
                continue
            value = self.get(name)
            if s < 0 and not value < 0:
                return False
            if s > 0 and not value > 0:
                return False
        return True

    def get(self, name):
        if name in ("a0", "ac", "sigma0"):
            return getattr(self, name)
        base, idx = name.rstrip("]").split("[")
        return float(getattr(self, base)[int(idx)])

    def to_dict(self):
        return {
            "a0": self.a0,
            "ac": self.ac,
            "theta_T": [float(v) for v in self.theta_T],
            "zeta_S": [float(v) for v in self.zeta_S],
            "zeta_T": [float(v) for v in self.zeta_T],
            "sigma0": self.sigma0,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d["a0"], d["ac"], d["theta_T"], d["zeta_S"], d["zeta_T"],
                       d.get("sigma0", 1.0))
        except KeyError as exc:
            raise ConfigurationError(f"bias parameters missing field {exc}") from None


@dataclass(frozen=True)
class SpatialCovariates:
    roads: float
    green: float
    elevation: float

    def __post_init__(self):
        arr = self.as_array()
        if not np.all(np.isfinite(arr)):
            raise ConfigurationError(f"spatial covariates must be finite: {arr}")
        if self.roads < 0 or self.green < 0:
            raise ConfigurationError("road and green areas must be >= 0")

    def as_array(self):
        return np.array([self.roads, self.green, self.elevation], dtype=float)


@dataclass(frozen=True)
class TemporalCovariates:
    inv_ustar: float
    temperature: float

    def __post_init__(self):
        if not (np.isfinite(self.inv_ustar) and self.inv_ustar > 0):
            raise ConfigurationError(f"inverse friction velocity must be > 0, got {self.inv_ustar}")
        if not np.isfinite(self.temperature):
            raise ConfigurationError("temperature must be finite")

    def as_array(self):
        return np.array([self.inv_ustar, self.temperature], dtype=float)


def _covariates(x, expected, name):
    if isinstance(x, (SpatialCovariates, TemporalCovariates)):
        x = x.as_array()
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] != expected:
        raise ConfigurationError(
            f"{name} has trailing dimension {arr.shape[-1] if arr.ndim else 0}, expected {expected}"
        )
    return arr


def eval_l0(p: BiasParameters, xt):
    """Additive part ``a0 + theta_T . x_T``; broadcasts over leading axes of ``xt``."""
    xt = _covariates(xt, p.l, "temporal covariates")
    out = p.a0 + xt @ p.theta_T
    return float(out) if np.ndim(out) == 0 else out


def eval_lc(p: BiasParameters, xs, xt):
    """Multiplicative part ``ac + zeta_S . x_S + zeta_T . x_T`` (dimensionless)."""
    xs = _covariates(xs, p.k, "spatial covariates")
    xt = _covariates(xt, p.l, "temporal covariates")
    out = p.ac + xs @ p.zeta_S + xt @ p.zeta_T
    return float(out) if np.ndim(out) == 0 else out


def bias(p: BiasParameters, c, xs, xt):
    """Bias of the model output at true concentration ``c``."""
    c_arr = np.asarray(c, dtype=float)
    if np.any(c_arr < 0):
        raise ConfigurationError("concentration must be >= 0")
    out = eval_l0(p, xt) + c_arr * eval_lc(p, xs, xt)
    return float(out) if np.ndim(out) == 0 else out


def forward_model(p: BiasParameters, c, xs, xt):
    """Model output ``M = C + B`` implied by the bias model."""
    out = np.asarray(c, dtype=float) + bias(p, c, xs, xt)
    return float(out) if np.ndim(out) == 0 else out


def invert_to_concentration(m, l0, lc, guard=DEFAULT_GUARD, *, return_count=False):
    """Concentration estimate ``(m - l0) / (1 + lc)``, negatives clamped to 0.

    Raises SingularCorrectionError when ``|1 + lc| <= guard`` anywhere; the
    error's ``location`` is the flat index of the first offending element.
    """
    m = np.asarray(m, dtype=float)
    denom = 1.0 + np.asarray(lc, dtype=float)
    bad = ~(np.abs(denom) > guard)
    if np.any(bad):
        first = int(np.flatnonzero(np.broadcast_to(bad, np.broadcast(m, denom).shape))[0])
        raise SingularCorrectionError(
            f"|1 + Lc| <= {guard} at element {first}", location=first
        )
    c = (m - np.asarray(l0, dtype=float)) / denom
    negative = c < 0
    n_clamped = int(np.count_nonzero(negative))
    c = np.where(negative, 0.0, c)
    if np.ndim(c) == 0:
        c = float(c)
    return (c, n_clamped) if return_count else c


@dataclass(frozen=True)
class ConcentrationGrid:
    """One hourly raster of concentrations.

    ``values`` has shape ``(ny, nx)``; row 0 is the northern edge and
    ``(origin_x, origin_y)`` is the south-west corner, as in ESRI ASCII grids.
    """

    origin_x: float
    origin_y: float
    cell_size: float
    values: np.ndarray
    timestamp: int = 0
    nodata: float | None = -9999.0
    n_clamped: int = 0
    n_nodata: int = field(default=0, compare=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2:
            raise ConfigurationError(f"grid values must be 2-D, got shape {vals.shape}")
        if not self.cell_size > 0:
            raise ConfigurationError(f"cell size must be > 0, got {self.cell_size}")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "origin_x", float(self.origin_x))
        object.__setattr__(self, "origin_y", float(self.origin_y))
        object.__setattr__(self, "cell_size", float(self.cell_size))
        object.__setattr__(self, "timestamp", int(self.timestamp))
        object.__setattr__(self, "n_nodata", int(np.count_nonzero(self.nodata_mask)))

    @property
    def ny(self):
        return self.values.shape[0]

    @property
    def nx(self):
        return self.values.shape[1]

    @property
    def nodata_mask(self):
        mask = np.isnan(self.values)
        if self.nodata is not None:
            mask |= self.values == self.nodata
        return mask

    def same_geometry(self, other, tol=1e-9):
        return (
            self.values.shape == other.values.shape
            and abs(self.origin_x - other.origin_x) <= tol
            and abs(self.origin_y - other.origin_y) <= tol
            and abs(self.cell_size - other.cell_size) <= tol
        )

    def cell_centers(self):
        """Return ``(x, y)`` arrays of cell-centre coordinates, shape ``(ny, nx)``."""
        cols = self.origin_x + (np.arange(self.nx) + 0.5) * self.cell_size
        rows = self.origin_y + (self.ny - np.arange(self.ny) - 0.5) * self.cell_size
        return np.meshgrid(cols, rows)

    def locate(self, x, y):
        """Row/column of the cell containing point ``(x, y)``, or None if outside."""
        col = int(np.floor((x - self.origin_x) / self.cell_size))
        row_from_south = int(np.floor((y - self.origin_y) / self.cell_size))
        if not (0 <= col < self.nx and 0 <= row_from_south < self.ny):
            return None
        return self.ny - 1 - row_from_south, col

    def with_values(self, values, **changes):
        return replace(self, values=values, **changes)


def correct_values(p: BiasParameters, m, xs, xt, guard=DEFAULT_GUARD):
    """Vectorised correction; returns ``(corrected, n_clamped)``."""
    return invert_to_concentration(
        m, eval_l0(p, xt), eval_lc(p, xs, xt), guard, return_count=True
    )


def correct_grid(grid: ConcentrationGrid, xs_grid, xt, p: BiasParameters,
                 guard=DEFAULT_GUARD) -> ConcentrationGrid:
    """Apply the inversion cellwise.

    ``xs_grid`` is either an array of shape ``(ny, nx, k)`` or a sequence of
    ``k`` ConcentrationGrid-like rasters sharing the grid geometry. Nodata cells
    are passed through untouched and counted in ``n_nodata``.
    """
    if isinstance(xs_grid, (list, tuple)):
        for raster in xs_grid:
            if isinstance(raster, ConcentrationGrid) and not raster.same_geometry(grid):
                raise ConfigurationError("covariate raster geometry differs from model grid")
        xs_grid = np.stack(
            [r.values if isinstance(r, ConcentrationGrid) else np.asarray(r, float) for r in xs_grid],
            axis=-1,
        )
    xs_grid = np.asarray(xs_grid, dtype=float)
    if xs_grid.shape[:2] != grid.values.shape or xs_grid.shape[-1] != p.k:
        raise ConfigurationError(
            f"covariate array shape {xs_grid.shape} does not match grid "
            f"{grid.values.shape} with k={p.k}"
        )
    valid = ~grid.nodata_mask
    l0 = eval_l0(p, xt)
    lc = eval_lc(p, xs_grid, xt)
    denom = 1.0 + lc
    bad = valid & ~(np.abs(denom) > guard)
    if np.any(bad):
        r, c = map(int, np.argwhere(bad)[0])
        x, y = grid.cell_centers()
        raise SingularCorrectionError(
            f"|1 + Lc| = {abs(denom[r, c]):.3g} <= {guard} at row {r}, col {c} "
            f"(x={x[r, c]:.1f}, y={y[r, c]:.1f}), timestamp {grid.timestamp}",
            location=(grid.timestamp, r, c),
        )
    out = np.array(grid.values, dtype=float, copy=True)
    raw = (grid.values[valid] - l0) / denom[valid]
    negative = raw < 0
    raw[negative] = 0.0
    out[valid] = raw
    return grid.with_values(out, n_clamped=int(np.count_nonzero(negative)))
