"""Feasible GLS for station-only data.

Station rows follow ``M = L0 + Z (1 + Lc) + e`` with ``var(e) = (1 + Lc)^2 sigma0^2``,
which is linear in ``[1, x_T, Z, Z x_S, Z x_T]``. Weights ``1 / (1 + Lc)^2`` are
re-estimated from the current coefficients until they settle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import DEFAULT_GUARD, SPATIAL_NAMES, TEMPORAL_NAMES, BiasParameters
from ..errors import ConfigurationError, IdentifiabilityError, SingularCorrectionError
from ..measurement import Rows


@dataclass
class GLSResult:
    params: BiasParameters
    coef: np.ndarray
    cov: np.ndarray
    columns: list
    coef_history: list = field(default_factory=list)
    weights_history: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False

    @property
    def stderr(self):
        return np.sqrt(np.diag(self.cov))


def design_matrix(z, xs, xt):
    """Columns ``[1, x_T, Z, Z x_S, Z x_T]``."""
    z = np.asarray(z, dtype=float)[:, None]
    return np.hstack([np.ones_like(z), xt, z, z * xs, z * xt])


def column_names(spatial_names=SPATIAL_NAMES, temporal_names=TEMPORAL_NAMES):
    return (["a0"] + [f"theta_T[{n}]" for n in temporal_names] + ["1+ac"]
            + [f"zeta_S[{n}]" for n in spatial_names] + [f"zeta_T[{n}]" for n in temporal_names])


def check_rank(X, columns, rank_tol=1e-7):
    """Raise IdentifiabilityError when the column-normalised design is (near) rank deficient."""
    norms = np.linalg.norm(X, axis=0)
    zero = norms == 0
    if zero.any():
        raise IdentifiabilityError(
            f"design columns are identically zero: {[c for c, z in zip(columns, zero) if z]}",
            columns=[c for c, z in zip(columns, zero) if z],
        )
    if X.shape[0] < X.shape[1]:
        raise IdentifiabilityError(f"{X.shape[0]} rows cannot identify {X.shape[1]} coefficients",
                                   columns=list(columns))
    _, s, vt = np.linalg.svd(X / norms, full_matrices=False)
    if s[-1] <= rank_tol * s[0]:
        null = np.abs(vt[-1])
        involved = [c for c, v in zip(columns, null) if v > 0.1 * null.max()]
        raise IdentifiabilityError(
            f"coefficients are not identifiable from these rows; collinear columns: {involved} "
            f"(relative singular value {s[-1] / s[0]:.2e})",
            columns=involved,
        )


def _wls(X, y, w):
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    return coef


def gls_fit(rows: Rows, *, max_iter=50, tol=1e-8, guard=DEFAULT_GUARD, rank_tol=1e-7,
            spatial_names=None, temporal_names=None) -> GLSResult:
    """Iterated weighted least squares on station rows.

    Parameters
    ----------
    rows : Rows
        Station rows only.
    max_iter : int
        Cap on reweighting iterations.
    tol : float
        Stop when ``|b_new - b| / |b| < tol``.

    Returns
    -------
    GLSResult
        ``coef_history[0]`` is the unit-weight (OLS) solution.
    """
    if len(rows) == 0:
        raise ConfigurationError("no station rows")
    if rows.sensor_ids:
        raise ConfigurationError("gls_fit uses station rows only; drop sensor rows first")
    k, l = rows.xs.shape[1], rows.xt.shape[1]
    spatial_names = spatial_names or (SPATIAL_NAMES if k == 3 else [f"xs{i + 1}" for i in range(k)])
    temporal_names = temporal_names or (TEMPORAL_NAMES if l == 2 else [f"xt{i + 1}" for i in range(l)])
    columns = column_names(spatial_names, temporal_names)
    X = design_matrix(rows.z, rows.xs, rows.xt)
    y = rows.m
    n, p = X.shape
    check_rank(X, columns, rank_tol)
    if n <= p:
        raise IdentifiabilityError(f"{n} rows leave no residual degrees of freedom for {p} coefficients",
                                   columns=columns)

    w = np.ones(n)
    coef = _wls(X, y, w)
    history, weights = [coef.copy()], [w.copy()]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        d = _one_plus_lc(coef, rows.xs, rows.xt, k, l)
        bad = np.flatnonzero(~(np.abs(d) > guard))
        if bad.size:
            i = int(bad[0])
            raise SingularCorrectionError(
                f"|1 + Lc| <= {guard} at row {i} during reweighting", location=i
            )
        w = 1.0 / d ** 2
        check_rank(X * np.sqrt(w)[:, None], columns, rank_tol)
        new = _wls(X, y, w)
        history.append(new.copy())
        weights.append(w.copy())
        change = np.linalg.norm(new - coef) / max(np.linalg.norm(coef), np.finfo(float).tiny)
        coef = new
        if change < tol:
            converged = True
            break

    d = _one_plus_lc(coef, rows.xs, rows.xt, k, l)
    w = 1.0 / d ** 2
    resid = y - X @ coef
    sigma0 = float(np.sqrt(np.sum(w * resid ** 2) / (n - p)))
    xtwx = (X * w[:, None]).T @ X
    cov = sigma0 ** 2 * np.linalg.inv(xtwx)
    params = BiasParameters(
        coef[0], coef[1 + l] - 1.0, coef[1:1 + l], coef[2 + l:2 + l + k], coef[2 + l + k:], sigma0
    )
    return GLSResult(params, coef, cov, columns, history, weights, it, converged)


def _one_plus_lc(coef, xs, xt, k, l):
    zc = coef[1 + l]
    return zc + xs @ coef[2 + l:2 + l + k] + xt @ coef[2 + l + k:]
