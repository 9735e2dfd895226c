"""Adaptive random-walk Metropolis-within-Gibbs over the joint bias/calibration model."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..core import DEFAULT_GUARD
from ..errors import ConfigurationError, FormatError, SamplerError
from ..measurement import SENSOR, Rows
from . import _kernel as K
from .layout import ParameterLayout
from .priors import PriorSpec, prior_means

log = logging.getLogger(__name__)

FORMS = {("measurement", "signal"): 0, ("measurement", "literal"): 0,
         ("output", "signal"): 1, ("output", "literal"): 2}
_FAMILY_CODE = {"normal": 0, "gamma": 1, "weibull": 2}
_BLOCK = 500
_ROUNDS = (0.25, 0.5, 0.75)


@dataclass(frozen=True)
class SamplerConfig:
    n_adapt: int = 8000
    n_burn: int = 2000
    n_keep: int = 2500
    n_chains: int = 3
    seed: int = 0
    target_accept: float = 0.30
    guard: float = DEFAULT_GUARD
    form: str = "measurement"
    noise: str = "signal"
    init_jitter: float = 1.0
    learn_directions: bool = True

    def __post_init__(self):
        for name in ("n_adapt", "n_burn", "n_keep", "n_chains"):
            v = getattr(self, name)
            if not (isinstance(v, (int, np.integer)) and v > 0):
                raise ConfigurationError(f"{name} must be a positive integer, got {v!r}")
        if not 0 < self.target_accept < 1:
            raise ConfigurationError("target_accept must lie in (0, 1)")
        if (self.form, self.noise) not in FORMS:
            raise ConfigurationError(f"unknown likelihood form/noise {self.form!r}/{self.noise!r}")
        if not self.guard > 0:
            raise ConfigurationError("guard must be > 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class ChainResult:
    """Retained draws ``(n_chains, n_keep, p)`` in natural parameter space."""

    names: list
    draws: np.ndarray
    log_target: np.ndarray
    accept_rate: np.ndarray
    adapt_accept_rate: np.ndarray
    proposal_scale: np.ndarray
    free: np.ndarray
    layout: ParameterLayout | None = None
    config: SamplerConfig | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_chains(self):
        return self.draws.shape[0]

    @property
    def n_keep(self):
        return self.draws.shape[1]

    def pooled(self):
        return self.draws.reshape(-1, self.draws.shape[2])

    def mean(self):
        return self.pooled().mean(axis=0)

    def sd(self):
        flat = self.pooled()
        if flat.shape[0] < 2:
            return np.zeros(flat.shape[1])
        return flat.std(axis=0, ddof=1)

    def mode(self):
        from .summary import binned_mode

        flat = self.pooled()
        return np.array([binned_mode(flat[:, i]) for i in range(flat.shape[1])])

    def column(self, name):
        return self.draws[:, :, self.names.index(name)]

    def to_csv(self, path):
        """One row per retained draw, columns ``chain, draw, log_target, <names>``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["chain", "draw", "log_target", *self.names])
            for c in range(self.n_chains):
                for t in range(self.n_keep):
                    w.writerow([c, t, repr(float(self.log_target[c, t])),
                                *(repr(float(v)) for v in self.draws[c, t])])

    @classmethod
    def from_csv(cls, path, layout=None):
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r, None)
            if not header or header[:3] != ["chain", "draw", "log_target"]:
                raise FormatError(f"{path}: not a draws file")
            rows = [list(map(float, row)) for row in r]
        names = header[3:]
        if not rows:
            raise FormatError(f"{path}: no draws")
        arr = np.array(rows)
        chains = arr[:, 0].astype(int)
        n_chains = chains.max() + 1
        n_keep = arr.shape[0] // n_chains
        if n_chains * n_keep != arr.shape[0]:
            raise FormatError(f"{path}: ragged chains")
        arr = arr[np.lexsort((arr[:, 1], chains))]
        draws = arr[:, 3:].reshape(n_chains, n_keep, len(names))
        lt = arr[:, 2].reshape(n_chains, n_keep)
        nan = np.full((n_chains, len(names)), np.nan)
        return cls(names, draws, lt, nan, nan.copy(), nan.copy(), np.ones(len(names), bool), layout)


@dataclass
class _Problem:
    """Flat arrays consumed by the kernel."""

    layout: ParameterLayout
    m: np.ndarray
    z: np.ndarray
    Yc: np.ndarray
    XS: np.ndarray
    XT: np.ndarray
    starts: np.ndarray
    dev_sensor: np.ndarray
    sensor_dev: np.ndarray
    xs_sens: np.ndarray
    xt_bar: np.ndarray
    ybar: np.ndarray
    kind: np.ndarray
    fam: np.ndarray
    pa: np.ndarray
    pb: np.ndarray
    sign: np.ndarray
    form: int
    guard: float

    def offsets(self):
        L = self.layout
        return (L.AC, L.ZS, L.ZT, L.TH, L.S0, L.A0)

    def data_args(self):
        return (self.kind, self.fam, self.pa, self.pb, self.sign,
                self.m, self.z, self.Yc, self.XS, self.XT, self.starts, self.dev_sensor,
                self.sensor_dev, self.xs_sens, self.xt_bar, self.ybar,
                self.layout.n_bias, self.layout.q, self.form, self.guard, *self.offsets())

    def evaluate(self, phi):
        P = phi.size
        theta, lpj = np.zeros(P), np.zeros(P)
        D = self.starts.size - 1
        S2, SLD, ll = np.zeros(D), np.zeros(D), np.zeros(D)
        total = K.evaluate_all(phi, theta, lpj, S2, SLD, ll, *self.data_args())
        return total, theta, lpj, S2, SLD, ll

    def kbar(self, theta, j):
        L = self.layout
        return (1.0 + theta[L.AC] + theta[L.ZS:L.ZS + L.k] @ self.xs_sens[j]
                + theta[L.ZT:L.ZT + L.l] @ self.xt_bar[j])

    def cbar(self, theta, j):
        L = self.layout
        d = self.sensor_dev[j]
        s = slice(self.starts[d], self.starts[d + 1])
        dd = 1.0 + theta[L.AC] + self.XS[s] @ theta[L.ZS:L.ZS + L.k] + self.XT[s] @ theta[L.ZT:L.ZT + L.l]
        l0 = theta[L.A0] + self.XT[s] @ theta[L.TH:L.TH + L.l]
        return float(np.mean((self.m[s] - l0) / dd))

    def to_coords(self, theta):
        """Inverse of the kernel's coordinate map."""
        L = self.layout
        theta = np.asarray(theta, dtype=float)
        phi = theta.copy()
        for i in range(L.size):
            kd = self.kind[i]
            if kd == K.SIGNED_LOG:
                if not theta[i] * self.sign[i] > 0:
                    raise SamplerError(f"initial value of {L.names[i]} = {theta[i]} violates its sign constraint")
                phi[i] = math.log(abs(theta[i]))
        for j in range(len(L.sensor_ids)):
            o = L.sensor_offset(j)
            kb = abs(self.kbar(theta, j))
            if kb == 0:
                raise SamplerError(f"mean of 1 + Lc is zero for sensor {L.sensor_ids[j]}")
            if self.kind[o + 1] == K.SLOPE:
                if not theta[o + 1] * self.sign[o + 1] > 0:
                    raise SamplerError(f"initial slope of {L.sensor_ids[j]} violates its sign constraint")
                phi[o + 1] = math.log(abs(theta[o + 1]) / kb)
            elif self.kind[o + 1] == K.FREE_SLOPE:
                phi[o + 1] = theta[o + 1] / kb
            if self.kind[o] == K.OFFSET:
                phi[o] = theta[o] + theta[o + 1] * self.cbar(theta, j) + theta[o + 2:o + 2 + L.q] @ self.ybar[j]
        return phi


def _prepare(rows: Rows, priors, layout: ParameterLayout, cfg: SamplerConfig, fixed=()):
    if len(rows) == 0:
        raise ConfigurationError("no regression rows")
    if not rows.station_ids:
        raise ConfigurationError("at least one reference station is needed to anchor the concentration scale")
    if tuple(layout.sensor_ids) != tuple(sorted(rows.sensor_ids)):
        raise ConfigurationError("layout sensors do not match the rows")
    plist = priors.for_layout(layout) if isinstance(priors, PriorSpec) else list(priors)
    if len(plist) != layout.size:
        raise ConfigurationError(f"{len(plist)} priors for {layout.size} parameters")
    P = layout.size
    fam = np.array([_FAMILY_CODE[p.family] for p in plist], dtype=np.int64)
    pa = np.array([p.a for p in plist], dtype=float)
    pb = np.array([p.b for p in plist], dtype=float)
    sign = np.array([p.sign for p in plist], dtype=np.int64)
    kind = np.where(sign != 0, K.SIGNED_LOG, K.IDENTITY).astype(np.int64)
    for j in range(len(layout.sensor_ids)):
        o = layout.sensor_offset(j)
        kind[o] = K.OFFSET
        kind[o + 1] = K.SLOPE if sign[o + 1] != 0 else K.FREE_SLOPE
    fixed_idx = [layout.index(n) if isinstance(n, str) else int(n) for n in fixed]
    kind[fixed_idx] = K.FIXED
    free = np.ones(P, dtype=bool)
    free[fixed_idx] = False

    sensor_pos = {sid: j for j, sid in enumerate(layout.sensor_ids)}
    D = len(rows.devices)
    starts = np.zeros(D + 1, dtype=np.int64)
    dev_sensor = np.full(D, -1, dtype=np.int64)
    J = len(layout.sensor_ids)
    sensor_dev = np.zeros(J, dtype=np.int64)
    xs_sens = np.zeros((J, layout.k))
    xt_bar = np.zeros((J, layout.l))
    ybar = np.zeros((J, layout.q))
    Yc = np.zeros_like(rows.y)
    seen = 0
    for d, sl in rows.device_slices():
        if d != seen:
            raise ConfigurationError("rows are not grouped by device")
        starts[d], starts[d + 1] = sl.start, sl.stop
        seen += 1
        if rows.kinds[d] == SENSOR:
            j = sensor_pos[rows.devices[d]]
            dev_sensor[d] = j
            sensor_dev[j] = d
            xs_sens[j] = rows.xs[sl.start]
            xt_bar[j] = rows.xt[sl].mean(axis=0)
            ybar[j] = rows.y[sl].mean(axis=0)
            Yc[sl] = rows.y[sl] - ybar[j]
    if seen != D:
        raise ConfigurationError("some devices have no rows")
    prob = _Problem(
        layout, np.ascontiguousarray(rows.m, float), np.ascontiguousarray(rows.z, float),
        np.ascontiguousarray(Yc), np.ascontiguousarray(rows.xs, float),
        np.ascontiguousarray(rows.xt, float), starts, dev_sensor, sensor_dev, xs_sens, xt_bar,
        ybar, kind, fam, pa, pb, sign, FORMS[(cfg.form, cfg.noise)], float(cfg.guard),
    )
    return prob, plist, free


def _initial_scales(prob, plist, phi0):
    scales = np.empty(phi0.size)
    for i, p in enumerate(plist):
        kd = prob.kind[i]
        if kd in (K.SIGNED_LOG, K.SLOPE):
            scales[i] = 0.1
        elif kd == K.FREE_SLOPE:
            scales[i] = 0.1 * max(abs(phi0[i]), 1e-3)
        else:
            scales[i] = 0.1 * math.sqrt(p.var)
    return np.log(scales)


def _blocks(layout):
    """Bias block followed by one block per sensor."""
    out = [(0, layout.n_bias)]
    for j in range(len(layout.sensor_ids)):
        o = layout.sensor_offset(j)
        out.append((o, o + layout.sensor_block))
    return out


def _learn_directions(window, blocks, free, dirs, logscale):
    """Replace each block's update directions by the principal axes of recent draws.

    Directions are scaled to one posterior sd so a unit step has the same
    meaning along every axis; proposal scales restart near the 1-D optimum.
    """
    for lo, hi in blocks:
        idx = lo + np.flatnonzero(free[lo:hi])
        if idx.size < 2 or window.shape[0] < 4 * idx.size:
            continue
        cov = np.cov(window[:, idx], rowvar=False)
        vals, vecs = np.linalg.eigh(cov)
        if not np.all(np.isfinite(vals)) or vals.max() <= 0:
            continue
        vals = np.maximum(vals, 1e-12 * vals.max())
        dirs[idx, :] = 0.0
        for a, i in enumerate(idx):
            dirs[i, idx] = vecs[:, a] * np.sqrt(vals[a])
        logscale[idx] = np.log(2.0)


def log_target(rows, priors, theta, layout=None, form="measurement", noise="signal", guard=DEFAULT_GUARD):
    """Log target in sampler coordinates (prior, likelihood and Jacobian) at natural ``theta``."""
    layout = layout or ParameterLayout.from_rows(rows)
    cfg = SamplerConfig(form=form, noise=noise, guard=guard)
    prob, _, _ = _prepare(rows, priors, layout, cfg)
    total, th, lpj, S2, SLD, ll = prob.evaluate(prob.to_coords(theta))
    return total, th, lpj, ll


def gibbs_fit(rows: Rows, priors, cfg: SamplerConfig | None = None, init=None, *,
              layout: ParameterLayout | None = None, fixed=(), progress=None) -> ChainResult:
    """Sample the joint posterior of bias and calibration parameters.

    Parameters
    ----------
    rows : Rows
        Station and sensor regression rows; at least one station.
    priors : PriorSpec or list of Prior
        One prior per entry of ``layout.names``.
    cfg : SamplerConfig
    init : array_like, optional
        Natural parameter vector; prior means by default.
    fixed : sequence of str or int
        Parameters held at their ``init`` value.

    Returns
    -------
    ChainResult
    """
    cfg = cfg or SamplerConfig()
    layout = layout or ParameterLayout.from_rows(rows)
    prob, plist, free = _prepare(rows, priors, layout, cfg, fixed)
    P = layout.size
    theta0 = prior_means(plist) if init is None else np.asarray(init, dtype=float).copy()
    if theta0.shape != (P,):
        raise ConfigurationError(f"init has shape {theta0.shape}, expected ({P},)")
    phi0 = prob.to_coords(theta0)
    total0 = prob.evaluate(phi0)[0]
    if not np.isfinite(total0):
        raise SamplerError("log posterior is -inf at the initial values (check 1 + Lc and sign constraints)")
    logscale0 = _initial_scales(prob, plist, phi0)

    draws = np.empty((cfg.n_chains, cfg.n_keep, P))
    logpost = np.empty((cfg.n_chains, cfg.n_keep))
    acc_keep = np.zeros((cfg.n_chains, P))
    acc_adapt = np.zeros((cfg.n_chains, P))
    scales = np.zeros((cfg.n_chains, P))
    blocks = _blocks(layout)
    blk_lo = np.empty(P, dtype=np.int64)
    blk_hi = np.empty(P, dtype=np.int64)
    for lo, hi in blocks:
        blk_lo[lo:hi], blk_hi[lo:hi] = lo, hi
    rounds = sorted({int(cfg.n_adapt * r) for r in _ROUNDS} - {0}) if cfg.learn_directions else []
    args = prob.data_args()
    no_phis = np.empty((0, P))
    for c in range(cfg.n_chains):
        rng = np.random.default_rng([cfg.seed, c])
        phi = phi0.copy()
        if cfg.init_jitter > 0:
            for _ in range(30):
                trial = phi0 + np.where(free, cfg.init_jitter * np.exp(logscale0) * rng.standard_normal(P), 0.0)
                if np.isfinite(prob.evaluate(trial)[0]):
                    phi = trial
                    break
        total, theta, lpj, S2, SLD, ll = prob.evaluate(phi)
        logscale = logscale0.copy()
        dirs = np.eye(P)
        phis = np.empty((cfg.n_adapt, P))
        n_acc = np.zeros(P, dtype=np.int64)
        it0 = 0
        burn_acc = np.zeros(P, dtype=np.int64)
        for phase, n_phase in (("adapt", cfg.n_adapt), ("burn", cfg.n_burn), ("keep", cfg.n_keep)):
            n_acc[:] = 0
            done = 0
            stops = [r for r in rounds if phase == "adapt"] + [n_phase]
            last_round = 0
            while done < n_phase:
                nb = min(_BLOCK, n_phase - done, next(r for r in stops if r > done) - done)
                normals = rng.standard_normal((nb, P))
                logu = np.log(rng.random((nb, P)))
                record = phase == "keep"
                out = draws[c, done:done + nb] if record else no_phis
                lp_out = logpost[c, done:done + nb] if record else np.empty(0)
                ph_out = phis[done:done + nb] if phase == "adapt" else no_phis
                K.run_sweeps(nb, it0, phase == "adapt", record, cfg.target_accept, free,
                             phi, theta, lpj, S2, SLD, ll, logscale, n_acc,
                             normals, logu, out, lp_out, dirs, blk_lo, blk_hi, ph_out, *args)
                done += nb
                if phase == "adapt":
                    it0 += nb
                    if done in rounds:
                        _learn_directions(phis[last_round:done], blocks, free, dirs, logscale)
                        last_round = done
                if progress:
                    progress(c, phase, done, n_phase)
            if phase == "adapt":
                acc_adapt[c] = n_acc / n_phase
            elif phase == "burn":
                burn_acc = n_acc.copy()
            else:
                acc_keep[c] = n_acc / n_phase
                stuck = free & (burn_acc + n_acc == 0)
                if stuck.any():
                    names = [layout.names[i] for i in np.flatnonzero(stuck)]
                    raise SamplerError(f"chain {c}: no accepted proposals after adaptation for {names}")
        scales[c] = np.exp(logscale)
        log.debug("chain %d done, mean acceptance %.3f", c, acc_keep[c][free].mean())
    return ChainResult(list(layout.names), draws, logpost, acc_keep, acc_adapt, scales, free,
                       layout, cfg)
