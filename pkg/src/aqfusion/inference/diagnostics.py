"""Convergence diagnostics: split R-hat and autocovariance-based ESS."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

RHAT_FLAG = 1.05


def _as_chains(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] < 4:
        raise ValueError("expected (chains, draws) with at least 4 draws per chain")
    return x


def split_rhat(x):
    """Potential scale reduction over chains split in halves.

    Constant draws give exactly 1.
    """
    x = _as_chains(x)
    half = x.shape[1] // 2
    parts = np.concatenate([x[:, :half], x[:, x.shape[1] - half:]], axis=0)
    n = parts.shape[1]
    means = parts.mean(axis=1)
    W = parts.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else float("inf")
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def _autocov(x):
    n = x.size
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    ac = np.fft.irfft(f * np.conj(f), size)[:n]
    return ac / n


def ess(x):
    """Effective sample size with Geyer's initial monotone sequence."""
    x = _as_chains(x)
    m, n = x.shape
    acov = np.array([_autocov(c) for c in x])
    W = acov[:, 0].mean() * n / (n - 1)
    if W == 0:
        return float(m * n)
    means = x.mean(axis=1)
    var_plus = W * (n - 1) / n
    if m > 1:
        var_plus += means.var(ddof=1)
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    tau = -1.0
    prev = np.inf
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        pair = min(pair, prev)
        tau += 2.0 * pair
        prev = pair
        t += 2
    # same upper cap as common implementations: ESS <= mn log10(mn)
    return float(m * n / max(tau, 1.0 / np.log10(max(m * n, 10))))


@dataclass
class Diagnostics:
    names: list
    rhat: np.ndarray
    ess: np.ndarray
    accept_rate: np.ndarray
    mean: np.ndarray
    sd: np.ndarray

    @property
    def mcse(self):
        return self.sd / np.sqrt(self.ess)

    @property
    def flagged(self):
        return [n for n, r in zip(self.names, self.rhat) if r > RHAT_FLAG]

    def table(self):
        lines = [f"{'parameter':<24} {'mean':>12} {'sd':>10} {'rhat':>7} {'ess':>8} {'accept':>7}"]
        for i, n in enumerate(self.names):
            flag = " *" if self.rhat[i] > RHAT_FLAG else ""
            lines.append(f"{n:<24} {self.mean[i]:>12.4g} {self.sd[i]:>10.3g} {self.rhat[i]:>7.3f} "
                         f"{self.ess[i]:>8.0f} {self.accept_rate[i]:>7.3f}{flag}")
        return "\n".join(lines)

    def rows(self):
        return [{"parameter": n, "mean": float(self.mean[i]), "sd": float(self.sd[i]),
                 "rhat": float(self.rhat[i]), "ess": float(self.ess[i]),
                 "accept_rate": float(self.accept_rate[i]), "flag": bool(self.rhat[i] > RHAT_FLAG)}
                for i, n in enumerate(self.names)]


def diagnostics(chains) -> Diagnostics:
    """Per-parameter R-hat, ESS and acceptance for a ChainResult."""
    if chains.n_chains < 2:
        warnings.warn("single chain: R-hat uses the two halves of that chain only", stacklevel=2)
    P = chains.draws.shape[2]
    rhat = np.array([split_rhat(chains.draws[:, :, i]) for i in range(P)])
    es = np.array([ess(chains.draws[:, :, i]) for i in range(P)])
    acc = np.nanmean(chains.accept_rate, axis=0) if np.isfinite(chains.accept_rate).any() \
        else np.full(P, np.nan)
    return Diagnostics(list(chains.names), rhat, es, acc, chains.mean(), chains.sd())
