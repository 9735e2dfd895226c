"""Jitted log-target and coordinate-wise Metropolis sweeps.

Coordinates ``phi`` map to natural parameters ``theta`` as follows (``kind``):

0  identity
1  signed log-magnitude, ``theta = sign * exp(phi)``
2  sensor slope, ``alpha = sign * exp(phi) * |K|`` where ``K`` is the mean of
   ``1 + Lc`` over the sensor's rows
3  unconstrained sensor slope, ``alpha = phi * |K|``
4  sensor offset, ``beta = phi - alpha * cbar - gamma . ybar`` where ``cbar`` is
   the mean implied concentration over the sensor's rows
5  held fixed, ``theta = phi``

The slope and offset maps follow the main posterior ridges (alpha against the
bias scale, beta against alpha and gamma), which keeps scalar random-walk
updates efficient. The log-target includes the Jacobian of the map.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

LOG_2PI = math.log(2.0 * math.pi)
NEG_INF = -np.inf

IDENTITY, SIGNED_LOG, SLOPE, FREE_SLOPE, OFFSET, FIXED = 0, 1, 2, 3, 4, 5


@njit(cache=True)
def logprior1(fam, a, b, sign, x):
    if sign < 0:
        if not x < 0.0:
            return NEG_INF
        v = -x
    elif sign > 0:
        if not x > 0.0:
            return NEG_INF
        v = x
    else:
        v = x
    if fam == 0:
        u = (v - a) / b
        return -0.5 * u * u - math.log(b) - 0.5 * LOG_2PI
    if fam == 1:
        return (a - 1.0) * math.log(v) - v / b - math.lgamma(a) - a * math.log(b)
    r = v / b
    return math.log(a / b) + (a - 1.0) * math.log(r) - r ** a


@njit(cache=True)
def _kbar(theta, j, xs_sens, xt_bar, AC, ZS, ZT):
    out = 1.0 + theta[AC]
    for i in range(xs_sens.shape[1]):
        out += theta[ZS + i] * xs_sens[j, i]
    for i in range(xt_bar.shape[1]):
        out += theta[ZT + i] * xt_bar[j, i]
    return out


@njit(cache=True)
def _coord_natural(i, phi, kind, sign):
    kd = kind[i]
    if kd == SIGNED_LOG:
        return sign[i] * math.exp(phi[i])
    return phi[i]


@njit(cache=True)
def _sensor_naturals(j, phi, theta, lpj, kind, fam, pa, pb, sign,
                     xs_sens, xt_bar, nb, q, AC, ZS, ZT):
    """Slope, cross-sensitivities and noise of sensor j; offset is set later."""
    o = nb + j * (q + 3)
    kb = _kbar(theta, j, xs_sens, xt_bar, AC, ZS, ZT)
    akb = abs(kb)
    ia = o + 1
    if kind[ia] == SLOPE:
        if akb == 0.0:
            return False
        theta[ia] = sign[ia] * math.exp(phi[ia]) * akb
        jac = math.log(abs(theta[ia]))
    elif kind[ia] == FREE_SLOPE:
        if akb == 0.0:
            return False
        theta[ia] = phi[ia] * akb
        jac = math.log(akb)
    else:
        theta[ia] = phi[ia]
        jac = 0.0
    lpj[ia] = logprior1(fam[ia], pa[ia], pb[ia], sign[ia], theta[ia]) + jac
    for c in range(q + 1):
        i = o + 2 + c
        theta[i] = _coord_natural(i, phi, kind, sign)
        lp = logprior1(fam[i], pa[i], pb[i], sign[i], theta[i])
        if kind[i] == SIGNED_LOG:
            lp += phi[i]
        lpj[i] = lp
    return True


@njit(cache=True)
def _device_eval(d, phi, theta, lpj, S2, SLD, ll, kind, fam, pa, pb, sign,
                 m, z, Yc, XS, XT, starts, dev_sensor, ybar,
                 nb, q, form, guard, AC, ZS, ZT, TH, S0, A0):
    s, e = starts[d], starts[d + 1]
    n = e - s
    k = XS.shape[1]
    l = XT.shape[1]
    j = dev_sensor[d]
    sum_c = 0.0
    slogd = 0.0
    for t in range(s, e):
        dd = 1.0 + theta[AC]
        l0 = theta[A0]
        for i in range(k):
            dd += theta[ZS + i] * XS[t, i]
        for i in range(l):
            dd += theta[ZT + i] * XT[t, i]
            l0 += theta[TH + i] * XT[t, i]
        if not abs(dd) > guard:
            return False
        sum_c += (m[t] - l0) / dd
        slogd += math.log(abs(dd))
    s2 = 0.0
    if j < 0:
        alpha = 1.0
        sigma = theta[S0]
        for t in range(s, e):
            dd = 1.0 + theta[AC]
            l0 = theta[A0]
            for i in range(k):
                dd += theta[ZS + i] * XS[t, i]
            for i in range(l):
                dd += theta[ZT + i] * XT[t, i]
                l0 += theta[TH + i] * XT[t, i]
            r = z[t] - (m[t] - l0) / dd
            s2 += r * r
    else:
        o = nb + j * (q + 3)
        alpha = theta[o + 1]
        sigma = theta[o + 2 + q]
        cbar = sum_c / n
        ib = o
        if kind[ib] == OFFSET:
            bt = phi[ib]
            beta = bt - alpha * cbar
            for c in range(q):
                beta -= theta[o + 2 + c] * ybar[j, c]
        else:
            beta = phi[ib]
            # equivalent centred offset
            bt = beta + alpha * cbar
            for c in range(q):
                bt += theta[o + 2 + c] * ybar[j, c]
        theta[ib] = beta
        lpj[ib] = logprior1(fam[ib], pa[ib], pb[ib], sign[ib], beta)
        for t in range(s, e):
            dd = 1.0 + theta[AC]
            l0 = theta[A0]
            for i in range(k):
                dd += theta[ZS + i] * XS[t, i]
            for i in range(l):
                dd += theta[ZT + i] * XT[t, i]
                l0 += theta[TH + i] * XT[t, i]
            r = z[t] - bt - alpha * ((m[t] - l0) / dd - cbar)
            for c in range(q):
                r -= theta[o + 2 + c] * Yc[t, c]
            s2 += r * r
    S2[d] = s2
    SLD[d] = slogd
    ll[d] = _device_ll(s2, slogd, n, alpha, sigma, form)
    return True


@njit(cache=True)
def _device_ll(s2, slogd, n, alpha, sigma, form):
    if not sigma > 0.0:
        return NEG_INF
    if form == 2:
        return (-s2 / (2.0 * alpha * alpha * sigma * sigma) - n * math.log(sigma)
                - slogd - 0.5 * n * LOG_2PI)
    out = -s2 / (2.0 * sigma * sigma) - n * math.log(sigma) - 0.5 * n * LOG_2PI
    if form == 1:
        out += n * math.log(abs(alpha)) - slogd
    return out


@njit(cache=True)
def evaluate_all(phi, theta, lpj, S2, SLD, ll, kind, fam, pa, pb, sign,
                 m, z, Yc, XS, XT, starts, dev_sensor, sensor_dev, xs_sens, xt_bar, ybar,
                 nb, q, form, guard, AC, ZS, ZT, TH, S0, A0):
    """Fill every cache from ``phi``; returns the log-target (-inf if infeasible)."""
    for i in range(nb):
        theta[i] = _coord_natural(i, phi, kind, sign)
        lp = logprior1(fam[i], pa[i], pb[i], sign[i], theta[i])
        if kind[i] == SIGNED_LOG:
            lp += phi[i]
        lpj[i] = lp
    J = sensor_dev.shape[0]
    for j in range(J):
        if not _sensor_naturals(j, phi, theta, lpj, kind, fam, pa, pb, sign,
                                xs_sens, xt_bar, nb, q, AC, ZS, ZT):
            return NEG_INF
    for d in range(starts.shape[0] - 1):
        if not _device_eval(d, phi, theta, lpj, S2, SLD, ll, kind, fam, pa, pb, sign,
                            m, z, Yc, XS, XT, starts, dev_sensor, ybar,
                            nb, q, form, guard, AC, ZS, ZT, TH, S0, A0):
            return NEG_INF
    total = 0.0
    for i in range(lpj.shape[0]):
        total += lpj[i]
    for d in range(ll.shape[0]):
        total += ll[d]
    if math.isnan(total):
        return NEG_INF
    return total


@njit(cache=True)
def run_sweeps(n_iter, it0, adapt, record, target, free,
               phi, theta, lpj, S2, SLD, ll, logscale, n_acc,
               normals, logu, draws, logpost, dirs, blk_lo, blk_hi, phis,
               kind, fam, pa, pb, sign,
               m, z, Yc, XS, XT, starts, dev_sensor, sensor_dev, xs_sens, xt_bar, ybar,
               nb, q, form, guard, AC, ZS, ZT, TH, S0, A0):
    """``n_iter`` sweeps of scalar random-walk updates.

    Update ``i`` moves ``phi`` along ``dirs[i]``, which is non-zero only on
    ``blk_lo[i]:blk_hi[i]`` (the identity gives plain coordinate updates).
    Adapts proposal scales (Robbins-Monro, rate ``(it + 1) ** -0.6``) when
    ``adapt``, writes natural draws when ``record`` and coordinates into
    ``phis`` when it has rows.
    """
    P = phi.shape[0]
    D = ll.shape[0]
    phi_n = phi.copy()
    theta_n = theta.copy()
    lpj_n = lpj.copy()
    S2_n = S2.copy()
    SLD_n = SLD.copy()
    ll_n = ll.copy()
    cur = 0.0
    for i in range(P):
        cur += lpj[i]
    for d in range(D):
        cur += ll[d]
    for it in range(n_iter):
        eta = (it0 + it + 1.0) ** -0.6
        for i in range(P):
            if not free[i]:
                continue
            step = math.exp(logscale[i]) * normals[it, i]
            phi_n[:] = phi
            theta_n[:] = theta
            lpj_n[:] = lpj
            S2_n[:] = S2
            SLD_n[:] = SLD
            ll_n[:] = ll
            for r in range(blk_lo[i], blk_hi[i]):
                phi_n[r] = phi[r] + step * dirs[i, r]
            if i < nb:
                prop = evaluate_all(phi_n, theta_n, lpj_n, S2_n, SLD_n, ll_n, kind, fam, pa, pb,
                                    sign, m, z, Yc, XS, XT, starts, dev_sensor, sensor_dev,
                                    xs_sens, xt_bar, ybar, nb, q, form, guard,
                                    AC, ZS, ZT, TH, S0, A0)
            else:
                j = (i - nb) // (q + 3)
                ok = _sensor_naturals(j, phi_n, theta_n, lpj_n, kind, fam, pa, pb, sign,
                                      xs_sens, xt_bar, nb, q, AC, ZS, ZT)
                if ok:
                    ok = _device_eval(sensor_dev[j], phi_n, theta_n, lpj_n, S2_n, SLD_n, ll_n,
                                      kind, fam, pa, pb, sign, m, z, Yc, XS, XT, starts,
                                      dev_sensor, ybar, nb, q, form, guard,
                                      AC, ZS, ZT, TH, S0, A0)
                if ok:
                    prop = 0.0
                    for r in range(P):
                        prop += lpj_n[r]
                    for d in range(D):
                        prop += ll_n[d]
                    if math.isnan(prop):
                        prop = NEG_INF
                else:
                    prop = NEG_INF
            delta = prop - cur
            acc_prob = 0.0
            if prop > NEG_INF:
                acc_prob = 1.0 if delta >= 0.0 else math.exp(delta)
            if prop > NEG_INF and logu[it, i] < delta:
                phi[:] = phi_n
                theta[:] = theta_n
                lpj[:] = lpj_n
                S2[:] = S2_n
                SLD[:] = SLD_n
                ll[:] = ll_n
                cur = prop
                n_acc[i] += 1
            if adapt:
                logscale[i] += eta * (acc_prob - target)
        if record:
            draws[it, :] = theta
            logpost[it] = cur
        if phis.shape[0] > 0:
            phis[it, :] = phi
    return cur
