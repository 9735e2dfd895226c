"""Acceptance suite: one pass/fail line per criterion, printed in the terminal summary.

Criterion 7 needs the open Rouen campaign. Point ``AQFUSION_ROUEN_CONFIG`` at its
campaign config to run it; otherwise it is reported as not available.
"""

import math
import os
import time

import numpy as np
import pytest
import statsmodels.api as sm

from aqfusion.core import BiasParameters, ConcentrationGrid, correct_grid
from aqfusion.inference import (ChainResult, ParameterLayout, SamplerConfig, collocation_priors,
                                default_priors,
                                design_matrix, diagnostics, gibbs_fit, gls_fit,
                                init_from_collocation, load_priors, posterior_estimate,
                                read_collocation, read_parameters, save_priors, weak_priors,
                                write_parameters)
from aqfusion.io import (assemble, load_config, read_grid, read_table, save_config,
                         traffic_hours_filter, write_grid, write_table)
from aqfusion.measurement import build_rows
from aqfusion.synth import (SynthSpec, generate, regression_rows, simulate_collocation,
                           write_campaign)
from aqfusion.validation import loo_station_cv, scores

from conftest import ACCEPTANCE_LINES


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    return ok


@pytest.fixture(scope="module")
def recovery():
    camp = generate(SynthSpec(seed=0))
    rows = build_rows(camp.observations)
    layout = ParameterLayout.from_rows(rows)
    t0 = time.perf_counter()
    res = gibbs_fit(rows, weak_priors(), SamplerConfig(seed=1), layout=layout)
    elapsed = time.perf_counter() - t0
    return camp, layout, res, elapsed


def test_criterion_1_synthetic_truth_recovery(recovery):
    camp, layout, res, elapsed = recovery
    truth = layout.pack(camp.bias, camp.calibrations)
    assert layout.size == 90 and res.n_chains == 3 and res.n_keep == 2500
    z = np.abs(res.mean() - truth) / res.sd()
    coverage = float(np.mean(z < 3))
    ai = [layout.index(f"alpha[{s}]") for s in layout.sensor_ids]
    alpha_err = np.abs(res.mean()[ai] - truth[ai]) / np.abs(truth[ai])
    diag = diagnostics(res)
    ok = coverage >= 0.95 and alpha_err.max() <= 0.10 and elapsed < 600
    detail = (f"coverage {coverage:.1%} (>=95%), max alpha rel err {alpha_err.max():.1%} (<=10%), "
              f"runtime {elapsed:.0f}s (<600s); alpha errs {np.round(alpha_err, 3).tolist()}; "
              f"max R-hat {diag.rhat.max():.3f}")
    assert report(1, ok, detail), detail


def test_criterion_2_correction_oracle():
    camp = generate(SynthSpec(seed=0))
    p = camp.bias
    stack = camp.spatial_stack()
    xt = camp.observations.xt
    worst = 0.0
    for t in range(camp.hours.size):
        d = 1.0 + p.ac + stack @ p.zeta_S + xt[t] @ p.zeta_T
        ok_cells = np.abs(d) > 1e-3
        got = correct_grid(camp.model_grid(t), stack, xt[t], p).values[ok_cells]
        want = camp.latent[t][ok_cells]
        worst = max(worst, float(np.max(np.abs(got - want) / np.abs(want))))
    exact = worst <= 1e-8

    # sensors are calibrated against a co-located reference before deployment
    table = simulate_collocation(camp)
    priors = collocation_priors(weak_priors(), table)
    cfg = SamplerConfig(seed=0)

    def fitter(rows):
        lay = ParameterLayout.from_rows(rows)
        init = init_from_collocation(table, lay, priors)
        return posterior_estimate(gibbs_fit(rows, priors, cfg, init, layout=lay), "mean", lay)

    obs = camp.observations
    res_s = loo_station_cv(obs, fitter, mode="S")
    res_l = loo_station_cv(obs, fitter, mode="S+LCS")
    raw = res_l.pooled["raw"]["loo"].rmse
    r_s = res_s.pooled["corrected"]["loo"].rmse
    r_l = res_l.pooled["corrected"]["loo"].rmse
    ok = exact and r_l < raw and r_l < r_s
    detail = (f"true-parameter max rel err {worst:.1e} (<=1e-8); pooled LOO RMSE raw {raw:.2f}, "
              f"S {r_s:.2f}, S+LCS {r_l:.2f} (need S+LCS < raw and S+LCS < S)")
    assert report(2, ok, detail), detail


HETERO = BiasParameters(-2.0, -0.6, [-2.5, -0.1], [-0.3, 0.35, 0.01], [0.2, 0.02], 0.05)


def test_criterion_3_estimator_cross_check():
    homo = BiasParameters(-2.0, 0.0, [-2.5, -0.1], [0.0, 0.0, 0.0], [0.0, 0.0], 15.0)
    rows = regression_rows(10_000, homo, seed=0)
    ols = sm.OLS(rows.m, design_matrix(rows.z, rows.xs, rows.xt)).fit().params
    first = gls_fit(rows).coef_history[0]
    ols_err = float(np.max(np.abs(first - ols) / np.abs(ols)))

    rows = regression_rows(10_000, HETERO, seed=0)
    g = gls_fit(rows)
    truth = np.r_[HETERO.a0, HETERO.theta_T, 1.0 + HETERO.ac, HETERO.zeta_S, HETERO.zeta_T]
    rel = float(np.max(np.abs(g.coef - truth) / np.abs(truth)))

    lay = ParameterLayout.from_rows(rows)
    res = gibbs_fit(rows, weak_priors(), SamplerConfig(form="output", seed=0), layout=lay)
    diag = diagnostics(res)
    gv = lay.pack(g.params, {})
    zmc = (res.mean() - gv) / diag.mcse
    worst = lay.names[int(np.argmax(np.abs(zmc)))]
    ok = ols_err <= 1e-8 and rel < 0.02 and np.all(np.abs(zmc) <= 2)
    detail = (f"first GLS step vs OLS max rel diff {ols_err:.1e} (<=1e-8); heteroskedastic n=1e4 max "
              f"rel err {rel:.2%} (<2%); Bayes-GLS gap max {np.abs(zmc).max():.2f} MC SE at {worst} "
              f"(<=2); gaps {np.round(zmc, 2).tolist()}")
    assert report(3, ok, detail), detail


def test_criterion_4_score_arithmetic():
    z = np.array([3.0, 9.0, 4.0])
    perfect = scores(z, z)
    mean = scores(np.full(3, z.mean()), z)
    two = scores([0.0, 0.0], [3.0, -4.0])
    hand = ((perfect.ev, perfect.mae, perfect.rmse) == (100.0, 0.0, 0.0) and mean.ev == 0.0
            and two.mae == 3.5 and two.rmse == math.sqrt(12.5))
    rng = np.random.default_rng(0)
    dominated = 0
    for _ in range(1000):
        n = int(rng.integers(2, 100))
        zz = rng.normal(0, 10, n)
        r = scores(zz + rng.standard_cauchy(n), zz)
        dominated += r.rmse >= r.mae
    ok = hand and dominated == 1000
    detail = f"hand cases {'exact' if hand else 'wrong'}; RMSE >= MAE on {dominated}/1000 random vectors"
    assert report(4, ok, detail), detail


def test_criterion_5_priors_conformance(recovery):
    rng = np.random.default_rng(42)
    n = 100_000
    bad = []
    for name, p in default_priors().items():
        x = p.sample(rng, n)
        c = x - x.mean()
        se_var = math.sqrt(np.mean(c ** 4) - np.mean(c ** 2) ** 2) / math.sqrt(n)
        if abs(x.mean() - p.mean) >= 3 * math.sqrt(p.var / n) or abs(x.var(ddof=1) - p.var) >= 3 * se_var:
            bad.append(name)
    _, layout, res, _ = recovery
    signs = weak_priors().signs(layout)
    violations = 0
    for i, name in enumerate(res.names):
        s = signs[name]
        if s:
            violations += int(np.sum(np.sign(res.draws[:, :, i]) != s))
    ok = not bad and violations == 0
    detail = (f"{len(default_priors()) - len(bad)}/{len(default_priors())} priors match analytic "
              f"moments within 3 SE; {violations} sign violations in {res.draws[:, :, 0].size} "
              f"retained draws x {len(res.names)} parameters")
    assert report(5, ok, detail), detail


def test_criterion_6_determinism_and_formats(tmp_path):
    camp = generate(SynthSpec(nx=12, ny=12, n_sensors=2, n_hours=30, seed=4))
    again = generate(SynthSpec(nx=12, ny=12, n_sensors=2, n_hours=30, seed=4))
    rows = build_rows(camp.observations)
    cfg = SamplerConfig(n_adapt=300, n_burn=50, n_keep=100, n_chains=2, seed=5)
    a = gibbs_fit(rows, weak_priors(), cfg)
    b = gibbs_fit(build_rows(again.observations), weak_priors(), cfg)
    same_chains = a.draws.tobytes() == b.draws.tobytes()
    bias, cals = posterior_estimate(a)
    stack = camp.spatial_stack()
    g1 = correct_grid(camp.model_grid(0), stack, camp.observations.xt[0], bias)
    g2 = correct_grid(again.model_grid(0), stack, again.observations.xt[0], bias)
    same_grids = g1.values.tobytes() == g2.values.tobytes()
    same_report = diagnostics(a).table() == diagnostics(b).table()

    checks = {}
    vals = g1.values.copy()
    vals[0, 0] = g1.nodata
    g1 = ConcentrationGrid(g1.origin_x, g1.origin_y, g1.cell_size, vals, g1.timestamp, g1.nodata)
    for binary in (True, False):
        back = read_grid(write_grid(g1, tmp_path / f"g{binary}", binary))
        checks[f"grid-{'binary' if binary else 'ascii'}"] = (
            back.values.tobytes() == g1.values.tobytes() and back.nodata_mask[0, 0])
    data = np.array([[1.25, np.nan], [np.nan, 2.5]])
    write_table(tmp_path / "t.csv", ["a", "b"], np.array([5, 6]), data)
    checks["table-mask"] = np.array_equal(read_table(tmp_path / "t.csv", ["a", "b"])[1], data,
                                          equal_nan=True)
    cfg_path = write_campaign(camp, tmp_path / "camp", latent=False)
    checks["campaign"] = assemble(load_config(cfg_path)).equals(camp.observations)
    save_config(load_config(cfg_path), tmp_path / "c2.yaml")
    checks["config"] = load_config(tmp_path / "c2.yaml").to_dict() == load_config(cfg_path).to_dict()
    save_priors(default_priors(), tmp_path / "p.yaml")
    checks["priors"] = load_priors(tmp_path / "p.yaml") == default_priors()
    write_parameters(tmp_path / "par.yaml", bias, cals)
    checks["parameters"] = read_parameters(tmp_path / "par.yaml") == (bias, cals)
    a.to_csv(tmp_path / "d.csv")
    checks["draws"] = ChainResult.from_csv(tmp_path / "d.csv", a.layout).draws.tobytes() == a.draws.tobytes()
    checks["synth-spec"] = SynthSpec.from_dict(camp.spec.to_dict()) == camp.spec
    ok = same_chains and same_grids and same_report and all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    detail = (f"chains {'identical' if same_chains else 'differ'}, grids "
              f"{'identical' if same_grids else 'differ'}, reports "
              f"{'identical' if same_report else 'differ'}; {len(checks) - len(failed)}/{len(checks)} "
              f"formats round-trip{'; failed: ' + ', '.join(failed) if failed else ''}")
    assert report(6, ok, detail), detail


# reference leave-one-out scores and bias signs
ROUEN_LOO = {"raw": (18.6, 13.4), "S+LCS": (16.3, 33.1)}


def test_criterion_7_rouen_golden_targets():
    path = os.environ.get("AQFUSION_ROUEN_CONFIG")
    if not path:
        report(7, False, "NOT AVAILABLE: open Rouen dataset not configured (set AQFUSION_ROUEN_CONFIG)")
        ACCEPTANCE_LINES[7] = ACCEPTANCE_LINES[7].replace("FAIL", "SKIP")
        pytest.skip("Rouen dataset not available")
    cfg = load_config(path)
    obs = assemble(cfg)
    obs = obs.select_hours(obs.hours[traffic_hours_filter(obs.hours, cfg.traffic)])
    priors = default_priors(obs.spatial_names, obs.temporal_names, obs.channels)
    table = read_collocation()
    fits = []

    def fitter(rows):
        lay = ParameterLayout.from_rows(rows, obs.spatial_names, obs.temporal_names)
        init = init_from_collocation(table, lay, priors)
        est = posterior_estimate(gibbs_fit(rows, priors, SamplerConfig(), init, layout=lay), "mean", lay)
        fits.append(est)
        return est

    res = loo_station_cv(obs, fitter, mode="S+LCS")
    raw = res.pooled["raw"]["loo"]
    cor = res.pooled["corrected"]["loo"]
    close = (abs(raw.rmse - ROUEN_LOO["raw"][0]) <= 1.5 and abs(raw.ev - ROUEN_LOO["raw"][1]) <= 6
             and abs(cor.rmse - ROUEN_LOO["S+LCS"][0]) <= 1.5 and abs(cor.ev - ROUEN_LOO["S+LCS"][1]) <= 6)
    signs = all(b.ac < 0 and b.zeta_S[0] < 0 and b.zeta_S[1] > 0 and b.zeta_S[2] > 0 for b, _ in fits)
    drift = all(c.alpha < 0 and (sid not in table or abs(c.alpha) < abs(table[sid]["alpha"]))
                for _, cals in fits for sid, c in cals.items())
    ok = close and signs and drift
    detail = (f"LOO raw RMSE {raw.rmse:.1f} EV {raw.ev:.1f}, S+LCS RMSE {cor.rmse:.1f} EV {cor.ev:.1f}; "
              f"bias signs {'match' if signs else 'differ'}; alpha drift {'holds' if drift else 'fails'}")
    assert report(7, ok, detail), detail
