import math
import warnings

import numpy as np
import pytest

from aqfusion.errors import ConfigurationError, SamplerError
from aqfusion.inference import (ChainResult, ParameterLayout, SamplerConfig, diagnostics,
                                gibbs_fit, log_prior, log_target, posterior_estimate, prior_means)
from aqfusion.measurement import loglik_rows


def _truth_vector(camp, layout):
    return layout.pack(camp.bias, camp.calibrations)


def _independent_target(rows, plist, theta, layout, form, noise):
    """Prior + row likelihood + Jacobian of the sampler's coordinate map."""
    bias, cals = layout.unpack(theta)
    ll = loglik_rows(rows, bias, cals, form=form, noise=noise)
    jac = 0.0
    sensor_params = set()
    for j in range(len(layout.sensor_ids)):
        o = layout.sensor_offset(j)
        sensor_params.update({o, o + 1})
        jac += math.log(abs(theta[o + 1]))  # slope coordinate
    for i, p in enumerate(plist):
        if p.sign != 0 and i not in sensor_params:
            jac += math.log(abs(theta[i]))
    return log_prior(theta, plist) + ll + jac


@pytest.mark.parametrize("form,noise", [("measurement", "signal"), ("output", "signal"),
                                        ("output", "literal")])
def test_kernel_matches_row_likelihood(small_campaign, small_rows, priors, form, noise):
    layout = ParameterLayout.from_rows(small_rows)
    plist = priors.for_layout(layout)
    theta = _truth_vector(small_campaign, layout)
    rng = np.random.default_rng(0)
    for trial in range(3):
        th = theta * (1 + 0.02 * trial * rng.standard_normal(theta.size))
        total, theta_back, _, _ = log_target(small_rows, priors, th, layout, form, noise)
        assert np.allclose(theta_back, th, rtol=1e-10, atol=1e-8)
        expect = _independent_target(small_rows, plist, th, layout, form, noise)
        assert total == pytest.approx(expect, rel=1e-10)


def test_kernel_rejects_wrong_sign(small_campaign, small_rows, priors):
    layout = ParameterLayout.from_rows(small_rows)
    theta = _truth_vector(small_campaign, layout)
    theta[layout.index("ac")] = 0.1
    with pytest.raises(SamplerError):
        log_target(small_rows, priors, theta, layout)


@pytest.fixture(scope="module")
def quick_fit(small_campaign, small_rows, priors, quick_config):
    layout = ParameterLayout.from_rows(small_rows)
    init = _truth_vector(small_campaign, layout)
    return gibbs_fit(small_rows, priors, quick_config, init, layout=layout)


def test_fit_shapes_and_names(quick_fit, small_rows, quick_config):
    layout = ParameterLayout.from_rows(small_rows)
    assert quick_fit.draws.shape == (quick_config.n_chains, quick_config.n_keep, layout.size)
    assert quick_fit.names == layout.names
    assert np.all(np.isfinite(quick_fit.log_target))
    assert np.all((quick_fit.accept_rate > 0.05) & (quick_fit.accept_rate < 0.9))


def test_fit_is_deterministic(quick_fit, small_campaign, small_rows, priors, quick_config):
    layout = ParameterLayout.from_rows(small_rows)
    again = gibbs_fit(small_rows, priors, quick_config, _truth_vector(small_campaign, layout),
                      layout=layout)
    assert again.draws.tobytes() == quick_fit.draws.tobytes()
    assert again.log_target.tobytes() == quick_fit.log_target.tobytes()


def test_different_seed_differs(small_campaign, small_rows, priors):
    layout = ParameterLayout.from_rows(small_rows)
    init = _truth_vector(small_campaign, layout)
    a, b = (gibbs_fit(small_rows, priors, SamplerConfig(n_adapt=200, n_burn=50, n_keep=50,
                                                        n_chains=1, seed=s), init, layout=layout)
            for s in (1, 2))
    assert not np.array_equal(a.draws, b.draws)


def test_every_draw_respects_signs(quick_fit, priors):
    signs = priors.signs(quick_fit.layout)
    for i, name in enumerate(quick_fit.names):
        s = signs[name]
        if s:
            assert np.all(np.sign(quick_fit.draws[:, :, i]) == s), name


def test_fixed_parameters_do_not_move(small_campaign, small_rows, priors):
    layout = ParameterLayout.from_rows(small_rows)
    init = _truth_vector(small_campaign, layout)
    cfg = SamplerConfig(n_adapt=100, n_burn=20, n_keep=50, n_chains=1, seed=4)
    res = gibbs_fit(small_rows, priors, cfg, init, layout=layout, fixed=["ac", "zeta_S[roads]"])
    assert np.all(res.column("ac") == init[layout.index("ac")])
    assert np.all(res.column("zeta_S[roads]") == init[layout.index("zeta_S[roads]")])
    assert not res.free[layout.index("ac")]


def test_infeasible_start(small_rows, priors):
    layout = ParameterLayout.from_rows(small_rows)
    init = prior_means(priors.for_layout(layout))
    init[layout.index("sigma0")] = -1.0
    with pytest.raises(SamplerError):
        gibbs_fit(small_rows, priors, SamplerConfig(n_adapt=10, n_burn=10, n_keep=10), init,
                  layout=layout)


def test_needs_a_station(small_rows, priors):
    sensors = small_rows.without_devices(small_rows.station_ids)
    with pytest.raises(ConfigurationError):
        gibbs_fit(sensors, priors, SamplerConfig(n_adapt=10, n_burn=10, n_keep=10))


@pytest.mark.parametrize("kw", [{"n_keep": 0}, {"n_chains": 1.5}, {"target_accept": 1.0},
                                {"form": "other"}, {"guard": 0.0}])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        SamplerConfig(**kw)


def test_config_dict_roundtrip():
    cfg = SamplerConfig(n_adapt=10, seed=5, form="output", noise="literal")
    assert SamplerConfig.from_dict(cfg.to_dict()) == cfg


def test_draws_csv_roundtrip(quick_fit, tmp_path):
    quick_fit.to_csv(tmp_path / "d.csv")
    back = ChainResult.from_csv(tmp_path / "d.csv", quick_fit.layout)
    assert back.draws.tobytes() == quick_fit.draws.tobytes()
    assert back.log_target.tobytes() == quick_fit.log_target.tobytes()
    assert back.names == quick_fit.names


def test_posterior_estimate_types(quick_fit):
    bias, cals = posterior_estimate(quick_fit, "mean")
    assert bias.ac == pytest.approx(quick_fit.mean()[1])
    assert set(cals) == set(quick_fit.layout.sensor_ids)
    bias_m, _ = posterior_estimate(quick_fit, "mode")
    assert bias_m.ac < 0
    with pytest.raises(ConfigurationError):
        posterior_estimate(quick_fit, "median")


def test_short_fit_lands_near_truth(quick_fit, small_campaign):
    truth = quick_fit.layout.pack(small_campaign.bias, small_campaign.calibrations)
    z = np.abs(quick_fit.mean() - truth) / quick_fit.sd()
    assert np.mean(z < 3) >= 0.9


def test_diagnostics_report(quick_fit):
    diag = diagnostics(quick_fit)
    assert len(diag.rows()) == len(quick_fit.names)
    assert np.all(diag.ess > 0)
    assert np.all(diag.mcse > 0)
    assert diag.table().splitlines()[0].split()[0] == "parameter"


def test_single_chain_warns(small_rows, priors):
    res = gibbs_fit(small_rows, priors, SamplerConfig(n_adapt=50, n_burn=10, n_keep=20, n_chains=1))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        diagnostics(res)
    assert any("single chain" in str(w.message) for w in caught)


def test_device_order_does_not_matter(small_campaign, priors):
    from dataclasses import replace

    obs = small_campaign.observations
    idx = list(reversed(range(len(obs.device_ids))))
    shuffled = replace(obs, device_ids=tuple(obs.device_ids[i] for i in idx),
                       kinds=tuple(obs.kinds[i] for i in idx), locations=obs.locations[idx],
                       z=obs.z[idx], m=obs.m[idx], y=obs.y[idx], xs=obs.xs[idx])
    assert shuffled.device_ids != obs.device_ids
    cfg = SamplerConfig(n_adapt=100, n_burn=20, n_keep=30, n_chains=1, seed=8)
    from aqfusion.measurement import build_rows

    a = gibbs_fit(build_rows(obs), priors, cfg)
    b = gibbs_fit(build_rows(shuffled), priors, cfg)
    assert a.names == b.names
    assert a.draws.tobytes() == b.draws.tobytes()


def test_more_data_shrinks_posterior(priors):
    from aqfusion.measurement import build_rows
    from aqfusion.synth import SynthSpec, generate

    cfg = SamplerConfig(n_adapt=1500, n_burn=300, n_keep=500, n_chains=2, seed=2)
    sds = []
    for hours in (100, 200):
        camp = generate(SynthSpec(nx=20, ny=20, n_sensors=3, n_hours=hours, seed=6))
        rows = build_rows(camp.observations)
        layout = ParameterLayout.from_rows(rows)
        res = gibbs_fit(rows, priors, cfg, layout.pack(camp.bias, camp.calibrations), layout=layout)
        sds.append(res.sd())
    assert np.median(sds[1] / sds[0]) < 1.0
    assert np.median(sds[1]) < np.median(sds[0])
