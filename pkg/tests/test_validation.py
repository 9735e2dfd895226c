import math
from datetime import datetime

import numpy as np
import pytest

from aqfusion.core import BiasParameters
from aqfusion.errors import ConfigurationError, DataError
from aqfusion.inference import gls_fit
from aqfusion.io import hour_index, traffic_hours_filter
from aqfusion.synth import SynthSpec, generate
from aqfusion.validation import (diurnal_profile, loo_station_cv, score_rows, scores,
                                 split_train_test, split_validation, summary_block)

QUIET = BiasParameters(-2.0, -0.6, [-2.5, -0.1], [-0.3, 0.35, 0.01], [0.2, 0.02], 0.0)


def test_perfect_prediction():
    z = [10.0, 20.0, 35.0]
    r = scores(z, z)
    assert (r.ev, r.mae, r.rmse) == (100.0, 0.0, 0.0)


def test_mean_predictor_has_zero_ev():
    z = np.array([1.0, 2.0, 6.0, 7.0])
    assert scores(np.full(4, z.mean()), z).ev == 0.0


def test_two_residual_hand_case():
    r = scores([0.0, 0.0], [3.0, -4.0])
    assert r.mae == 3.5
    assert r.rmse == math.sqrt(12.5)


def test_rmse_dominates_mae():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 50))
        z = rng.normal(size=n) * rng.uniform(0.1, 10)
        p = z + rng.standard_t(3, n)
        r = scores(p, z)
        assert r.rmse >= r.mae


def test_score_errors():
    with pytest.raises(DataError):
        scores([1.0, 2.0], [5.0, 5.0])
    with pytest.raises(ConfigurationError):
        scores([1.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(DataError):
        scores([1.0, np.nan], [1.0, 2.0])


def test_split_of_december_traffic_hours():
    start = hour_index(datetime(2022, 12, 1))
    span = np.arange(start, start + 31 * 24)
    hours = span[traffic_hours_filter(span)]
    train, test = split_train_test(hours, 0.7, seed=1)
    assert (train.size, test.size) == (123, 53)
    assert np.intersect1d(train, test).size == 0
    assert np.array_equal(np.union1d(train, test), hours)
    again = split_train_test(hours, 0.7, seed=1)
    assert np.array_equal(again[0], train)
    assert not np.array_equal(split_train_test(hours, 0.7, seed=2)[0], train)


@pytest.mark.parametrize("fraction", [1.0, 0.0, 0.001])
def test_split_degenerate_fraction(fraction):
    with pytest.raises(ConfigurationError):
        split_train_test(np.arange(100), fraction)


def test_split_needs_hours():
    with pytest.raises(DataError):
        split_train_test(np.arange(5))


@pytest.fixture(scope="module")
def quiet():
    return generate(SynthSpec(nx=12, ny=12, n_stations=5, n_sensors=2, n_hours=60, bias=QUIET,
                              sensor_sigma=(0.0, 0.0), channel_noise=False, seed=2))


def test_true_parameters_give_zero_error(quiet):
    res = loo_station_cv(quiet.observations, lambda rows: QUIET, mode="S+LCS")
    assert res.pooled["corrected"]["loo"].rmse < 1e-9
    assert res.pooled["raw"]["loo"].rmse > 1.0


@pytest.fixture(scope="module")
def many_stations():
    # low station noise: gls regresses on Z, which carries the station noise
    bias = BiasParameters(-2.0, -0.6, [-2.5, -0.1], [-0.3, 0.35, 0.01], [0.2, 0.02], 3.0)
    return generate(SynthSpec(nx=30, ny=30, n_stations=14, n_sensors=0, n_hours=150, bias=bias,
                              seed=3))


def _gls(rows):
    return gls_fit(rows).params


def test_fitted_correction_beats_raw(many_stations):
    res = loo_station_cv(many_stations.observations, _gls, mode="S")
    assert res.pooled["corrected"]["loo"].rmse < res.pooled["raw"]["loo"].rmse
    assert len(res.per_station) == 14


def test_split_validation_scopes(many_stations):
    obs = many_stations.observations
    train, test = split_train_test(obs.hours, 0.7, seed=0)
    res = split_validation(obs, _gls, train, test, mode="S")
    assert set(res.pooled["corrected"]) == {"training", "test"}
    assert res.pooled["corrected"]["test"].n == 14 * test.size
    rows = score_rows([res])
    assert rows[0]["station"] == "pooled"
    text = summary_block([res])
    labels = [line[:22].strip() for line in text.splitlines()[1:]]
    assert labels == ["Model output", "Correction (S)"]


def test_loo_needs_two_stations(quiet):
    obs = quiet.observations.select_devices(["ST1"])
    with pytest.raises(DataError):
        loo_station_cv(obs, lambda rows: QUIET)


def test_unknown_mode(quiet):
    with pytest.raises(ConfigurationError):
        loo_station_cv(quiet.observations, lambda rows: QUIET, mode="LCS")


def test_diurnal_profile_follows_traffic_peaks(many_stations):
    obs = many_stations.observations
    corr = {sid: obs.m[obs.device_index(sid)] for sid in obs.device_ids}
    rows = diurnal_profile(obs, corr)
    by_hour = {}
    for r in rows:
        by_hour.setdefault(r["hour"], []).append(r["measured"])
    means = {h: np.mean(v) for h, v in by_hour.items()}
    assert set(means) == {6, 7, 8, 9, 16, 17, 18, 19}
    assert means[8] > means[6] and means[17] > means[19]


def test_diurnal_scope_empty(quiet):
    with pytest.raises(DataError):
        diurnal_profile(quiet.observations, {}, scope_hours=[0])
