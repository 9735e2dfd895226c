import math

import numpy as np
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from aqfusion.core import BiasParameters, ConcentrationGrid, correct_values, forward_model
from aqfusion.inference import default_priors
from aqfusion.io import read_grid, traffic_hours_filter, write_grid
from aqfusion.measurement import SensorCalibration, sensor_forward, sensor_invert
from aqfusion.validation import scores, split_train_test

finite = st.floats(-1e3, 1e3, allow_nan=False)
small = st.floats(-0.5, 0.5, allow_nan=False)


@st.composite
def bias_params(draw):
    return BiasParameters(draw(finite), draw(st.floats(-0.9, 0.0)), [draw(finite), draw(finite)],
                          [draw(small), draw(small), draw(small)], [draw(small), draw(small)],
                          draw(st.floats(0.0, 50.0)))


@given(bias_params(), st.floats(0.0, 500.0), arrays(float, 3, elements=st.floats(0, 1)),
       arrays(float, 2, elements=st.floats(0, 1)))
def test_correction_inverts_bias_model(p, c, xs, xt):
    d = 1.0 + p.ac + xs @ p.zeta_S + xt @ p.zeta_T
    assume(abs(d) > 1e-2)
    m = forward_model(p, c, xs, xt)
    back, _ = correct_values(p, np.array([m]), xs, xt)
    assert math.isclose(back[0], c, rel_tol=1e-9, abs_tol=1e-9 * (1 + abs(m)) / abs(d))


@given(st.floats(-4.0, -0.5), st.floats(2e4, 3e4), arrays(float, 5, elements=st.floats(-5, 5)),
       st.floats(0.0, 300.0), arrays(float, 5, elements=st.floats(-50, 700)))
def test_sensor_roundtrip(alpha, beta, gamma, c, y):
    cal = SensorCalibration(alpha, beta, gamma, 30.0)
    z = sensor_forward(cal, c, y)
    assert math.isclose(sensor_invert(cal, z, y), c, abs_tol=1e-7)


@settings(max_examples=40, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(-1e6, 1e6, allow_nan=False)),
       st.booleans(), st.floats(0.1, 100.0))
def test_grid_roundtrip(tmp_path, values, binary, cell):
    g = ConcentrationGrid(12.5, -3.0, cell, values, 7)
    back = read_grid(write_grid(g, tmp_path / "p.grid", binary))
    assert back.values.tobytes() == g.values.tobytes()
    assert back.cell_size == g.cell_size and back.timestamp == 7


@given(arrays(float, st.integers(2, 60), elements=st.floats(-100, 100)),
       arrays(float, 60, elements=st.floats(-20, 20)))
def test_score_relations(z, noise):
    assume(np.ptp(z) > 1e-3)
    p = z + noise[:z.size]
    r = scores(p, z)
    assert r.rmse >= r.mae - 1e-12
    assert r.ev <= 100.0
    assert r.mae >= 0


@given(st.integers(10, 500), st.floats(0.05, 0.95), st.integers(0, 2 ** 31))
def test_split_sizes(n, fraction, seed):
    n_train = math.floor(fraction * n + 0.5)
    assume(0 < n_train < n)
    hours = np.arange(1000, 1000 + n)
    train, test = split_train_test(hours, fraction, seed)
    assert train.size == n_train and test.size == n - n_train
    assert np.array_equal(np.sort(np.concatenate([train, test])), hours)


@given(st.integers(0, 10 ** 6))
def test_every_week_has_forty_traffic_hours(start):
    assert int(traffic_hours_filter(np.arange(start, start + 168)).sum()) == 40


@settings(max_examples=20)
@given(st.integers(0, 2 ** 31))
def test_prior_draws_respect_signs(seed):
    rng = np.random.default_rng(seed)
    for name, prior in default_priors().items():
        x = prior.sample(rng, 200)
        if prior.sign:
            assert np.all(np.sign(x) == prior.sign), name
        assert all(math.isfinite(prior.logpdf(v)) for v in x[:20])
