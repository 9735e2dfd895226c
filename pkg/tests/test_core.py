import numpy as np
import pytest

from aqfusion.core import (BiasParameters, ConcentrationGrid, bias, correct_grid, correct_values,
                           eval_l0, eval_lc, forward_model, invert_to_concentration)
from aqfusion.errors import ConfigurationError, SingularCorrectionError

# reference S + LCS bias estimates
TABLE1_SLCS = BiasParameters(-1.88, -0.67, [-7.75, -0.07], [-0.26, 0.32, 0.01], [0.31, 0.02], 16.76)
XS = np.array([1.0, 1.0, 100.0])
XT = np.array([1.0, 10.0])


def test_l0_zero_parameters():
    assert eval_l0(BiasParameters.zeros(), [3.0, 7.0]) == 0.0


def test_l0_hand_value():
    # -1.88 - 7.75 * 1 - 0.07 * 10
    assert eval_l0(TABLE1_SLCS, XT) == pytest.approx(-10.33, abs=1e-12)


def test_l0_offset_only():
    p = BiasParameters(5.0, 0.0, [0, 0], [0, 0, 0], [0, 0])
    xt = np.random.default_rng(0).normal(size=(20, 2))
    assert np.all(eval_l0(p, xt) == 5.0)


def test_lc_zero_parameters():
    assert eval_lc(BiasParameters.zeros(), XS, XT) == 0.0


def test_lc_hand_value():
    # -0.67 - 0.26 + 0.32 + 1.0 + 0.31 + 0.2
    assert eval_lc(TABLE1_SLCS, XS, XT) == pytest.approx(0.90, abs=1e-12)


def test_lc_increases_with_green():
    more_green = XS + np.array([0.0, 0.5, 0.0])
    assert eval_lc(TABLE1_SLCS, more_green, XT) > eval_lc(TABLE1_SLCS, XS, XT)


def test_bias_zero_parameters_gives_identity():
    p = BiasParameters.zeros()
    assert bias(p, 42.0, XS, XT) == 0.0
    assert forward_model(p, 42.0, XS, XT) == 42.0


def test_bias_at_zero_concentration_is_l0():
    other_xs = np.array([0.2, 0.0, 10.0])
    assert bias(TABLE1_SLCS, 0.0, XS, XT) == eval_l0(TABLE1_SLCS, XT)
    assert bias(TABLE1_SLCS, 0.0, other_xs, XT) == eval_l0(TABLE1_SLCS, XT)


def test_bias_hand_value():
    assert bias(TABLE1_SLCS, 50.0, XS, XT) == pytest.approx(34.67, abs=1e-10)


def test_bias_rejects_negative_concentration():
    with pytest.raises(ConfigurationError):
        bias(TABLE1_SLCS, -1.0, XS, XT)


def test_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        eval_lc(TABLE1_SLCS, [1.0, 2.0], XT)
    with pytest.raises(ConfigurationError):
        BiasParameters(0, 0, [0, 0], [0, 0, 0], [0])


def test_invert_identity():
    assert invert_to_concentration(37.5, 0.0, 0.0) == 37.5


def test_invert_hand_value():
    assert invert_to_concentration(104.0, 4.0, 0.25) == pytest.approx(80.0, abs=1e-12)


def test_invert_clamps_and_counts():
    c, n = invert_to_concentration(np.array([1.0, 10.0]), 5.0, 0.0, return_count=True)
    assert list(c) == [0.0, 5.0]
    assert n == 1


def test_invert_guard():
    with pytest.raises(SingularCorrectionError) as err:
        invert_to_concentration(np.array([1.0, 2.0]), 0.0, np.array([0.0, -1.0]))
    assert err.value.location == 1


def test_forward_then_invert_roundtrip():
    c = np.linspace(0, 200, 11)
    m = forward_model(TABLE1_SLCS, c, XS, XT)
    back, _ = correct_values(TABLE1_SLCS, m, XS, XT)
    assert np.allclose(back, c, rtol=1e-12, atol=1e-10)


def _grid(values, nodata=-9999.0):
    return ConcentrationGrid(0.0, 0.0, 10.0, np.asarray(values, float), 5, nodata)


def test_correct_grid_zero_parameters_bitwise():
    g = _grid([[1.5, 2.25], [3.0, 4.125]])
    out = correct_grid(g, np.zeros((2, 2, 3)), [1.0, 2.0], BiasParameters.zeros())
    assert out.values.tobytes() == g.values.tobytes()


def test_correct_grid_two_by_two_hand_values():
    p = BiasParameters(2.0, 0.5, [1.0], [1.0], [0.0])
    xs = np.array([[[0.0], [0.5]], [[1.0], [-0.5]]])
    g = _grid([[14.0, 22.0], [27.0, 7.0]])
    out = correct_grid(g, xs, [3.0], p)
    # L0 = 5; D = 1.5, 2.0, 2.5, 1.0
    assert np.allclose(out.values, [[6.0, 8.5], [8.8, 2.0]], rtol=0, atol=1e-12)


def test_correct_grid_nodata_passthrough_and_count():
    g = _grid([[-9999.0, 10.0], [20.0, -9999.0]])
    p = BiasParameters(1.0, 0.0, [0.0], [0.0], [0.0])
    out = correct_grid(g, np.zeros((2, 2, 1)), [0.0], p)
    assert out.values[0, 0] == -9999.0 and out.values[1, 1] == -9999.0
    assert out.n_nodata == 2
    assert out.values[0, 1] == 9.0


def test_correct_grid_lightens_overestimate():
    p = BiasParameters(3.0, 0.2, [0.0], [0.1], [0.0])
    rng = np.random.default_rng(0)
    g = _grid(rng.uniform(10, 80, (6, 5)))
    xs = rng.uniform(0, 1, (6, 5, 1))
    out = correct_grid(g, xs, [0.0], p)
    assert out.values.mean() < g.values.mean()


def test_correct_grid_reports_singular_cell():
    p = BiasParameters(0.0, -1.0, [0.0], [0.0], [0.0])
    with pytest.raises(SingularCorrectionError) as err:
        correct_grid(_grid([[1.0]]), np.zeros((1, 1, 1)), [0.0], p)
    assert err.value.location == (5, 0, 0)


def test_correct_grid_shape_check():
    with pytest.raises(ConfigurationError):
        correct_grid(_grid([[1.0, 2.0]]), np.zeros((1, 1, 3)), XT, TABLE1_SLCS)


def test_bias_parameters_dict_roundtrip():
    assert BiasParameters.from_dict(TABLE1_SLCS.to_dict()).to_dict() == TABLE1_SLCS.to_dict()


def test_satisfies_signs():
    signs = {"ac": -1, "zeta_S[0]": -1, "zeta_S[1]": 1}
    assert TABLE1_SLCS.satisfies_signs(signs)
    flipped = BiasParameters(-1.88, 0.1, [-7.75, -0.07], [-0.26, 0.32, 0.01], [0.31, 0.02])
    assert not flipped.satisfies_signs(signs)
