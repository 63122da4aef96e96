import math

import numpy as np
import pytest
from scipy import stats

from stochnum import channel_sde as ch
from stochnum import rng

C = ch.CoefficientFn.constant


def ltf(beta=100.0, gamma=70.0, delta=25.0, x0=70.0):
    return ch.LtfChannelModel(C(beta), C(gamma), C(delta), x0)


def test_step_coefficients_closed_form():
    grid = ch.TimeGrid(0.0, 0.01, 1)
    c = ch.ltf_step_coefficients(ltf(), grid)
    assert c.rho[0] == pytest.approx(math.exp(-1), rel=1e-12)
    assert c.zeta[0] == pytest.approx(70 * (1 - math.exp(-1)), rel=1e-12)
    assert c.zeta[0] == pytest.approx(44.24845, abs=2e-5)  # quoted value is rounded
    assert c.sigma[0] ** 2 == pytest.approx(3.125 * (1 - math.exp(-2)), rel=1e-12)
    assert c.sigma[0] ** 2 == pytest.approx(2.702072, abs=1e-5)  # quoted value is rounded


def test_zero_diffusion_gives_zero_sigma():
    grid = ch.TimeGrid(0.0, 1.0, 50)
    model = ch.LtfChannelModel(C(30.0), ch.CoefficientFn.paper_gamma(70, 0, 1), C(0.0), 70.0)
    assert np.all(ch.ltf_step_coefficients(model, grid).sigma == 0.0)


def test_quadrature_self_convergence():
    grid = ch.TimeGrid(0.0, 0.01, 1)
    model = ch.LtfChannelModel(C(100.0), ch.CoefficientFn.paper_gamma(70, 0, 1), C(25.0), 70.0)
    a = ch.ltf_step_coefficients(model, grid, 64)
    b = ch.ltf_step_coefficients(model, grid, 1024)
    for name in ("rho", "zeta", "sigma"):
        np.testing.assert_allclose(getattr(a, name), getattr(b, name), rtol=1e-6)


def test_piecewise_steps_use_closed_forms():
    # break points on grid nodes: each step sees one constant value
    grid = ch.TimeGrid(0.0, 1.0, 4)
    beta = ch.CoefficientFn.piecewise([10.0, 500.0], [0.5])
    model = ch.LtfChannelModel(beta, C(70.0), C(5.0), 70.0)
    c = ch.ltf_step_coefficients(model, grid)
    np.testing.assert_allclose(c.rho, np.exp(-np.array([10, 10, 500, 500]) * 0.25), rtol=1e-12)


def test_noiseless_path_is_deterministic_recursion():
    grid = ch.TimeGrid(0.0, 1.0, 20)
    model = ch.LtfChannelModel(C(5.0), ch.CoefficientFn.paper_gamma(70, 0, 1), C(0.0), 60.0)
    c = ch.ltf_step_coefficients(model, grid)
    x = ch.sample_ltf_path(model, c, (3, 7)).values
    ref = [60.0]
    for b in range(20):
        ref.append(c.rho[b] * ref[-1] + c.zeta[b])
    np.testing.assert_allclose(x, ref, rtol=0, atol=0)


def test_terminal_moments_match_ou():
    grid = ch.TimeGrid(0.0, 1.0, 500)
    model = ltf()
    c = ch.ltf_step_coefficients(model, grid)
    M = 10_000
    xT = ch.sample_ltf_paths(model, c, 11, range(M))[:, 0, -1]
    var = 625 / 200 * (1 - math.exp(-200))
    assert abs(xT.mean() - 70) < 3 * math.sqrt(var / M)
    se_var = var * math.sqrt(2 / (M - 1))
    assert abs(xT.var(ddof=1) - var) < 3 * se_var
    assert stats.kstest((xT - 70) / math.sqrt(var), "norm").pvalue > 0.01


def test_mean_variance_helper():
    grid = ch.TimeGrid(0.0, 1.0, 500)
    mean, var = ch.ltf_mean_variance(ltf(), grid)
    assert var[-1] == pytest.approx(3.125, rel=1e-9)
    assert mean[-1] == pytest.approx(70.0, rel=1e-12)
    _, var0 = ch.ltf_mean_variance(ltf(delta=0.0), grid)
    assert np.all(var0 == 0)
    mean2, _ = ch.ltf_mean_variance(ltf(x0=50.0), grid)
    assert mean2[-1] == pytest.approx(70.0, abs=1e-6)


def test_batch_rows_equal_single_paths():
    grid = ch.TimeGrid(0.0, 1.0, 30)
    model = ltf()
    c = ch.ltf_step_coefficients(model, grid)
    batch = ch.sample_ltf_paths(model, c, 4, [2, 9], [0, 5])
    np.testing.assert_array_equal(batch[1, 1], ch.sample_ltf_path(model, c, (4, 9), 5).values)


@pytest.mark.parametrize("x,expected", [(0.0, 1.0), (70.0, 1e-7), (-10.0, 10.0)])
def test_attenuation_ltf(x, expected):
    assert ch.attenuation_ltf(x) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("i,q,expected", [(0, 0, 0), (1, 0, 1), (3, 4, 25)])
def test_attenuation_stf(i, q, expected):
    assert ch.attenuation_stf(i, q) == expected


def test_stf_noiseless_is_exponential():
    grid = ch.TimeGrid(0.0, 1.0, 10)
    model = ch.StfChannelModel(C(-2.0), C(-1.0), C(0.0), C(0.0), cI=1.5, cQ=1.0, xI0=0.3, xQ0=0.0)
    i_c, q_c = ch.sample_stf_path(model, grid, (0, 0)).values
    np.testing.assert_allclose(i_c, 1.5 * 0.3 * np.exp(-2.0 * grid.nodes), rtol=1e-12)
    assert np.all(q_c == 0)


def test_stf_brownian_special_case():
    grid = ch.TimeGrid(0.0, 2.0, 40)
    model = ch.StfChannelModel(C(0.0), C(0.0), C(1.0), C(1.0), xI0=0.5)
    M = 10_000
    i_c, _ = ch.sample_stf_paths(model, grid, 2, range(M))
    iT = i_c[:, 0, -1]
    assert abs(iT.mean() - 0.5) < 3 * math.sqrt(2.0 / M)
    assert abs(iT.var(ddof=1) - 2.0) < 3 * 2.0 * math.sqrt(2 / (M - 1))


def test_stf_stationary_variance():
    grid = ch.TimeGrid(0.0, 10.0, 50)
    model = ch.StfChannelModel(C(-1.0), C(-1.0), C(math.sqrt(2)), C(math.sqrt(2)))
    M = 10_000
    i_c, q_c = ch.sample_stf_paths(model, grid, 3, range(M))
    for comp in (i_c, q_c):
        v = comp[:, 0, -1].var(ddof=1)
        assert abs(v - 1.0) < 3 * math.sqrt(2 / (M - 1))


def test_crn_same_keys_same_normals():
    a = rng.normals(1, 2, 3, 100)
    b = rng.normals(1, 2, 3, 100)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, rng.normals(1, 2, 4, 100))
    assert not np.array_equal(a, rng.normals(1, 2, 3, 100, rng.STF_I))


def test_crn_couples_paths_across_delta():
    # same keys: paths for different delta differ only by the noise scale
    grid = ch.TimeGrid(0.0, 1.0, 100)
    c5 = ch.ltf_step_coefficients(ltf(delta=5.0), grid)
    c10 = ch.ltf_step_coefficients(ltf(delta=10.0), grid)
    x5 = ch.sample_ltf_path(ltf(delta=5.0), c5, (0, 1)).values
    x10 = ch.sample_ltf_path(ltf(delta=10.0), c10, (0, 1)).values
    np.testing.assert_allclose(x10 - 70, 2 * (x5 - 70), atol=1e-9)


def test_bad_key_rejected():
    with pytest.raises(ValueError):
        rng.normals(2 ** 32, 0, 0, 3)
    with pytest.raises(ValueError):
        rng.normals(0, 0, -1, 3)


def test_invalid_grid_rejected():
    with pytest.raises(ch.InvalidModelError):
        ch.TimeGrid(1.0, 1.0, 10)
    with pytest.raises(ch.InvalidModelError):
        ch.TimeGrid(0.0, 1.0, 0)
