"""Kernels, windows and quadrature rules."""

import numpy as np
import pytest

from qmeas.smearing import (DEFAULT_SPACE_NODES, DEFAULT_TIME_NODES,
                            F_WINDOW_SIGMAS, G_WINDOW_SIGMAS, QuadratureRule,
                            SmearingConfig, SmearingWindowWarning, f_sigma,
                            f_window, g_sigma, g_window, gauss_legendre,
                            space_rule, time_rule, trapezoid_rule, w_delta)


def test_gauss_legendre_exact_on_polynomials():
    # an n-node rule integrates degree 2n-1 exactly
    for n in (2, 4, 7):
        x, w = gauss_legendre(n, 1.0, 3.0)
        assert np.all(np.diff(x) > 0.0)
        assert np.all(w > 0.0)
        assert np.sum(w) == pytest.approx(2.0, abs=1e-13)
        for k in range(2 * n):
            exact = (3.0 ** (k + 1) - 1.0) / (k + 1)
            assert np.dot(w, x ** k) == pytest.approx(exact, rel=1e-13)


def test_gauss_legendre_needs_a_node():
    with pytest.raises(ValueError):
        gauss_legendre(0, 0.0, 1.0)


def test_trapezoid_rule_weights():
    x, w = trapezoid_rule(5, 0.0, 1.0)
    assert np.allclose(x, np.linspace(0.0, 1.0, 5))
    assert np.allclose(w, [0.125, 0.25, 0.25, 0.25, 0.125])
    assert np.dot(w, 2.0 * x + 1.0) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        trapezoid_rule(1, 0.0, 1.0)


def test_quadrature_rule_dispatch():
    assert QuadratureRule(nodes=8).scheme == "gauss"
    xs, _ = QuadratureRule(nodes=8, scheme="trapezoid").on(0.0, 1.0)
    assert xs[0] == 0.0 and xs[-1] == 1.0
    with pytest.raises(ValueError):
        QuadratureRule(nodes=8, scheme="simpson").on(0.0, 1.0)
    assert time_rule().nodes == DEFAULT_TIME_NODES
    assert space_rule().nodes == DEFAULT_SPACE_NODES


def test_f_sigma_is_normalized():
    sigma = 1.7
    lo, hi = f_window(sigma)
    x, w = gauss_legendre(64, lo, hi)
    total = float(np.dot(w, f_sigma(x, sigma)))
    # missing mass is the +-6 sigma tail, about 2e-9
    assert total == pytest.approx(1.0, abs=5e-9)
    assert f_sigma(0.0, sigma) == pytest.approx(1.0 / np.sqrt(2 * np.pi) / sigma)


def test_g_sigma_shape():
    sigma = 2.0
    assert g_sigma(0.0, sigma) == 1.0
    assert g_sigma(3.0, sigma) == pytest.approx(np.exp(-9.0 / 32.0))
    s = np.linspace(-5, 5, 11)
    assert np.allclose(g_sigma(s, sigma), g_sigma(-s, sigma))


def test_w_delta_radial_and_vector_agree():
    delta = 0.8
    r = np.array([0.3, -0.4, 1.2])
    assert w_delta(r, delta) == pytest.approx(
        w_delta(np.linalg.norm(r), delta))
    assert w_delta(np.zeros(3), delta) == 1.0


def test_square_root_kernel_identity():
    # sqrt(f(t-s) f(t-s')) = f(t - (s+s')/2) g(s - s'), the factorization the
    # density pipeline relies on
    rng = np.random.default_rng(21)
    sigma = 1.3
    for _ in range(200):
        t, s, sp = rng.uniform(-4.0, 4.0, size=3)
        lhs = np.sqrt(f_sigma(t - s, sigma) * f_sigma(t - sp, sigma))
        rhs = f_sigma(t - 0.5 * (s + sp), sigma) * g_sigma(s - sp, sigma)
        assert lhs == pytest.approx(rhs, rel=5e-14, abs=1e-300)


def test_windows_scale_with_sigma():
    assert f_window(2.0) == (-2.0 * F_WINDOW_SIGMAS, 2.0 * F_WINDOW_SIGMAS)
    assert g_window(2.0, center=1.0) == (1.0 - 2.0 * G_WINDOW_SIGMAS,
                                         1.0 + 2.0 * G_WINDOW_SIGMAS)
    # the wide window must push the truncated tail below roundoff
    assert np.exp(-G_WINDOW_SIGMAS ** 2 / 8.0) < 1e-13


def test_smearing_config_validation():
    cfg = SmearingConfig(sigma=1.0, window=10.0, delta=0.5)
    assert (cfg.sigma, cfg.window, cfg.delta) == (1.0, 10.0, 0.5)
    with pytest.raises(ValueError):
        SmearingConfig(sigma=0.0, window=10.0)
    with pytest.raises(ValueError):
        SmearingConfig(sigma=1.0, window=-1.0)
    with pytest.raises(ValueError):
        SmearingConfig(sigma=1.0, window=10.0, delta=0.0)


def test_smearing_config_warns_on_coarse_window():
    with pytest.warns(SmearingWindowWarning):
        SmearingConfig(sigma=3.0, window=10.0)
