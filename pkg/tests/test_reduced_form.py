import numpy as np
import pytest
from numpy.testing import assert_allclose

from possiv import CanonicalData, DegeneracyError, fit_reduced_form, sigma11_hat, t_of_beta
from possiv.reduced_form import sigma11_of_psi

from util import make_fit, random_canonical, random_spd


def test_fit_constant_instrument_hand_example():
    # z a column of ones makes the fit a plain mean; residual cross-products
    # verified by hand: deviations (+-3, +-1) give 20/4 = 5 in every cell.
    z = np.ones((4, 1))
    w = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]])
    fit = fit_reduced_form(CanonicalData(w=w, z=z))
    assert_allclose(fit.gamma_hat, [[4.0, 5.0]])
    assert_allclose(fit.psi_hat, [[5.0, 5.0], [5.0, 5.0]])
    # Independent least-squares oracle.
    coef, *_ = np.linalg.lstsq(z, w, rcond=None)
    assert_allclose(fit.gamma_hat, coef, atol=1e-12)


def test_fit_noise_free_residual_covariance_vanishes():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((30, 2))
    gamma = np.array([[1.0, 0.5], [-0.3, 2.0]])
    fit = fit_reduced_form(CanonicalData(w=z @ gamma, z=z))
    assert np.max(np.abs(fit.psi_hat)) <= 1e-12
    assert_allclose(fit.gamma_hat, gamma, atol=1e-10)


def test_fit_single_instrument_ratio_form():
    rng = np.random.default_rng(1)
    z = rng.standard_normal((25, 1))
    w = rng.standard_normal((25, 2))
    fit = fit_reduced_form(CanonicalData(w=w, z=z))
    zz = float(z[:, 0] @ z[:, 0])
    assert_allclose(fit.gamma_hat[0, 0], float(z[:, 0] @ w[:, 0]) / zz, rtol=1e-12)
    assert_allclose(fit.gamma_hat[0, 1], float(z[:, 0] @ w[:, 1]) / zz, rtol=1e-12)


def test_fit_satisfies_normal_equations():
    rng = np.random.default_rng(2)
    data = random_canonical(rng, n=40, p=3)
    fit = fit_reduced_form(data)
    resid = fit.gram @ fit.gamma_hat - data.z.T @ data.w
    assert np.max(np.abs(resid)) <= 1e-8


def test_fit_invariant_under_joint_row_permutation():
    rng = np.random.default_rng(3)
    data = random_canonical(rng, n=35, p=2)
    perm = rng.permutation(35)
    shuffled = CanonicalData(w=data.w[perm], z=data.z[perm])
    a, b = fit_reduced_form(data), fit_reduced_form(shuffled)
    assert_allclose(a.gamma_hat, b.gamma_hat, atol=1e-10)
    assert_allclose(a.psi_hat, b.psi_hat, atol=1e-10)
    assert_allclose(a.gram, b.gram, atol=1e-9)


def test_psi_hat_is_mle_normalised():
    rng = np.random.default_rng(4)
    data = random_canonical(rng, n=20, p=1)
    fit = fit_reduced_form(data)
    coef, *_ = np.linalg.lstsq(data.z, data.w, rcond=None)
    resid = data.w - data.z @ coef
    assert_allclose(fit.psi_hat, resid.T @ resid / 20, rtol=1e-10)


def test_t_of_beta_definition():
    fit = make_fit([[1.0, 2.0], [1.0, 0.0]], np.eye(2), np.eye(2))
    assert_allclose(t_of_beta(fit, 0.0), fit.gamma1)
    assert_allclose(t_of_beta(fit, 0.5), [0.0, 1.0])


def test_t_of_beta_zero_at_proportional_columns():
    fit = make_fit([[3.0, 1.5], [-2.0, -1.0]], np.eye(2), np.eye(2))
    assert_allclose(t_of_beta(fit, 2.0), np.zeros(2), atol=1e-15)


def test_sigma11_examples():
    fit = make_fit([[0.0, 0.0]], [[2.0, 0.3], [0.3, 1.0]], [[1.0]])
    assert sigma11_hat(fit, 0.0) == pytest.approx(2.0)
    fit_eye = make_fit([[0.0, 0.0]], np.eye(2), [[1.0]])
    assert sigma11_hat(fit_eye, 2.0) == pytest.approx(5.0)


def test_sigma11_matches_quadratic_form_oracle():
    rng = np.random.default_rng(5)
    for _ in range(50):
        psi = random_spd(rng, 2)
        beta = rng.uniform(-4, 4)
        fit = make_fit([[0.0, 0.0]], psi, [[1.0]])
        u = np.array([1.0, -beta])
        assert sigma11_hat(fit, beta) == pytest.approx(float(u @ psi @ u), rel=1e-12)


def test_sigma11_positive_on_grid_for_spd_psi():
    rng = np.random.default_rng(6)
    betas = np.linspace(-10, 10, 81)
    for _ in range(20):
        psi = random_spd(rng, 2)
        assert np.all(sigma11_of_psi(psi, betas) > 0)


def test_sigma11_degenerate_errors():
    # Perfectly collinear residuals: psi singular, variance hits zero at beta=1.
    psi = np.array([[1.0, 1.0], [1.0, 1.0]])
    fit = make_fit([[0.0, 0.0]], psi, [[1.0]])
    with pytest.raises(DegeneracyError):
        sigma11_hat(fit, 1.0)
