"""Closed-form structural-parameter machinery.

A structural point (alpha, beta, Sigma) maps to reduced-form parameters
through the unit upper-triangular rotation R(beta). Given a reduced-form
fit, the best coefficient matrix compatible with a structural point, the
covariance profile Sigma_hat(beta), and the resulting log-possibility all
have closed forms. Everything hot downstream uses the two-argument profile;
the full three-term form exists for explicit-covariance use and as a
cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import DegeneracyError
from .reduced_form import SIGMA11_RTOL, ReducedFormFit, sigma11_hat, sigma11_of_psi, t_of_beta


def rotation(beta: float) -> np.ndarray:
    """R(beta) = [[1, beta], [0, 1]]; maps structural to reduced-form covariance."""
    return np.array([[1.0, beta], [0.0, 1.0]])


@dataclass(frozen=True)
class StructuralPoint:
    """A candidate (alpha, beta, Sigma) with Sigma symmetric positive definite."""

    alpha: np.ndarray
    beta: float
    sigma: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.shape != (2, 2):
            raise ValueError("sigma must be 2 x 2")
        if not np.allclose(sigma, sigma.T, atol=1e-12 * max(1.0, abs(sigma).max())):
            raise ValueError("sigma must be symmetric")
        if np.linalg.eigvalsh(sigma)[0] <= 0.0:
            raise DegeneracyError("sigma is not positive definite")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "sigma", sigma)


def sigma_hat_of_beta(fit: ReducedFormFit, beta: float) -> np.ndarray:
    """Structural covariance that rotates exactly onto the fitted psi_hat.

    Satisfies R(beta) @ result @ R(beta).T == psi_hat entrywise.
    """
    psi = fit.psi_hat
    s11 = psi[0, 0] - 2.0 * beta * psi[0, 1] + beta * beta * psi[1, 1]
    s12 = psi[0, 1] - beta * psi[1, 1]
    return np.array([[s11, s12], [s12, psi[1, 1]]])


def _psi_and_sigma11(fit: ReducedFormFit, point: StructuralPoint) -> tuple[np.ndarray, float]:
    r = rotation(point.beta)
    psi = r @ point.sigma @ r.T
    s11 = float(sigma11_of_psi(psi, point.beta))
    if s11 <= SIGMA11_RTOL * float(np.trace(fit.psi_hat)):
        raise DegeneracyError(f"marginal outcome variance {s11:g} is not positive")
    return psi, s11


def gamma_star(fit: ReducedFormFit, point: StructuralPoint) -> np.ndarray:
    """Likelihood-optimal coefficient matrix satisfying the identification constraint.

    The returned p x 2 matrix G satisfies G @ [1, -beta] == alpha and, among
    all matrices with that property, maximises the reduced-form likelihood
    with covariance R(beta) Sigma R(beta)'.
    """
    _, s11 = _psi_and_sigma11(fit, point)
    u = np.array([1.0, -point.beta])
    shortfall = point.alpha - fit.gamma_hat @ u  # p-vector
    row = (point.sigma @ rotation(point.beta).T)[0]  # [1 0] Sigma R(beta)'
    return fit.gamma_hat + np.outer(shortfall, row) / s11


def log_structural_possibility(fit: ReducedFormFit, point: StructuralPoint) -> float:
    """Full three-term log-possibility, normalised to 0 at the global MLE point."""
    psi, s11 = _psi_and_sigma11(fit, point)
    try:
        chol = sla.cholesky(psi, lower=True)
    except sla.LinAlgError:
        raise DegeneracyError("rotated covariance is not positive definite") from None
    try:
        chol_hat = sla.cholesky(fit.psi_hat, lower=True)
    except sla.LinAlgError:
        raise DegeneracyError("fitted residual covariance is not positive definite") from None

    n = fit.n
    logdet_psi = 2.0 * float(np.sum(np.log(np.diag(chol))))
    logdet_hat = 2.0 * float(np.sum(np.log(np.diag(chol_hat))))
    # W' M_Z W is n * psi_hat; trace(psi^{-1} n psi_hat) via the Cholesky solve.
    scatter = n * fit.psi_hat
    tr = float(np.trace(sla.cho_solve((chol, True), scatter)))
    diff = point.alpha - t_of_beta(fit, point.beta)
    quad = float(diff @ fit.gram @ diff) / s11
    # The MLE point attains -(n/2) logdet_hat - n, which is subtracted off.
    return (-0.5 * n * logdet_psi - 0.5 * tr - 0.5 * quad) - (-0.5 * n * logdet_hat - n)


def profile_log_possibility(fit: ReducedFormFit, alpha: np.ndarray, beta: float) -> float:
    """Log-possibility with the covariance profiled out at Sigma_hat(beta).

    Plugging Sigma_hat(beta) makes the covariance terms of the full form
    cancel against the normaliser, leaving a single quadratic penalty.
    """
    s11 = sigma11_hat(fit, beta)
    diff = np.atleast_1d(np.asarray(alpha, dtype=float)) - t_of_beta(fit, beta)
    return -0.5 * float(diff @ fit.gram @ diff) / s11
