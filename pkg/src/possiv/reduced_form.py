"""Reduced-form sufficient statistics.

The joint regression of [y x] on the instruments yields a p x 2 coefficient
matrix and a 2 x 2 residual covariance. Together with the Gram matrix Z'Z
and the sample size these four quantities determine every possibility
evaluation downstream; no further pass over the raw data is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import CanonicalData
from .errors import DegeneracyError, NumericalError

# Relative threshold below which a marginal outcome variance is treated as
# degenerate (collinear outcome and treatment residuals).
SIGMA11_RTOL = 1e-12


@dataclass(frozen=True)
class ReducedFormFit:
    """Least-squares coefficients, MLE residual covariance, Gram matrix, n."""

    gamma_hat: np.ndarray  # p x 2, columns (gamma1, gamma2)
    psi_hat: np.ndarray  # 2 x 2 symmetric PSD, 1/n normalisation
    gram: np.ndarray  # p x p symmetric positive definite
    n: int

    def __post_init__(self):
        for name in ("gamma_hat", "psi_hat", "gram"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.psi_hat.shape != (2, 2):
            raise ValueError("psi_hat must be 2 x 2")
        if self.gamma_hat.ndim != 2 or self.gamma_hat.shape[1] != 2:
            raise ValueError("gamma_hat must be p x 2")
        if not np.array_equal(self.psi_hat, self.psi_hat.T):
            raise DegeneracyError("psi_hat must be symmetric")
        scale = max(float(np.trace(self.psi_hat)), 1.0)
        if np.linalg.eigvalsh(self.psi_hat)[0] < -1e-12 * scale:
            raise DegeneracyError("psi_hat is not positive semidefinite")

    @property
    def p(self) -> int:
        return self.gamma_hat.shape[0]

    @property
    def gamma1(self) -> np.ndarray:
        return self.gamma_hat[:, 0]

    @property
    def gamma2(self) -> np.ndarray:
        return self.gamma_hat[:, 1]


def fit_reduced_form(data: CanonicalData) -> ReducedFormFit:
    """Regress W = [y x] on Z via a stable orthogonal factorisation.

    The residual covariance uses the 1/n maximum-likelihood normalisation,
    not the degrees-of-freedom corrected one.
    """
    gamma_hat, _, rank, _ = np.linalg.lstsq(data.z, data.w, rcond=None)
    if rank < data.p:
        raise NumericalError("instrument matrix became rank deficient during fitting")
    ztw = data.z.T @ data.w
    residual = float(np.max(np.abs(data.gram @ gamma_hat - ztw)))
    if residual > 1e-8 * (1.0 + float(np.max(np.abs(ztw)))):
        raise NumericalError(f"normal equations violated by {residual:g}")
    resid = data.w - data.z @ gamma_hat
    psi_hat = resid.T @ resid / data.n
    psi_hat = 0.5 * (psi_hat + psi_hat.T)
    return ReducedFormFit(gamma_hat=gamma_hat, psi_hat=psi_hat, gram=data.gram, n=data.n)


def t_of_beta(fit: ReducedFormFit, beta: float) -> np.ndarray:
    """The residual direct effect implied by beta: gamma1 - beta * gamma2."""
    return fit.gamma1 - beta * fit.gamma2


def sigma11_of_psi(psi: np.ndarray, beta: float):
    """Quadratic form [1, -beta] psi [1, -beta]'; accepts stacked psi arrays."""
    psi = np.asarray(psi)
    return psi[..., 0, 0] - 2.0 * beta * psi[..., 0, 1] + beta * beta * psi[..., 1, 1]


def sigma11_hat(fit: ReducedFormFit, beta: float) -> float:
    """Marginal outcome variance at beta, from the fitted residual covariance."""
    val = float(sigma11_of_psi(fit.psi_hat, beta))
    if val <= SIGMA11_RTOL * float(np.trace(fit.psi_hat)):
        raise DegeneracyError(f"marginal outcome variance {val:g} is not positive at beta={beta:g}")
    return val
