"""Shared helpers for the test suite."""

import numpy as np

from possiv import CanonicalData, ReducedFormFit, fit_reduced_form


def random_spd(rng, p, scale=1.0, jitter=0.5):
    a = rng.standard_normal((p, p))
    return scale * (a @ a.T + jitter * np.eye(p))


def random_canonical(rng, n=60, p=2, beta=1.0, alpha=None, gamma2=None, rho=0.4):
    """A small synthetic dataset in canonical form, errors correlated."""
    alpha = np.zeros(p) if alpha is None else np.asarray(alpha, dtype=float)
    gamma2 = np.ones(p) if gamma2 is None else np.asarray(gamma2, dtype=float)
    z = rng.standard_normal((n, p))
    chol = np.linalg.cholesky(np.array([[1.0, rho], [rho, 1.0]]))
    errs = rng.standard_normal((n, 2)) @ chol.T
    x = z @ gamma2 + errs[:, 1]
    y = beta * x + z @ alpha + errs[:, 0]
    return CanonicalData(w=np.column_stack([y - y.mean(), x - x.mean()]), z=z)


def random_fit(rng, n=60, p=2, **kwargs) -> ReducedFormFit:
    return fit_reduced_form(random_canonical(rng, n=n, p=p, **kwargs))


def make_fit(gamma_hat, psi_hat, gram, n=50) -> ReducedFormFit:
    """Assemble a fit directly from its sufficient statistics."""
    return ReducedFormFit(
        gamma_hat=np.asarray(gamma_hat, dtype=float),
        psi_hat=np.asarray(psi_hat, dtype=float),
        gram=np.asarray(gram, dtype=float),
        n=n,
    )
