"""Recalibration of possibility curves into valid confidence curves.

The raw conditional possibility is a likelihood-ratio-style quantity; its
level sets are not automatically confidence sets. Two recalibrations are
provided. The chi-square approximation maps each value v to the survival
probability 1 - F1(-2 log v) with F1 the chi-square(1) distribution
function. The Monte Carlo transform simulates datasets from the model at
each hypothesised beta (nuisance parameters plugged in at their constrained
optima for the observed data), recomputes each synthetic dataset's own
normalised possibility at that beta, and reports the fraction at or below
the observed value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import special

from .errors import ConfigurationError, DataError, DegeneracyError
from .posterior import PossibilityCurve, pir_nonempty_batch
from .reduced_form import SIGMA11_RTOL, ReducedFormFit, t_of_beta
from .structural import StructuralPoint, gamma_star, sigma_hat_of_beta
from .rng import TAG_VALIDIFY, substream
from .violation import Projector, ViolationSet, project

# Eigenvalue floor factor applied to the residual covariance before sampling.
PSI_FLOOR_RTOL = 1e-12
# Slack on the possibility comparison, guarding floating-point ties at 1.
_TIE_SLACK = 1e-9
# Offsets (in anchor standard errors) probed when locating a dataset's own
# possibility maximiser before golden-section polish.
_PROBE_OFFSETS = np.sort(
    np.concatenate([[0.0], *[[s, -s] for s in 0.5 * 2.0 ** np.arange(10)]])
)


@dataclass(frozen=True)
class Chi2:
    """Chi-square(1) recalibration; cheap, accurate in larger samples."""


@dataclass(frozen=True)
class MonteCarlo:
    """Sampling-based recalibration with ``m`` replicates per grid point."""

    m: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ConfigurationError("Monte Carlo sample count m must be >= 1")


ValidifyMethod = Chi2 | MonteCarlo


def chi2_cdf_1dof(x):
    """Chi-square(1) CDF via the regularised lower incomplete gamma function."""
    return special.gammainc(0.5, 0.5 * np.asarray(x, dtype=float))


@dataclass(frozen=True)
class ValidifiedCurve:
    """A possibility curve together with its recalibrated values."""

    base: PossibilityCurve
    validified: np.ndarray
    method: ValidifyMethod
    degenerate_count: int = 0

    def __post_init__(self):
        arr = np.asarray(self.validified, dtype=float)
        arr.flags.writeable = False
        object.__setattr__(self, "validified", arr)

    @property
    def grid(self):
        return self.base.grid

    @property
    def flags(self):
        return self.base.flags

    @property
    def values(self) -> np.ndarray:
        return self.validified

    def evaluate(self, beta: float) -> float:
        if not isinstance(self.method, Chi2):
            raise ConfigurationError("Monte Carlo curves cannot be evaluated off-grid")
        v = min(self.base.evaluate(beta), 1.0)
        if v <= 0.0:
            return 0.0
        return float(1.0 - chi2_cdf_1dof(-2.0 * math.log(v)))

    @property
    def evaluator(self):
        if isinstance(self.method, Chi2) and self.base.evaluator is not None:
            return self.evaluate
        return None


def validify_chi2(curve: PossibilityCurve) -> ValidifiedCurve:
    """Pointwise chi-square(1) recalibration of a normalised curve."""
    with np.errstate(divide="ignore"):
        x = -2.0 * np.log(curve.possibility)
    return ValidifiedCurve(base=curve, validified=1.0 - chi2_cdf_1dof(x), method=Chi2())


def _floored_psi(fit: ReducedFormFit) -> tuple[ReducedFormFit, np.ndarray]:
    """Floor the residual covariance spectrum; returns (fit, sampling factor)."""
    vals, vecs = np.linalg.eigh(fit.psi_hat)
    tr = float(np.trace(fit.psi_hat))
    if tr <= 0.0:
        raise DegeneracyError("residual covariance has nonpositive trace; cannot simulate")
    floor = PSI_FLOOR_RTOL * tr
    vals_f = np.maximum(vals, floor)
    factor = vecs * np.sqrt(vals_f)
    if np.all(vals >= floor):
        return fit, factor
    psi_f = (vecs * vals_f) @ vecs.T
    return replace(fit, psi_hat=0.5 * (psi_f + psi_f.T)), factor


def _sampling_model(
    fit: ReducedFormFit, vset: ViolationSet, beta: float, z: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Mean matrix Z Gamma_sim and row-covariance factor for samples at beta.

    Gamma_sim is the constrained optimum nearest the observed data under the
    hypothesised beta: gamma_star at (alpha_hat(beta), beta, Sigma_hat(beta)).
    """
    fit_f, factor = _floored_psi(fit)
    alpha_hat = project(vset, t_of_beta(fit_f, beta), fit_f.gram).alpha_hat
    point = StructuralPoint(alpha=alpha_hat, beta=beta, sigma=sigma_hat_of_beta(fit_f, beta))
    return z @ gamma_star(fit_f, point), factor


def simulate_under_beta(
    fit: ReducedFormFit,
    vset: ViolationSet,
    beta: float,
    z: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw one synthetic n x 2 response matrix from the model at beta."""
    z = np.asarray(z, dtype=float)
    mean, factor = _sampling_model(fit, vset, beta, z)
    return mean + rng.standard_normal((z.shape[0], 2)) @ factor.T


def _refit_operator(z: np.ndarray) -> np.ndarray:
    """p x n operator mapping a response matrix to least-squares coefficients."""
    q, r = np.linalg.qr(z)
    return np.linalg.solve(r, q.T)


class _QRows:
    """Q(beta) evaluator for a batch of datasets sharing one metric.

    Keeps the previous batch of projection minimisers as a warm start, which
    collapses the coordinate-descent sweep count inside golden-section loops
    where the per-row betas move by shrinking steps.
    """

    def __init__(self, proj: Projector, g1: np.ndarray, g2: np.ndarray, psi: np.ndarray):
        self.proj = proj
        self.g1, self.g2, self.psi = g1, g2, psi
        self._warm: np.ndarray | None = None

    def __call__(self, betas: np.ndarray) -> np.ndarray:
        targets = self.g1 - betas[:, None] * self.g2
        alpha, sq = self.proj.batch(targets, start=self._warm)
        self._warm = alpha
        psi = self.psi
        s11 = psi[:, 0, 0] - 2.0 * betas * psi[:, 0, 1] + betas * betas * psi[:, 1, 1]
        return sq / np.maximum(s11, 1e-300)


def _anchor_and_se(
    gram: np.ndarray, g1: np.ndarray, g2: np.ndarray, psi: np.ndarray, n: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-dataset anchor estimate and its standard error; flags usable rows."""
    qa = np.einsum("mi,ij,mj->m", g2, gram, g2)
    qb = np.einsum("mi,ij,mj->m", g2, gram, g1)
    usable = qa > 0.0
    safe_qa = np.where(usable, qa, 1.0)
    anchors = np.where(usable, qb / safe_qa, 0.0)
    tvec = g1 - anchors[:, None] * g2
    s11_a = psi[:, 0, 0] - 2.0 * anchors * psi[:, 0, 1] + anchors * anchors * psi[:, 1, 1]
    sigma2 = s11_a + np.einsum("mi,ij,mj->m", tvec, gram, tvec) / n
    se = np.sqrt(np.maximum(sigma2, 1e-300) / safe_qa)
    se = np.maximum(se, 1e-12 * (1.0 + np.abs(anchors)))
    return anchors, se, usable


def _probe_q(
    qrows: _QRows, anchors: np.ndarray, se: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Q at anchor +- standard-error multiples; returns (locations, values)."""
    probes = anchors[:, None] + se[:, None] * _PROBE_OFFSETS[None, :]
    qvals = np.column_stack([qrows(probes[:, k]) for k in range(probes.shape[1])])
    return probes, qvals


def _polish_min_q(
    qrows: _QRows,
    anchors: np.ndarray,
    probes: np.ndarray,
    qvals: np.ndarray,
) -> np.ndarray:
    """Golden-section polish of the per-dataset minimum of Q, run in
    lockstep over the batch from each row's best probe bracket. The best
    value ever seen is kept, so a multimodal Q only errs conservatively."""
    rows = np.arange(probes.shape[0])
    best_k = np.argmin(qvals, axis=1)
    best_q = qvals[rows, best_k]
    lo = probes[rows, np.maximum(best_k - 1, 0)]
    hi = probes[rows, np.minimum(best_k + 1, probes.shape[1] - 1)]

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    fc = qrows(c)
    fd = qrows(d)
    best_q = np.minimum(best_q, np.minimum(fc, fd))
    tol = 1e-10 * (1.0 + np.abs(anchors))
    for _ in range(80):
        if np.all(hi - lo <= tol):
            break
        # Lockstep golden-section step: one fresh evaluation per row, the
        # surviving interior point and its value are reused.
        left = fc <= fd
        hi = np.where(left, d, hi)
        lo = np.where(left, lo, c)
        width = hi - lo
        c_cand = hi - invphi * width
        d_cand = lo + invphi * width
        fprobe = qrows(np.where(left, c_cand, d_cand))
        c, d, fc, fd = (
            np.where(left, c_cand, d),
            np.where(left, c, d_cand),
            np.where(left, fprobe, fd),
            np.where(left, fc, fprobe),
        )
        best_q = np.minimum(best_q, fprobe)
    return np.maximum(best_q, 0.0)


def _min_q_batch(
    vset: ViolationSet,
    gram: np.ndarray,
    g1: np.ndarray,
    g2: np.ndarray,
    psi: np.ndarray,
    n: int,
    proj: Projector | None = None,
) -> np.ndarray:
    """Per-dataset minimum of Q over beta (the dataset's own log-normaliser
    is -min/2). Exactly zero for datasets whose partial identification
    region is nonempty; probe grid plus golden-section polish otherwise."""
    if proj is None:
        proj = Projector(vset, gram)
    m = g1.shape[0]
    qstar = np.zeros(m)
    todo = ~pir_nonempty_batch(vset, g1, g2)
    if not np.any(todo):
        return qstar
    g1s, g2s, psis = g1[todo], g2[todo], psi[todo]
    anchors, se, usable = _anchor_and_se(gram, g1s, g2s, psis, n)
    if not np.any(usable):
        # A vanishing first stage keeps qstar at 0, the conservative value.
        return qstar
    qrows = _QRows(proj, g1s, g2s, psis)
    probes, qvals = _probe_q(qrows, anchors, se)
    best = _polish_min_q(qrows, anchors, probes, qvals)
    qstar[todo] = np.where(usable, best, 0.0)
    return qstar


def observed_min_q(fit: ReducedFormFit, vset: ViolationSet, proj: Projector | None = None) -> float:
    """Minimum of Q over beta for the observed data (0 if the partial
    identification region is nonempty)."""
    q = _min_q_batch(
        vset,
        fit.gram,
        fit.gamma1[None, :],
        fit.gamma2[None, :],
        fit.psi_hat[None, :, :],
        fit.n,
        proj,
    )
    return float(q[0])


def _refit_batch(
    refit_op: np.ndarray, z: np.ndarray, w: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Batched least-squares refit: coefficients (m, p, 2) and residual
    covariances (m, 2, 2), arranged as two flat matrix products."""
    m, n, _ = w.shape
    w_flat = w.transpose(1, 0, 2).reshape(n, 2 * m)
    gam_flat = refit_op @ w_flat  # (p, 2m)
    resid_flat = w_flat - z @ gam_flat  # (n, 2m)
    gam = gam_flat.reshape(-1, m, 2).transpose(1, 0, 2)
    resid = resid_flat.reshape(n, m, 2).transpose(1, 0, 2)
    psi = resid.transpose(0, 2, 1) @ resid / n
    return gam, psi


def _mc_fraction_at(
    fit: ReducedFormFit,
    vset: ViolationSet,
    beta: float,
    z: np.ndarray,
    m: int,
    seed: int,
    grid_index: int,
    d_obs: float,
    refit_op: np.ndarray,
    proj: Projector,
) -> tuple[float, int]:
    """Fraction of synthetic datasets whose normalised possibility at beta is
    at or below the observed one, plus the count of degenerate replicates.

    The indicator for replicate i compares D_i = Q_i(beta) - min_b Q_i(b)
    against the observed deficit. Because min_b Q_i lies between zero and
    the smallest probed value, most replicates are decided from bounds
    alone; the golden-section polish runs only on the ambiguous ones.
    """
    thresh = d_obs - _TIE_SLACK
    if thresh <= 0.0:
        # The observed possibility is 1 here; every replicate ties or falls below.
        return 1.0, 0
    n = z.shape[0]
    mean, factor = _sampling_model(fit, vset, beta, z)
    rng = substream(seed, TAG_VALIDIFY, grid_index)
    noise = rng.standard_normal((m, n, 2))
    w = mean[None, :, :] + noise @ factor.T
    gam, psi = _refit_batch(refit_op, z, w)
    g1, g2 = gam[..., 0], gam[..., 1]

    targets = g1 - beta * g2
    _, sq = proj.batch(targets)
    s11 = psi[:, 0, 0] - 2.0 * beta * psi[:, 0, 1] + beta * beta * psi[:, 1, 1]
    tr = psi[:, 0, 0] + psi[:, 1, 1]
    degenerate = s11 <= SIGMA11_RTOL * tr
    q_here = sq / np.where(degenerate, 1.0, s11)

    hits = degenerate.copy()  # degenerate replicates count as hits, conservatively
    live = ~degenerate
    # Even a zero normaliser cannot lift these rows over the threshold.
    candidates = live & (q_here >= thresh)
    idx = np.flatnonzero(candidates)
    if idx.size:
        nonempty = pir_nonempty_batch(vset, g1[idx], g2[idx])
        hits[idx[nonempty]] = True  # normaliser exactly 0 there
        rest = idx[~nonempty]
        if rest.size:
            g1s, g2s, psis = g1[rest], g2[rest], psi[rest]
            anchors, se, usable = _anchor_and_se(fit.gram, g1s, g2s, psis, n)
            qrows = _QRows(proj, g1s, g2s, psis)
            probes, qvals = _probe_q(qrows, anchors, se)
            upper = np.minimum(np.min(qvals, axis=1), q_here[rest])  # q_star <= both
            # Unusable rows keep the conservative q_star of 0, and candidates
            # already satisfy q_here >= thresh, so both branches are hits.
            decided = (q_here[rest] - upper >= thresh) | ~usable
            hits[rest[decided]] = True
            amb = ~decided
            if np.any(amb):
                sub = np.flatnonzero(amb)
                qrows_amb = _QRows(proj, g1s[sub], g2s[sub], psis[sub])
                qstar = _polish_min_q(qrows_amb, anchors[sub], probes[sub], qvals[sub])
                hits[rest[sub]] = q_here[rest[sub]] - qstar >= thresh
    return float(np.mean(hits)), int(np.count_nonzero(degenerate))


def _check_same_design(fit: ReducedFormFit, z: np.ndarray) -> None:
    gram_z = z.T @ z
    rel = np.linalg.norm(gram_z - fit.gram) / max(np.linalg.norm(fit.gram), 1.0)
    if rel > 1e-8:
        raise DataError("instrument matrix does not match the fitted Gram matrix")


def validify_mc(
    fit: ReducedFormFit,
    vset: ViolationSet,
    curve: PossibilityCurve,
    z: np.ndarray,
    m: int,
    seed: int,
) -> ValidifiedCurve:
    """Monte Carlo recalibration over the whole grid.

    Deterministic given (seed, grid, m): the draws behind grid point gi,
    replicate i are the i-th slice of the block keyed by (seed, gi), so
    results do not depend on evaluation order or scheduling.
    """
    if m < 1:
        raise ConfigurationError("Monte Carlo sample count m must be >= 1")
    z = np.asarray(z, dtype=float)
    _check_same_design(fit, z)
    refit_op = _refit_operator(z)
    proj = Projector(vset, fit.gram)
    d_obs = -2.0 * (curve.log_unnormalised - curve.normaliser)
    pts = curve.grid.points
    validified = np.empty(pts.shape[0])
    degenerate = 0
    for gi, beta in enumerate(pts):
        frac, deg = _mc_fraction_at(
            fit, vset, float(beta), z, m, seed, gi, float(d_obs[gi]), refit_op, proj
        )
        validified[gi] = frac
        degenerate += deg
    return ValidifiedCurve(
        base=curve,
        validified=validified,
        method=MonteCarlo(m=m, seed=seed),
        degenerate_count=degenerate,
    )


def validify_mc_point(
    fit: ReducedFormFit,
    vset: ViolationSet,
    beta: float,
    z: np.ndarray,
    m: int,
    seed: int,
) -> float:
    """Monte Carlo recalibrated possibility at one beta, without a curve.

    Useful for calibration studies that only need the value at the true
    effect. Matches validify_mc at grid index 0 of a single-point grid.
    """
    if m < 1:
        raise ConfigurationError("Monte Carlo sample count m must be >= 1")
    z = np.asarray(z, dtype=float)
    _check_same_design(fit, z)
    proj = Projector(vset, fit.gram)
    from .posterior import _q_many  # local import to avoid a cycle at module load

    q_obs = float(_q_many(fit, vset, np.array([float(beta)]), proj=proj)[0])
    d_obs = q_obs - observed_min_q(fit, vset, proj)
    frac, _ = _mc_fraction_at(
        fit, vset, float(beta), z, m, seed, 0, d_obs, _refit_operator(z), proj
    )
    return frac


def validify(
    fit: ReducedFormFit,
    vset: ViolationSet,
    curve: PossibilityCurve,
    z: np.ndarray,
    method: ValidifyMethod,
) -> ValidifiedCurve:
    """Dispatch on the recalibration method."""
    if isinstance(method, Chi2):
        return validify_chi2(curve)
    if isinstance(method, MonteCarlo):
        return validify_mc(fit, vset, curve, z, method.m, method.seed)
    raise ConfigurationError(f"unknown validify method {type(method).__name__}")
