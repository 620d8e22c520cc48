"""Conditional posterior possibility of the treatment effect.

For a violation set A the unnormalised log-possibility at beta is
-Q(beta)/2, where Q(beta) is the squared metric distance from t(beta) to A
divided by the profiled outcome variance. Normalising by the supremum over
beta yields a possibility curve with maximum one, evaluated on an adaptive
grid centred at the classical two-stage least-squares estimate.

Two structural facts keep this cheap and exact. First, the set of betas
whose implied direct effect t(beta) lies inside A (the partial
identification region) is an interval computable in closed form, and the
normaliser is exactly zero whenever it is nonempty. Second, Q(beta) tends
to the finite limit (g2' G g2) / psi22 as beta goes to +-infinity, so
curves that can never decay below the grid floor (weak instruments, very
wide A) are detected analytically and flagged instead of expanding forever.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegeneracyError, NumericalError
from .reduced_form import SIGMA11_RTOL, ReducedFormFit, sigma11_of_psi
from .violation import (
    Box,
    L2Ball,
    Projector,
    Singleton,
    Unconstrained,
    ViolationSet,
    check_dimension,
)

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class GridOptions:
    """Adaptive grid controls: size, initial half-width in anchor standard
    errors, decay floor, and the expansion cap in units of the curve scale."""

    points: int = 513
    halfwidth_se: float = 6.0
    floor: float = 1e-6
    cap_scale: float = 1e6

    def __post_init__(self):
        if self.points < 3:
            raise ConfigurationError("grid needs at least 3 points")
        if self.points % 2 == 0:  # odd count keeps the anchor on the grid
            object.__setattr__(self, "points", self.points + 1)
        if not (0.0 < self.floor < 1.0):
            raise ConfigurationError("floor must be in (0, 1)")


@dataclass(frozen=True)
class BetaGrid:
    points: np.ndarray
    anchor: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        pts.flags.writeable = False
        if np.any(np.diff(pts) <= 0.0):
            raise NumericalError("grid points must be strictly increasing")
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class PossibilityCurve:
    """Normalised possibility values over a beta grid.

    ``log_unnormalised`` holds -Q(beta)/2; ``possibility`` equals
    exp(log_unnormalised - normaliser) with the normaliser chosen so the
    supremum is one. The originating fit and violation set are retained so
    that level-set endpoints can be refined by exact pointwise evaluation.
    """

    grid: BetaGrid
    log_unnormalised: np.ndarray
    possibility: np.ndarray
    normaliser: float
    normaliser_beta: float
    flags: tuple[str, ...] = ()
    fit: ReducedFormFit | None = field(default=None, repr=False)
    vset: ViolationSet | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("log_unnormalised", "possibility"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def values(self) -> np.ndarray:
        return self.possibility

    def evaluate(self, beta: float) -> float:
        """Exact normalised possibility at an arbitrary beta."""
        if self.fit is None or self.vset is None:
            raise NumericalError("curve does not carry its source fit; cannot evaluate off-grid")
        val = np.exp(conditional_log_possibility(self.fit, self.vset, beta) - self.normaliser)
        return min(float(val), 1.0)

    @property
    def evaluator(self):
        if self.fit is None or self.vset is None:
            return None
        return self.evaluate


def _sigma11_many(fit: ReducedFormFit, betas: np.ndarray) -> np.ndarray:
    s11 = sigma11_of_psi(fit.psi_hat, betas)
    if np.min(s11) <= SIGMA11_RTOL * float(np.trace(fit.psi_hat)):
        raise DegeneracyError("marginal outcome variance vanishes on the grid")
    return s11


def _q_many(
    fit: ReducedFormFit, vset: ViolationSet, betas: np.ndarray, proj: Projector | None = None
) -> np.ndarray:
    """Q(beta) over an array of betas: squared metric distance over variance."""
    betas = np.atleast_1d(np.asarray(betas, dtype=float))
    targets = fit.gamma1[None, :] - betas[:, None] * fit.gamma2[None, :]
    if proj is None:
        proj = Projector(vset, fit.gram)
    _, sq = proj.batch(targets)
    return sq / _sigma11_many(fit, betas)


def conditional_log_possibility(fit: ReducedFormFit, vset: ViolationSet, beta: float) -> float:
    """Unnormalised log-possibility of beta given alpha in A: -Q(beta)/2."""
    if isinstance(vset, Unconstrained):
        # Still guard against degenerate variance to keep error behaviour uniform.
        _sigma11_many(fit, np.array([beta]))
        return 0.0
    return -0.5 * float(_q_many(fit, vset, np.array([float(beta)]))[0])


def tsls_anchor(fit: ReducedFormFit) -> tuple[float, float]:
    """Two-stage least-squares point estimate and homoskedastic standard error."""
    qa = float(fit.gamma2 @ fit.gram @ fit.gamma2)
    qb = float(fit.gamma2 @ fit.gram @ fit.gamma1)
    if qa <= 0.0 or qa <= 1e-14 * float(np.trace(fit.gram)) * float(fit.gamma2 @ fit.gamma2 + 1.0):
        raise DegeneracyError("first stage is numerically zero; no anchor estimate")
    est = qb / qa
    tvec = fit.gamma1 - est * fit.gamma2
    sigma2 = float(sigma11_of_psi(fit.psi_hat, est)) + float(tvec @ fit.gram @ tvec) / fit.n
    return est, math.sqrt(max(sigma2, 0.0) / qa)


def partial_identification_interval(
    fit: ReducedFormFit, vset: ViolationSet
) -> tuple[float, float] | None:
    """Interval of betas with t(beta) inside A, or None when empty.

    Endpoints may be infinite. The line beta -> gamma1 - beta * gamma2 meets
    each set variant in an interval because the sets are convex.
    """
    check_dimension(vset, fit.p)
    g1, g2 = fit.gamma1, fit.gamma2
    if isinstance(vset, Unconstrained):
        return (-np.inf, np.inf)
    if isinstance(vset, Box):
        lo, hi = -np.inf, np.inf
        for j in range(g1.shape[0]):
            if g2[j] == 0.0:
                if vset.lower[j] <= g1[j] <= vset.upper[j]:
                    continue
                return None
            a = (g1[j] - vset.upper[j]) / g2[j]
            b = (g1[j] - vset.lower[j]) / g2[j]
            lo = max(lo, min(a, b))
            hi = min(hi, max(a, b))
        return (lo, hi) if lo <= hi else None
    if isinstance(vset, L2Ball):
        a = float(g2 @ g2)
        b = float(g1 @ g2)
        c = float(g1 @ g1) - vset.tau**2
        if a == 0.0:
            return (-np.inf, np.inf) if c <= 0.0 else None
        disc = b * b - a * c
        if disc < 0.0:
            return None
        root = math.sqrt(disc)
        return ((b - root) / a, (b + root) / a)
    if isinstance(vset, Singleton):
        d = g1 - vset.point
        nrm2 = float(g2 @ g2)
        if nrm2 == 0.0:
            return (-np.inf, np.inf) if np.all(d == 0.0) else None
        beta = float(g2 @ d) / nrm2
        resid = d - beta * g2
        scale = 1.0 + float(np.linalg.norm(d)) + abs(beta) * float(np.linalg.norm(g2))
        if float(np.linalg.norm(resid)) <= 1e-12 * scale:
            return (beta, beta)
        return None
    raise TypeError(f"unknown violation set {type(vset).__name__}")


def pir_nonempty_batch(vset: ViolationSet, g1: np.ndarray, g2: np.ndarray) -> np.ndarray:
    """Vectorised nonemptiness of the partial identification region.

    g1 and g2 are (m, p) stacks of reduced-form coefficient columns, one row
    per dataset. Used to short-circuit per-dataset normalisers.
    """
    m, _ = g1.shape
    if isinstance(vset, Unconstrained):
        return np.ones(m, dtype=bool)
    if isinstance(vset, Box):
        lo = np.full(m, -np.inf)
        hi = np.full(m, np.inf)
        ok = np.ones(m, dtype=bool)
        for j in range(g1.shape[1]):
            gj = g2[:, j]
            nz = gj != 0.0
            with np.errstate(divide="ignore", invalid="ignore"):
                a = (g1[:, j] - vset.upper[j]) / gj
                b = (g1[:, j] - vset.lower[j]) / gj
            lo_j = np.minimum(a, b)
            hi_j = np.maximum(a, b)
            lo = np.where(nz, np.maximum(lo, lo_j), lo)
            hi = np.where(nz, np.minimum(hi, hi_j), hi)
            const_ok = (g1[:, j] >= vset.lower[j]) & (g1[:, j] <= vset.upper[j])
            ok &= nz | const_ok
        return ok & (lo <= hi)
    if isinstance(vset, L2Ball):
        a = np.einsum("mp,mp->m", g2, g2)
        b = np.einsum("mp,mp->m", g1, g2)
        c = np.einsum("mp,mp->m", g1, g1) - vset.tau**2
        disc = b * b - a * c
        return np.where(a == 0.0, c <= 0.0, disc >= 0.0)
    if isinstance(vset, Singleton):
        d = g1 - vset.point[None, :]
        nrm2 = np.einsum("mp,mp->m", g2, g2)
        with np.errstate(divide="ignore", invalid="ignore"):
            beta = np.einsum("mp,mp->m", g2, d) / nrm2
        resid = d - beta[:, None] * g2
        scale = 1.0 + np.linalg.norm(d, axis=1) + np.abs(beta) * np.sqrt(nrm2)
        hit = np.linalg.norm(resid, axis=1) <= 1e-12 * scale
        return np.where(nrm2 == 0.0, np.all(d == 0.0, axis=1), hit)
    raise TypeError(f"unknown violation set {type(vset).__name__}")


def golden_section_min(f, a: float, b: float, tol: float) -> tuple[float, float]:
    """Golden-section minimisation on [a, b]; returns the best point seen."""
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    best_x, best_f = (c, fc) if fc <= fd else (d, fd)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
        if fc < best_f:
            best_x, best_f = c, fc
        if fd < best_f:
            best_x, best_f = d, fd
    return best_x, best_f


def _pir_witness(pir: tuple[float, float], anchor: float) -> float:
    """A finite beta inside the partial identification interval."""
    lo, hi = pir
    if np.isinf(lo) and np.isinf(hi):
        return anchor
    if np.isinf(lo):
        return hi if hi < anchor else anchor if anchor <= hi else hi
    if np.isinf(hi):
        return lo if lo > anchor else anchor if anchor >= lo else lo
    return 0.5 * (lo + hi)


def build_curve(
    fit: ReducedFormFit, vset: ViolationSet, opts: GridOptions | None = None
) -> PossibilityCurve:
    """Evaluate, normalise, and package the possibility curve for one set.

    The symmetric grid starts at the anchor plus or minus a multiple of its
    standard error and doubles until the normalised possibility falls below
    the floor at both ends. Curves that provably cannot decay (finite tail
    limit of Q above the floor) come back flagged "unbounded" instead.
    """
    opts = opts or GridOptions()
    check_dimension(vset, fit.p)
    try:
        anchor, se = tsls_anchor(fit)
    except DegeneracyError:
        if isinstance(vset, Unconstrained):
            anchor, se = 0.0, 1.0
        else:
            raise
    half0 = max(opts.halfwidth_se * se, 1e-12 * (1.0 + abs(anchor)))

    if isinstance(vset, Unconstrained):
        pts = anchor + np.linspace(-half0, half0, opts.points)
        zeros = np.zeros(opts.points)
        return PossibilityCurve(
            grid=BetaGrid(points=pts, anchor=anchor),
            log_unnormalised=zeros,
            possibility=np.ones(opts.points),
            normaliser=0.0,
            normaliser_beta=anchor,
            flags=("unbounded",),
            fit=fit,
            vset=vset,
        )

    proj = Projector(vset, fit.gram)
    pir = partial_identification_interval(fit, vset)
    tail_q = float(fit.gamma2 @ fit.gram @ fit.gamma2) / fit.psi_hat[1, 1]
    log_floor = math.log(opts.floor)
    scale = max(1.0, abs(anchor), half0)

    half = half0
    flags: list[str] = []
    while True:
        pts = anchor + np.linspace(-half, half, opts.points)
        q = _q_many(fit, vset, pts, proj=proj)
        q_best = float(np.min(q))
        ends_below = (
            -0.5 * (q[0] - q_best) < log_floor and -0.5 * (q[-1] - q_best) < log_floor
        )
        if ends_below:
            break
        if -0.5 * (tail_q - q_best) >= log_floor or half > opts.cap_scale * scale:
            # Possibility does not decay; the interval is effectively unbounded.
            flags.append("unbounded")
            break
        half *= 2.0

    if pir is not None:
        normaliser = 0.0
        normaliser_beta = _pir_witness(pir, anchor)
    else:
        i0 = int(np.argmin(q))
        lo_b = pts[max(i0 - 1, 0)]
        hi_b = pts[min(i0 + 1, len(pts) - 1)]
        beta_star, q_star = golden_section_min(
            lambda b: float(_q_many(fit, vset, np.array([b]), proj=proj)[0]), lo_b, hi_b, 1e-10
        )
        if q_star <= q_best:
            normaliser_beta, q_min = beta_star, q_star
        else:
            normaliser_beta, q_min = float(pts[i0]), q_best
        normaliser = min(-0.5 * q_min, 0.0)

    # Guarantee the supremum is attained on the grid itself.
    if normaliser_beta not in pts:
        q_at = float(_q_many(fit, vset, np.array([normaliser_beta]), proj=proj)[0])
        pos = int(np.searchsorted(pts, normaliser_beta))
        pts = np.insert(pts, pos, normaliser_beta)
        q = np.insert(q, pos, q_at)

    log_unnorm = -0.5 * q
    normaliser = max(normaliser, float(np.max(log_unnorm)))
    possibility = np.exp(log_unnorm - normaliser)
    return PossibilityCurve(
        grid=BetaGrid(points=pts, anchor=anchor),
        log_unnormalised=log_unnorm,
        possibility=possibility,
        normaliser=normaliser,
        normaliser_beta=normaliser_beta,
        flags=tuple(flags),
        fit=fit,
        vset=vset,
    )


@dataclass(frozen=True)
class LevelSet:
    lo: float
    hi: float
    contiguous: bool
    unbounded: bool

    @property
    def width(self) -> float:
        return self.hi - self.lo


def _bisect_crossing(f, outside: float, inside: float, delta: float, tol: float) -> float:
    """Locate f == delta between a point below and a point at or above."""
    a, b = outside, inside
    while abs(b - a) > tol:
        mid = 0.5 * (a + b)
        if f(mid) >= delta:
            b = mid
        else:
            a = mid
    return 0.5 * (a + b)


def level_set(curve, delta: float) -> LevelSet:
    """Upper level set {beta : value >= delta}, reported as an interval.

    Non-contiguous sets are returned as their convex hull with
    ``contiguous=False``. Endpoints falling between grid points are refined
    by bisection when the curve supports exact evaluation, otherwise by
    linear interpolation.
    """
    pts = curve.grid.points
    vals = curve.values
    mask = vals >= delta
    if not np.any(mask):
        raise NumericalError(f"level set at delta={delta:g} is empty")
    idx = np.flatnonzero(mask)
    i0, i1 = int(idx[0]), int(idx[-1])
    contiguous = bool(np.all(mask[i0 : i1 + 1]))
    unbounded = i0 == 0 or i1 == len(pts) - 1 or "unbounded" in getattr(curve, "flags", ())
    evaluator = getattr(curve, "evaluator", None)
    tol = 1e-8 * max(1.0, abs(curve.grid.anchor), pts[-1] - pts[0])

    lo = pts[i0]
    if i0 > 0:
        if evaluator is not None:
            lo = _bisect_crossing(evaluator, pts[i0 - 1], pts[i0], delta, tol)
        elif vals[i0] > vals[i0 - 1]:
            frac = (delta - vals[i0 - 1]) / (vals[i0] - vals[i0 - 1])
            lo = pts[i0 - 1] + frac * (pts[i0] - pts[i0 - 1])
    hi = pts[i1]
    if i1 < len(pts) - 1:
        if evaluator is not None:
            hi = _bisect_crossing(evaluator, pts[i1 + 1], pts[i1], delta, tol)
        elif vals[i1] > vals[i1 + 1]:
            frac = (delta - vals[i1 + 1]) / (vals[i1] - vals[i1 + 1])
            hi = pts[i1 + 1] - frac * (pts[i1 + 1] - pts[i1])
    return LevelSet(lo=float(lo), hi=float(hi), contiguous=contiguous, unbounded=unbounded)


@dataclass(frozen=True)
class HypothesisBounds:
    """Lower and upper probability for a one-sided effect hypothesis."""

    lower: float
    upper: float
    conservative: bool


def _side_sup(pts, vals, mask, evaluator, lo_b, hi_b) -> float:
    sup = float(np.max(vals[mask])) if np.any(mask) else -np.inf
    if evaluator is not None and hi_b > lo_b:
        local = np.linspace(lo_b, hi_b, 48)
        sup = max(sup, max(evaluator(float(b)) for b in local))
    return sup


def hypothesis_bounds(curve, threshold: float, direction: str = "greater") -> HypothesisBounds:
    """Probability bounds for the hypothesis beta > threshold (or < threshold).

    The upper bound is the supremum of the curve over the hypothesis region;
    the lower bound is one minus the supremum over its complement. Regions
    beyond the grid contribute the nearest boundary value and mark the
    result conservative.
    """
    if direction not in ("greater", "less"):
        raise ConfigurationError("direction must be 'greater' or 'less'")
    pts = curve.grid.points
    vals = curve.values
    evaluator = getattr(curve, "evaluator", None)
    conservative = "unbounded" in getattr(curve, "flags", ())

    in_mask = pts > threshold if direction == "greater" else pts < threshold
    out_mask = ~in_mask

    # Local refinement inside the grid cell straddling the threshold.
    j = int(np.searchsorted(pts, threshold))
    left_cell = (pts[j - 1], min(threshold, pts[-1])) if 0 < j <= len(pts) - 1 else (0.0, -1.0)
    right_cell = (max(threshold, pts[0]), pts[j]) if 0 < j <= len(pts) - 1 else (0.0, -1.0)
    if direction == "greater":
        sup_in = _side_sup(pts, vals, in_mask, evaluator, *right_cell)
        sup_out = _side_sup(pts, vals, out_mask, evaluator, *left_cell)
    else:
        sup_in = _side_sup(pts, vals, in_mask, evaluator, *left_cell)
        sup_out = _side_sup(pts, vals, out_mask, evaluator, *right_cell)

    if not np.any(in_mask):
        sup_in = max(sup_in, float(vals[0] if threshold <= pts[0] else vals[-1]))
        conservative = True
    if not np.any(out_mask):
        sup_out = max(sup_out, float(vals[0] if threshold <= pts[0] else vals[-1]))
        conservative = True
    if evaluator is None and 0 < j < len(pts):
        # Without an evaluator, credit the interpolated threshold value to
        # both sides; suprema can only be underestimated otherwise.
        frac = (threshold - pts[j - 1]) / (pts[j] - pts[j - 1])
        at_c = float(vals[j - 1] + frac * (vals[j] - vals[j - 1]))
        sup_in = max(sup_in, at_c)
        sup_out = max(sup_out, at_c)

    sup_in = min(max(sup_in, 0.0), 1.0)
    sup_out = min(max(sup_out, 0.0), 1.0)
    return HypothesisBounds(lower=1.0 - sup_out, upper=sup_in, conservative=conservative)
