"""Tolerated violation sets and metric projection onto them.

A violation set A collects the direct instrument effects the analyst is
willing to entertain. The key operation is the projection of a point onto A
with respect to the quadratic metric induced by the Gram matrix Z'Z:

    minimise (a - t)' G (a - t)  subject to  a in A.

The objective is strictly convex, so the minimiser is unique. Boxes are
solved by cyclic coordinate descent with exact clipped one-dimensional
updates (plain clipping when G is diagonal); balls reduce to a ridge-type
problem whose multiplier is found by bisection. Batched variants of both
solvers serve grid and Monte Carlo evaluation, and agree with the scalar
entry points to solver tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ConfigurationError, NumericalError

# Coordinate descent: per-sweep movement threshold factor and sweep cap.
CD_TOL = 1e-12
CD_MAX_SWEEPS = 10_000
# Ball projection: boundary tolerance factor, bracket doubling cap.
BALL_TOL = 1e-10
BALL_MAX_DOUBLINGS = 200
# Off-diagonal mass below this relative level lets a box projection clip.
DIAG_RTOL = 1e-12


def _vec(v, name: str) -> np.ndarray:
    out = np.atleast_1d(np.asarray(v, dtype=float))
    if out.ndim != 1:
        raise ConfigurationError(f"{name} must be a vector")
    return out


@dataclass(frozen=True, eq=False)
class Singleton:
    """A single tolerated value, typically the zero vector of exact validity."""

    point: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point", _vec(self.point, "point"))

    def __eq__(self, other):
        return isinstance(other, Singleton) and np.array_equal(self.point, other.point)

    def __hash__(self):
        return hash(("singleton", self.point.tobytes()))


@dataclass(frozen=True, eq=False)
class Box:
    """Componentwise bounds lower <= alpha <= upper; lower == upper pins a coordinate."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = _vec(self.lower, "lower")
        upper = _vec(self.upper, "upper")
        if lower.shape != upper.shape:
            raise ConfigurationError("box bounds must have equal length")
        if np.any(lower > upper):
            raise ConfigurationError("box has lower > upper")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    def __eq__(self, other):
        return (
            isinstance(other, Box)
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )

    def __hash__(self):
        return hash(("box", self.lower.tobytes(), self.upper.tobytes()))


@dataclass(frozen=True)
class L2Ball:
    """Euclidean ball of radius tau: an overall invalidity budget."""

    tau: float

    def __post_init__(self):
        if not np.isfinite(self.tau) or self.tau < 0.0:
            raise ConfigurationError("ball radius tau must be a nonnegative real")
        object.__setattr__(self, "tau", float(self.tau))


@dataclass(frozen=True)
class Unconstrained:
    """No restriction at all; yields the uninformative flat possibility."""


ViolationSet = Union[Singleton, Box, L2Ball, Unconstrained]


def set_dimension(vset: ViolationSet) -> int | None:
    """Coordinate dimension pinned by the set, or None when any fits."""
    if isinstance(vset, Singleton):
        return vset.point.shape[0]
    if isinstance(vset, Box):
        return vset.lower.shape[0]
    return None


def check_dimension(vset: ViolationSet, p: int) -> None:
    """Raise when a set pins a dimension that disagrees with the data."""
    d = set_dimension(vset)
    if d is not None and d != p:
        raise ConfigurationError(
            f"violation set is {d}-dimensional but the target has {p} coordinates"
        )


def contains(vset: ViolationSet, point: np.ndarray, slack: float = 0.0) -> bool:
    """Membership test, optionally relaxed by an absolute slack."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    if isinstance(vset, Unconstrained):
        return True
    if isinstance(vset, Singleton):
        return bool(np.all(np.abs(point - vset.point) <= slack))
    if isinstance(vset, Box):
        return bool(np.all(point >= vset.lower - slack) and np.all(point <= vset.upper + slack))
    if isinstance(vset, L2Ball):
        return bool(np.linalg.norm(point) <= vset.tau + slack)
    raise TypeError(f"unknown violation set {type(vset).__name__}")


@dataclass(frozen=True)
class ProjectionResult:
    """Projection output with active-set diagnostics.

    ``interior`` records whether the input point itself was in the set; for
    boxes the per-coordinate active bounds are flagged, for balls the
    Lagrange multiplier of the binding norm constraint is reported.
    """

    alpha_hat: np.ndarray
    sq_distance: float
    interior: bool
    active_lower: np.ndarray | None = None
    active_upper: np.ndarray | None = None
    lam: float | None = None


def _sq_dist(alpha: np.ndarray, t: np.ndarray, gram: np.ndarray) -> float:
    d = alpha - t
    return max(float(d @ gram @ d), 0.0)


def _is_effectively_diagonal(gram: np.ndarray) -> bool:
    if gram.shape[0] == 1:
        return True
    off = gram - np.diag(np.diag(gram))
    return float(np.max(np.abs(off))) <= DIAG_RTOL * float(np.max(np.abs(np.diag(gram))))


def project_box(lower, upper, t, gram) -> ProjectionResult:
    """Box-constrained projection in the metric of ``gram``.

    Diagonal metrics clip componentwise; otherwise cyclic coordinate descent
    with exact clipped updates runs until the largest coordinate move in a
    sweep falls below CD_TOL * (1 + |t|_inf), or the sweep cap trips.
    """
    box = Box(lower=lower, upper=upper)
    t = _vec(t, "t")
    gram = np.asarray(gram, dtype=float)
    check_dimension(box, t.shape[0])
    if _is_effectively_diagonal(gram):
        alpha = np.clip(t, box.lower, box.upper)
    else:
        alpha = _cd_box(box.lower, box.upper, t[None, :], gram)[0]
    active_lower = alpha <= box.lower
    active_upper = alpha >= box.upper
    inside = bool(np.all(t >= box.lower) and np.all(t <= box.upper))
    return ProjectionResult(
        alpha_hat=alpha,
        sq_distance=_sq_dist(alpha, t, gram),
        interior=inside,
        active_lower=active_lower,
        active_upper=active_upper,
    )


def project_l2ball(tau, t, gram) -> ProjectionResult:
    """Projection onto the ball |alpha|_2 <= tau in the metric of ``gram``.

    Interior points pass through. Otherwise the minimiser is
    (gram + lam I)^{-1} gram t for the unique lam > 0 that puts the solution
    on the boundary |alpha|_2 = tau, found by doubling then bisection.
    """
    tau = L2Ball(tau=tau).tau  # validates the radius
    t = _vec(t, "t")
    gram = np.asarray(gram, dtype=float)
    if np.linalg.norm(t) <= tau:
        return ProjectionResult(alpha_hat=t.copy(), sq_distance=0.0, interior=True, lam=0.0)
    if tau == 0.0:
        alpha = np.zeros_like(t)
        return ProjectionResult(
            alpha_hat=alpha, sq_distance=_sq_dist(alpha, t, gram), interior=False, lam=np.inf
        )
    eigvals, eigvecs = np.linalg.eigh(gram)
    coords = eigvecs.T @ t

    def norm_at(lam: float) -> float:
        return float(np.linalg.norm(eigvals / (eigvals + lam) * coords))

    lo = 0.0
    hi = float(np.trace(gram)) / gram.shape[0]
    for _ in range(BALL_MAX_DOUBLINGS):
        if norm_at(hi) < tau:
            break
        lo = hi
        hi *= 2.0
    else:
        raise NumericalError(f"ball projection bracket did not close; |alpha({hi:g})| >= {tau:g}")
    tol = BALL_TOL * (1.0 + tau)
    lam = 0.5 * (lo + hi)
    for _ in range(500):
        lam = 0.5 * (lo + hi)
        gap = norm_at(lam) - tau
        if abs(gap) <= tol:
            break
        if gap > 0.0:
            lo = lam
        else:
            hi = lam
    else:
        raise NumericalError(f"ball projection bisection stalled; residual {gap:g}")
    alpha = eigvecs @ (eigvals / (eigvals + lam) * coords)
    return ProjectionResult(
        alpha_hat=alpha, sq_distance=_sq_dist(alpha, t, gram), interior=False, lam=lam
    )


def project(vset: ViolationSet, t, gram) -> ProjectionResult:
    """Dispatch the metric projection over the violation-set variants."""
    t = _vec(t, "t")
    gram = np.asarray(gram, dtype=float)
    check_dimension(vset, t.shape[0])
    if isinstance(vset, Unconstrained):
        return ProjectionResult(alpha_hat=t.copy(), sq_distance=0.0, interior=True)
    if isinstance(vset, Singleton):
        alpha = vset.point.copy()
        return ProjectionResult(
            alpha_hat=alpha,
            sq_distance=_sq_dist(alpha, t, gram),
            interior=bool(np.array_equal(t, vset.point)),
        )
    if isinstance(vset, Box):
        return project_box(vset.lower, vset.upper, t, gram)
    if isinstance(vset, L2Ball):
        return project_l2ball(vset.tau, t, gram)
    raise TypeError(f"unknown violation set {type(vset).__name__}")


# ---------------------------------------------------------------------------
# Batched solvers. These evaluate many projections against one Gram matrix
# (grid sweeps, Monte Carlo replicates) and must agree with the scalar entry
# points above; tests enforce the agreement.


def _cd_box(
    lower: np.ndarray,
    upper: np.ndarray,
    targets: np.ndarray,
    gram: np.ndarray,
    start: np.ndarray | None = None,
) -> np.ndarray:
    """Cyclic coordinate descent on a batch of box projections.

    targets is (m, p); returns the (m, p) minimisers. All rows share the
    bounds and the metric. A feasible warm start cuts the sweep count when
    projecting a slowly moving family of targets.
    """
    m, p = targets.shape
    if start is None:
        alpha = np.minimum(np.maximum(targets, lower), upper)
    else:
        alpha = np.minimum(np.maximum(start, lower), upper)
    grad = (alpha - targets) @ gram  # (m, p), gradient/2
    tol = CD_TOL * (1.0 + np.max(np.abs(targets), axis=1))  # per row
    diag = np.diag(gram)
    rows = [np.ascontiguousarray(gram[i]) for i in range(p)]
    for _ in range(CD_MAX_SWEEPS):
        max_move = np.zeros(m)
        for i in range(p):
            ai = alpha[:, i]
            ti = targets[:, i]
            new = ti - (grad[:, i] - diag[i] * (ai - ti)) / diag[i]
            np.minimum(np.maximum(new, lower[i], out=new), upper[i], out=new)
            move = new - ai
            alpha[:, i] = new
            grad += move[:, None] * rows[i]
            np.maximum(max_move, np.abs(move), out=max_move)
        if np.all(max_move <= tol):
            return alpha
    worst = float(np.max(max_move - tol))
    raise NumericalError(f"box projection exceeded {CD_MAX_SWEEPS} sweeps (residual {worst:g})")


def _ball_batch(
    tau: float,
    targets: np.ndarray,
    gram: np.ndarray,
    eig: tuple[np.ndarray, np.ndarray] | None = None,
) -> np.ndarray:
    """Vectorised ball projection; rows already inside pass through."""
    eigvals, eigvecs = np.linalg.eigh(gram) if eig is None else eig
    m, p = targets.shape
    alpha = targets.copy()
    norms = np.linalg.norm(targets, axis=1)
    out = norms > tau
    if tau == 0.0:
        alpha[out] = 0.0
        return alpha
    if not np.any(out):
        return alpha
    coords = targets[out] @ eigvecs  # (k, p) spectral coordinates
    k = coords.shape[0]

    def norms_at(lam: np.ndarray) -> np.ndarray:
        w = eigvals[None, :] / (eigvals[None, :] + lam[:, None])
        return np.linalg.norm(w * coords, axis=1)

    lo = np.zeros(k)
    hi = np.full(k, float(np.trace(gram)) / p)
    for _ in range(BALL_MAX_DOUBLINGS):
        open_rows = norms_at(hi) >= tau
        if not np.any(open_rows):
            break
        lo[open_rows] = hi[open_rows]
        hi[open_rows] *= 2.0
    else:
        raise NumericalError("ball projection bracket did not close for a batch row")
    tol = BALL_TOL * (1.0 + tau)
    for _ in range(500):
        lam = 0.5 * (lo + hi)
        gap = norms_at(lam) - tau
        if np.all(np.abs(gap) <= tol):
            break
        above = gap > 0.0
        lo[above] = lam[above]
        hi[~above] = lam[~above]
    else:
        raise NumericalError("ball projection bisection stalled for a batch row")
    w = eigvals[None, :] / (eigvals[None, :] + lam[:, None])
    alpha[out] = (w * coords) @ eigvecs.T
    return alpha


class Projector:
    """Reusable projection context for one (set, metric) pair.

    Caches the diagonality test and, for balls, the eigendecomposition, so
    that tight loops (grid sweeps, golden-section iterations) do not repeat
    them. ``batch`` accepts a feasible warm start for box sets.
    """

    def __init__(self, vset: ViolationSet, gram: np.ndarray):
        self.vset = vset
        self.gram = np.asarray(gram, dtype=float)
        self.diagonal = _is_effectively_diagonal(self.gram)
        self.eig = np.linalg.eigh(self.gram) if isinstance(vset, L2Ball) else None

    def batch(
        self, targets: np.ndarray, start: np.ndarray | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Project each row of ``targets``; returns (alpha, sq_distance)."""
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        check_dimension(self.vset, targets.shape[1])
        vset = self.vset
        if isinstance(vset, Unconstrained):
            return targets.copy(), np.zeros(targets.shape[0])
        if isinstance(vset, Singleton):
            alpha = np.broadcast_to(vset.point, targets.shape)
        elif isinstance(vset, Box):
            if self.diagonal:
                alpha = np.minimum(np.maximum(targets, vset.lower), vset.upper)
            else:
                alpha = _cd_box(vset.lower, vset.upper, targets, self.gram, start=start)
        elif isinstance(vset, L2Ball):
            alpha = _ball_batch(vset.tau, targets, self.gram, eig=self.eig)
        else:
            raise TypeError(f"unknown violation set {type(vset).__name__}")
        diff = alpha - targets
        sq = np.maximum(((diff @ self.gram) * diff).sum(axis=1), 0.0)
        return alpha, sq


def project_batch(
    vset: ViolationSet,
    targets: np.ndarray,
    gram: np.ndarray,
    eig: tuple[np.ndarray, np.ndarray] | None = None,
    start: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One-shot batched projection; see Projector for loop-friendly reuse."""
    proj = Projector(vset, gram)
    if eig is not None:
        proj.eig = eig
    return proj.batch(targets, start=start)


def parse_violation(text: str, p: int) -> ViolationSet:
    """Parse the command-line violation syntax.

    Accepted forms: ``none``, ``singleton:c``, ``box:lo:hi`` (same bounds for
    every coordinate), ``box:[l1,u1;l2,u2;...]`` (per coordinate), ``l2:tau``.
    """
    text = text.strip()
    if text in ("none", "unconstrained"):
        return Unconstrained()
    kind, sep, rest = text.partition(":")
    if not sep:
        raise ConfigurationError(f"malformed violation spec {text!r}")
    try:
        if kind == "singleton":
            vals = [float(v) for v in rest.split(",")]
            point = np.full(p, vals[0]) if len(vals) == 1 else np.array(vals)
            if point.shape[0] != p:
                raise ConfigurationError(f"singleton needs 1 or {p} values, got {len(vals)}")
            return Singleton(point=point)
        if kind == "l2":
            return L2Ball(tau=float(rest))
        if kind == "box":
            if rest.startswith("["):
                if not rest.endswith("]"):
                    raise ConfigurationError(f"unterminated box spec {text!r}")
                pairs = [pair.split(",") for pair in rest[1:-1].split(";")]
                if len(pairs) != p or any(len(pair) != 2 for pair in pairs):
                    raise ConfigurationError(f"box needs {p} 'lo,hi' pairs: {text!r}")
                lower = np.array([float(a) for a, _ in pairs])
                upper = np.array([float(b) for _, b in pairs])
            else:
                lo_s, sep2, hi_s = rest.partition(":")
                if not sep2:
                    raise ConfigurationError(f"box spec needs two bounds: {text!r}")
                lower = np.full(p, float(lo_s))
                upper = np.full(p, float(hi_s))
            return Box(lower=lower, upper=upper)
    except ValueError:
        raise ConfigurationError(f"cannot parse numbers in violation spec {text!r}") from None
    raise ConfigurationError(f"unknown violation kind {kind!r}")


def format_violation(vset: ViolationSet) -> str:
    """Inverse of parse_violation, for report labels."""
    if isinstance(vset, Unconstrained):
        return "none"
    if isinstance(vset, Singleton):
        return "singleton:" + ",".join(f"{v:g}" for v in vset.point)
    if isinstance(vset, L2Ball):
        return f"l2:{vset.tau:g}"
    if isinstance(vset, Box):
        if np.all(vset.lower == vset.lower[0]) and np.all(vset.upper == vset.upper[0]):
            return f"box:{vset.lower[0]:g}:{vset.upper[0]:g}"
        body = ";".join(f"{a:g},{b:g}" for a, b in zip(vset.lower, vset.upper))
        return f"box:[{body}]"
    raise TypeError(f"unknown violation set {type(vset).__name__}")
