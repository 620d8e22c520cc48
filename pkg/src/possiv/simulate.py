"""Coverage simulation harness.

Generates datasets from a Gaussian structural model with configurable
instrument invalidity, runs each requested method (possibilistic intervals
with either recalibration, or classical two-stage least squares) on every
replication, and aggregates empirical coverage and mean interval width.

Replications are keyed by (seed, replication index), so reports are
identical for any worker count and any scheduling.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dataset import CanonicalData
from .errors import ConfigurationError, PossivError
from .posterior import GridOptions, build_curve, level_set, tsls_anchor
from .reduced_form import ReducedFormFit, fit_reduced_form
from .rng import TAG_SIMULATE, substream, substream_seed
from .validify import Chi2, MonteCarlo, ValidifyMethod, validify_chi2, validify_mc
from .violation import ViolationSet, format_violation, parse_violation

# Desk-scale defaults: full grid for the cheap recalibration, a coarser one
# for the Monte Carlo rows whose cost scales with grid size.
GRID_CHI2 = GridOptions(points=513)
GRID_MC = GridOptions(points=129)
DEFAULT_MC_SAMPLES = 500


@dataclass(frozen=True)
class DgpConfig:
    """Structural data-generating process: X = Z g2 + eta, Y = beta X + Z a + eps."""

    n: int
    p: int
    beta_true: float
    gamma2: np.ndarray
    alpha_true: np.ndarray
    rho: float
    seed: int = 0

    def __post_init__(self):
        gamma2 = np.atleast_1d(np.asarray(self.gamma2, dtype=float))
        alpha = np.atleast_1d(np.asarray(self.alpha_true, dtype=float))
        if gamma2.shape != (self.p,) or alpha.shape != (self.p,):
            raise ConfigurationError("gamma2 and alpha_true must have length p")
        if not abs(self.rho) < 1.0:
            raise ConfigurationError("error correlation rho must satisfy |rho| < 1")
        object.__setattr__(self, "gamma2", gamma2)
        object.__setattr__(self, "alpha_true", alpha)


def experiment1_config(alpha: float, seed: int = 0) -> DgpConfig:
    """Single standard-normal instrument, unit first stage, rho = 1/2."""
    return DgpConfig(
        n=100, p=1, beta_true=1.0, gamma2=np.array([1.0]),
        alpha_true=np.array([float(alpha)]), rho=0.5, seed=seed,
    )


def experiment2_config(s: int, seed: int = 0) -> DgpConfig:
    """Five standard-normal instruments of moderate strength; the first s
    carry a direct effect of 0.1."""
    if not 0 <= s <= 5:
        raise ConfigurationError("s must be between 0 and 5")
    alpha = np.zeros(5)
    alpha[:s] = 0.1
    return DgpConfig(
        n=100, p=5, beta_true=1.0, gamma2=np.full(5, 0.25),
        alpha_true=alpha, rho=0.5, seed=seed,
    )


def generate_dataset(cfg: DgpConfig, rng: np.random.Generator) -> CanonicalData:
    """Draw instruments and correlated Gaussian errors, centre Y and X."""
    z = rng.standard_normal((cfg.n, cfg.p))
    chol = np.linalg.cholesky(np.array([[1.0, cfg.rho], [cfg.rho, 1.0]]))
    errs = rng.standard_normal((cfg.n, 2)) @ chol.T  # columns (eps, eta)
    x = z @ cfg.gamma2 + errs[:, 1]
    y = cfg.beta_true * x + z @ cfg.alpha_true + errs[:, 0]
    y = y - y.mean()
    x = x - x.mean()
    return CanonicalData(w=np.column_stack([y, x]), z=z)


@dataclass(frozen=True)
class TslsResult:
    estimate: float
    se: float
    ci95: tuple[float, float]


def tsls(data: CanonicalData) -> TslsResult:
    """Classical two-stage least squares with homoskedastic 1/n variance."""
    fit = fit_reduced_form(data)
    est, se = tsls_anchor(fit)
    return TslsResult(estimate=est, se=se, ci95=(est - 1.96 * se, est + 1.96 * se))


@dataclass(frozen=True)
class MethodSpec:
    """One harness method: TSLS, or a violation set plus a recalibration."""

    label: str
    kind: str  # "tsls" or "possibilistic"
    vset: ViolationSet | None = None
    method: ValidifyMethod | None = None
    grid: GridOptions | None = None

    def __post_init__(self):
        if self.kind not in ("tsls", "possibilistic"):
            raise ConfigurationError(f"unknown method kind {self.kind!r}")
        if self.kind == "possibilistic" and (self.vset is None or self.method is None):
            raise ConfigurationError(
                "a possibilistic method needs a violation set and a validify method"
            )

    def grid_options(self) -> GridOptions:
        if self.grid is not None:
            return self.grid
        return GRID_MC if isinstance(self.method, MonteCarlo) else GRID_CHI2


def parse_method_spec(text: str, p: int, mc_samples: int = DEFAULT_MC_SAMPLES) -> MethodSpec:
    """Parse harness method syntax: ``tsls``, ``<violation>+chi2``,
    ``<violation>+mc`` or ``<violation>+mc:M``."""
    text = text.strip()
    if text == "tsls":
        return MethodSpec(label="tsls", kind="tsls")
    body, sep, val = text.rpartition("+")
    if not sep:
        raise ConfigurationError(
            f"method spec {text!r} must be 'tsls' or '<violation>+chi2|mc[:M]'"
        )
    vset = parse_violation(body, p)
    if val == "chi2":
        method: ValidifyMethod = Chi2()
    elif val == "mc" or val.startswith("mc:"):
        m = mc_samples if val == "mc" else int(val.partition(":")[2])
        method = MonteCarlo(m=m)
    else:
        raise ConfigurationError(f"unknown validify method {val!r} in {text!r}")
    label = f"{format_violation(vset)}+{'chi2' if isinstance(method, Chi2) else 'mc'}"
    return MethodSpec(label=label, kind="possibilistic", vset=vset, method=method)


@dataclass(frozen=True)
class CoverageRow:
    method: str
    coverage: float
    mean_width: float
    replications: int
    errors: int


@dataclass(frozen=True)
class CoverageReport:
    rows: tuple[CoverageRow, ...]
    reps: int
    seed: int
    delta: float = 0.05


def _run_one_rep(
    cfg: DgpConfig, methods: tuple[MethodSpec, ...], seed: int, rep: int, delta: float
) -> list[tuple[bool, float, bool]]:
    """(covered, width, errored) per method for one replication."""
    rng = substream(seed, TAG_SIMULATE, rep)
    data = generate_dataset(cfg, rng)
    out: list[tuple[bool, float, bool]] = []
    fit: ReducedFormFit | None = None
    for mi, spec in enumerate(methods):
        try:
            if spec.kind == "tsls":
                res = tsls(data)
                lo, hi = res.ci95
            else:
                if fit is None:
                    fit = fit_reduced_form(data)
                curve = build_curve(fit, spec.vset, spec.grid_options())
                if isinstance(spec.method, Chi2):
                    vc = validify_chi2(curve)
                else:
                    mc_seed = substream_seed(seed, rep, mi)
                    vc = validify_mc(fit, spec.vset, curve, data.z, spec.method.m, mc_seed)
                ls = level_set(vc, delta)
                lo, hi = ls.lo, ls.hi
            out.append((bool(lo <= cfg.beta_true <= hi), float(hi - lo), False))
        except PossivError:
            out.append((False, 0.0, True))
    return out


def _run_chunk(args) -> list[list[tuple[bool, float, bool]]]:
    cfg, methods, seed, lo, hi, delta = args
    return [_run_one_rep(cfg, methods, seed, rep, delta) for rep in range(lo, hi)]


def run_experiment(
    cfg: DgpConfig,
    methods: list[MethodSpec] | tuple[MethodSpec, ...],
    reps: int,
    seed: int,
    jobs: int | None = None,
    delta: float = 0.05,
) -> CoverageReport:
    """Run the replication study and aggregate per-method coverage.

    Replications that raise a library error for a method are excluded from
    that method's coverage denominator and counted in its error column.
    """
    if reps < 1:
        raise ConfigurationError("reps must be >= 1")
    methods = tuple(methods)
    if not methods:
        raise ConfigurationError("at least one method is required")
    if jobs is None:
        jobs = min(os.cpu_count() or 1, reps)
    jobs = max(1, jobs)

    if jobs == 1:
        results = [_run_one_rep(cfg, methods, seed, rep, delta) for rep in range(reps)]
    else:
        bounds = np.linspace(0, reps, min(4 * jobs, reps) + 1).astype(int)
        chunks = [
            (cfg, methods, seed, int(lo), int(hi), delta)
            for lo, hi in zip(bounds[:-1], bounds[1:])
            if hi > lo
        ]
        results = []
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for part in pool.map(_run_chunk, chunks):
                results.extend(part)

    rows = []
    for mi, spec in enumerate(methods):
        per = [r[mi] for r in results]
        errors = sum(1 for c, w, e in per if e)
        good = [(c, w) for c, w, e in per if not e]
        n_good = len(good)
        coverage = sum(1 for c, _ in good if c) / n_good if n_good else float("nan")
        width = sum(w for _, w in good) / n_good if n_good else float("nan")
        rows.append(
            CoverageRow(
                method=spec.label,
                coverage=coverage,
                mean_width=width,
                replications=n_good,
                errors=errors,
            )
        )
    return CoverageReport(rows=tuple(rows), reps=reps, seed=seed, delta=delta)
