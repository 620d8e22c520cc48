"""Data ingestion and canonicalisation.

Observational data enters as an outcome vector, a treatment vector, an
instrument matrix and (optionally) exogenous covariates. Downstream
estimators consume the canonical form: the stacked response matrix
``W = [y x]`` and the instrument matrix ``Z``, both with any covariate
effects projected out, together with the Gram matrix ``Z'Z``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError, ParseError

# A matrix is treated as rank deficient when its smallest singular value
# falls below RANK_RTOL times its largest.
RANK_RTOL = 1e-10


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


def _check_finite(a: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(a)):
        raise DataError(f"{name} contains non-finite entries")


def _full_column_rank(a: np.ndarray) -> bool:
    if a.size == 0:
        return True
    s = np.linalg.svd(a, compute_uv=False)
    return s[-1] > RANK_RTOL * s[0]


@dataclass(frozen=True)
class IvDataset:
    """Raw inputs: outcome y, treatment x, instruments z, optional covariates u."""

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray
    u: np.ndarray | None = None

    def __post_init__(self):
        y = _freeze(np.atleast_1d(self.y))
        x = _freeze(np.atleast_1d(self.x))
        z = _freeze(np.atleast_2d(self.z).reshape(len(y), -1) if np.ndim(self.z) == 1 else self.z)
        u = None if self.u is None else _freeze(self.u)
        for name, arr in (("y", y), ("x", x), ("z", z)) + ((("u", u),) if u is not None else ()):
            _check_finite(arr, name)
        n = y.shape[0]
        if x.shape[0] != n or z.shape[0] != n or (u is not None and u.shape[0] != n):
            raise DataError("y, x, z (and u) must have the same number of rows")
        q = 0 if u is None else u.shape[1]
        if n < z.shape[1] + q + 2:
            raise DataError(
                f"need at least p + q + 2 = {z.shape[1] + q + 2} observations, got {n}"
            )
        if not _full_column_rank(z):
            raise DataError("instrument matrix z is rank deficient")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "u", u)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.z.shape[1]


@dataclass(frozen=True)
class CanonicalData:
    """Projected/centred form consumed by the estimators: W = [y x], Z, Z'Z."""

    w: np.ndarray
    z: np.ndarray
    gram: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        w = _freeze(self.w)
        z = _freeze(self.z)
        if w.ndim != 2 or w.shape[1] != 2:
            raise DataError("w must be an n x 2 matrix of stacked [y x]")
        if z.ndim != 2 or z.shape[0] != w.shape[0]:
            raise DataError("z must have the same number of rows as w")
        gram = z.T @ z
        gram = _freeze(0.5 * (gram + gram.T))
        if self.gram is not None:
            rel = np.linalg.norm(np.asarray(self.gram) - gram) / max(np.linalg.norm(gram), 1.0)
            if rel > 1e-10:
                raise DataError("supplied gram matrix is inconsistent with z")
        if np.linalg.eigvalsh(gram)[0] <= 0.0:
            raise DataError("gram matrix z'z is not positive definite")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "gram", gram)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def p(self) -> int:
        return self.z.shape[1]


def load_csv(
    path,
    outcome_col: str,
    treatment_col: str,
    instrument_cols: list[str],
    covariate_cols: list[str] | None = None,
    add_intercept: bool = False,
) -> IvDataset:
    """Read a headed CSV and map named columns onto dataset roles.

    Cells must all parse as finite reals; the first offending cell is
    reported with its row and column. ``add_intercept`` appends a column of
    ones to the covariate block.
    """
    covariate_cols = list(covariate_cols or [])
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        wanted = [outcome_col, treatment_col, *instrument_cols, *covariate_cols]
        for name in wanted:
            if name not in header:
                raise ConfigurationError(f"column '{name}' not found in {path}")
        idx = {name: header.index(name) for name in wanted}
        rows: list[list[float]] = []
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            parsed = []
            for name in wanted:
                cell = row[idx[name]] if idx[name] < len(row) else ""
                try:
                    val = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}: row {row_no}, column '{name}': cannot parse {cell!r}"
                    ) from None
                if not np.isfinite(val):
                    raise ParseError(f"{path}: row {row_no}, column '{name}': non-finite value")
                parsed.append(val)
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: no data rows")
    data = np.array(rows, dtype=float)
    y = data[:, 0]
    x = data[:, 1]
    z = data[:, 2 : 2 + len(instrument_cols)]
    u = None
    ncov = len(covariate_cols)
    if ncov:
        u = data[:, 2 + len(instrument_cols) : 2 + len(instrument_cols) + ncov]
    if add_intercept:
        ones = np.ones((data.shape[0], 1))
        u = ones if u is None else np.hstack([u, ones])
    return IvDataset(y=y, x=x, z=z, u=u)


def _residualise(mat: np.ndarray, u: np.ndarray) -> np.ndarray:
    # Least-squares residuals of each column of mat on u; avoids forming the
    # n x n annihilator matrix.
    coef, *_ = np.linalg.lstsq(u, mat, rcond=None)
    return mat - u @ coef


def project_out_covariates(data: IvDataset) -> CanonicalData:
    """Project covariate effects out of [y x] and z; the no-covariate case passes through."""
    w = np.column_stack([data.y, data.x])
    if data.u is None:
        return CanonicalData(w=w, z=data.z)
    if not _full_column_rank(data.u):
        raise DataError("covariate matrix u is rank deficient")
    return CanonicalData(w=_residualise(w, data.u), z=_residualise(data.z, data.u))


def standardise_instruments(data: CanonicalData) -> CanonicalData:
    """Rescale each instrument column to unit sample standard deviation.

    Means are left untouched; centring belongs to the covariate projection.
    """
    sd = np.std(data.z, axis=0, ddof=1)
    bad = np.flatnonzero(sd <= 0.0)
    if bad.size:
        raise DataError(f"instrument column {bad[0]} has zero variance")
    return CanonicalData(w=data.w, z=data.z / sd)
