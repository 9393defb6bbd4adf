"""Functional preprocessing of the exposure panel.

Covariance smoothing, principal-component basis extraction, score
projection and optional row-wise spline pre-smoothing.  Exposures are
column-centred before any covariance or score computation; no scaling is
applied.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import BSpline

from .errors import (
    DataError,
    DegenerateCovarianceError,
    InsufficientDataError,
    ParameterError,
)

__all__ = [
    "ExposureMatrix",
    "BasisSet",
    "smooth_covariance",
    "compute_pc_basis",
    "project_scores",
    "presmooth_exposures",
    "build_basis",
    "read_exposures_csv",
]

N_PENALTIES = 20
EIG_CLAMP_TOL = 1e-10


@dataclass(frozen=True)
class ExposureMatrix:
    """``n x T`` exposure panel on a regular, strictly increasing time grid."""

    values: np.ndarray
    time_grid: np.ndarray | None = None
    ids: tuple | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError("exposure values must be a 2-d array")
        n, T = values.shape
        grid = (np.arange(1, T + 1, dtype=float) if self.time_grid is None
                else np.asarray(self.time_grid, dtype=float))
        if grid.shape != (T,):
            raise DataError(f"time grid has {grid.size} points but exposures have {T} columns")
        if n < 1 or T < 2:
            raise DataError("need at least one row and two time points")
        if not np.all(np.isfinite(values)):
            raise DataError("exposure matrix contains missing or non-finite entries")
        if np.any(np.diff(grid) <= 0):
            raise DataError("time grid must be strictly increasing")
        values.setflags(write=False)
        grid.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "time_grid", grid)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    @property
    def column_means(self) -> np.ndarray:
        return self.values.mean(axis=0)

    def centered(self) -> np.ndarray:
        return self.values - self.column_means


@dataclass(frozen=True)
class BasisSet:
    """Orthonormal ``T x K`` basis with eigenvalue bookkeeping.

    ``total_variance`` is the sum of all (clamped) eigenvalues of the
    covariance the basis came from, so ``variance_explained`` can be
    recomputed.  ``center`` holds the exposure column means when the basis
    was built from data.
    """

    psi: np.ndarray
    eigenvalues: np.ndarray
    variance_explained: float
    total_variance: float
    smoothing_record: dict = field(default_factory=dict)
    center: np.ndarray | None = None
    time_grid: np.ndarray | None = None

    @property
    def T(self) -> int:
        return self.psi.shape[0]

    @property
    def grid(self) -> np.ndarray:
        """Time points of the rows of ``psi`` (``1..T`` when not recorded)."""
        if self.time_grid is None:
            return np.arange(1.0, self.T + 1)
        return np.asarray(self.time_grid, dtype=float)

    @property
    def K(self) -> int:
        return self.psi.shape[1]

    @property
    def column_sums(self) -> np.ndarray:
        """``Psi^T 1``; ``column_sums @ theta`` is the grid sum of ``w = Psi theta``."""
        return self.psi.sum(axis=0)

    def weight(self, theta) -> np.ndarray:
        return self.psi @ np.asarray(theta, dtype=float)

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "K": self.K,
            "psi": self.psi.ravel(order="C").tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "variance_explained": self.variance_explained,
            "total_variance": self.total_variance,
            "smoothing_record": self.smoothing_record,
            "center": None if self.center is None else self.center.tolist(),
            "time_grid": None if self.time_grid is None else np.asarray(self.time_grid).tolist(),
        }

    def to_json(self, path=None, indent=2) -> str:
        text = json.dumps(self.to_dict(), indent=indent)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "BasisSet":
        psi = np.asarray(d["psi"], dtype=float).reshape(d["T"], d["K"])
        center = d.get("center")
        grid = d.get("time_grid")
        return cls(
            psi=psi,
            eigenvalues=np.asarray(d["eigenvalues"], dtype=float),
            variance_explained=float(d["variance_explained"]),
            total_variance=float(d["total_variance"]),
            smoothing_record=dict(d.get("smoothing_record", {})),
            center=None if center is None else np.asarray(center, dtype=float),
            time_grid=None if grid is None else np.asarray(grid, dtype=float),
        )

    @classmethod
    def from_json(cls, text: str) -> "BasisSet":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "BasisSet":
        return cls.from_json(Path(path).read_text())


def _as_exposures(X) -> ExposureMatrix:
    if isinstance(X, ExposureMatrix):
        return X
    return ExposureMatrix(np.asarray(X, dtype=float), None)


def _bspline_basis(grid, n_interior, degree=3):
    """Cubic B-spline design matrix on ``grid`` and its second-derivative penalty.

    Interior knots are equally spaced between the grid end points.  The
    penalty is the exact Gram matrix of the basis second derivatives
    (piecewise linear, so two-point Gauss-Legendre per knot interval is exact).
    """
    lo, hi = float(grid[0]), float(grid[-1])
    interior = np.linspace(lo, hi, n_interior + 2)[1:-1]
    knots = np.r_[[lo] * (degree + 1), interior, [hi] * (degree + 1)]
    m = len(knots) - degree - 1
    B = BSpline.design_matrix(np.clip(grid, lo, hi), knots, degree).toarray()

    d2 = BSpline(knots, np.eye(m), degree).derivative(2)
    breaks = np.unique(knots)
    gl_x, gl_w = np.polynomial.legendre.leggauss(2)
    omega = np.zeros((m, m))
    for a, b in zip(breaks[:-1], breaks[1:]):
        half = 0.5 * (b - a)
        pts = 0.5 * (a + b) + half * gl_x
        vals = d2(pts)
        omega += (vals.T * (gl_w * half)) @ vals
    return B, omega


def _hat_matrix(B, omega, lam):
    lhs = B.T @ B + lam * omega
    return B @ np.linalg.solve(lhs, B.T)


def smooth_covariance(X, knots: int) -> np.ndarray:
    """Sandwich-smoothed sample covariance of the column-centred exposures.

    The raw covariance ``C`` is smoothed as ``H C H^T`` where ``H`` is the hat
    matrix of a penalized cubic regression spline with ``knots`` equally
    spaced interior knots.  The penalty weight is picked by generalized
    cross-validation over a fixed log-spaced grid of 20 values; the choice is
    reported through :func:`smooth_covariance_details`.
    """
    return smooth_covariance_details(X, knots)[0]


def smooth_covariance_details(X, knots: int):
    """Like :func:`smooth_covariance` but also returns the smoothing record."""
    X = _as_exposures(X)
    T = X.T
    if not isinstance(knots, (int, np.integer)) or knots < 4 or knots > T:
        raise ParameterError(f"knots must be an integer in [4, {T}], got {knots!r}")
    if X.n < 2:
        raise InsufficientDataError("need at least two exposure rows to estimate a covariance")

    Xc = X.centered()
    C = Xc.T @ Xc / (X.n - 1)
    B, omega = _bspline_basis(X.time_grid, int(knots))
    scale = np.trace(B.T @ B) / np.trace(omega)
    lambdas = scale * np.logspace(-6, 4, N_PENALTIES)

    best = None
    for lam in lambdas:
        H = _hat_matrix(B, omega, lam)
        fitted = H @ C @ H.T
        df = np.trace(H)
        denom = (1.0 - df * df / (T * T)) ** 2
        if denom <= 1e-12:
            continue
        gcv = np.sum((C - fitted) ** 2) / (T * T) / denom
        if best is None or gcv < best[0]:
            best = (gcv, lam, fitted, df)
    if best is None:
        # every penalty interpolates; fall back to the raw covariance
        S, lam, df = C.copy(), 0.0, float(T)
    else:
        _, lam, S, df = best
    S = 0.5 * (S + S.T)
    record = {
        "method": "sandwich-bspline-gcv",
        "knots": int(knots),
        "penalty": float(lam),
        "effective_df": float(df),
    }
    return S, record


def _clamp_eigenvalues(evals):
    scale = max(1.0, float(np.max(np.abs(evals))))
    if np.any(evals < -EIG_CLAMP_TOL * scale):
        raise DegenerateCovarianceError(
            f"covariance has a materially negative eigenvalue ({evals.min():.3e})")
    return np.where(evals < 0, 0.0, evals)


def _orient(vecs):
    # flip so the largest-magnitude entry is positive; argmax picks the earliest tie
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def compute_pc_basis(cov, variance_threshold: float = 0.99, smoothing_record=None,
                     center=None) -> BasisSet:
    """Leading eigenvectors of ``cov`` explaining ``variance_threshold`` of its trace."""
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ParameterError("covariance must be a square matrix")
    if not np.all(np.isfinite(cov)):
        raise ParameterError("covariance contains non-finite entries")
    if np.max(np.abs(cov - cov.T)) > 1e-8:
        raise ParameterError("covariance matrix is not symmetric")
    if not (0.0 < variance_threshold <= 1.0):
        raise ParameterError("variance_threshold must lie in (0, 1]")

    evals, evecs = np.linalg.eigh(0.5 * (cov + cov.T))
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    if evals[0] <= 0:
        raise DegenerateCovarianceError("all eigenvalues are non-positive")
    evals = _clamp_eigenvalues(evals)

    total = float(evals.sum())
    frac = np.cumsum(evals) / total
    K = int(np.searchsorted(frac, variance_threshold - 1e-12) + 1)
    K = min(K, len(evals))
    psi = _orient(evecs[:, :K])
    kept = evals[:K].copy()
    return BasisSet(
        psi=psi,
        eigenvalues=kept,
        variance_explained=float(kept.sum() / total),
        total_variance=total,
        smoothing_record=dict(smoothing_record or {}),
        center=None if center is None else np.asarray(center, dtype=float),
    )


def project_scores(X, basis: BasisSet, center=None) -> np.ndarray:
    """PC scores ``(X - mean) @ Psi``.

    By default the column means of ``X`` itself are removed; pass ``center``
    (e.g. ``basis.center``) to score new data against training means.
    """
    X = _as_exposures(X)
    if basis.psi.shape[0] != X.T:
        raise ParameterError(
            f"basis has {basis.psi.shape[0]} time points, exposures have {X.T}")
    mu = X.column_means if center is None else np.asarray(center, dtype=float)
    if mu.shape != (X.T,):
        raise ParameterError("center must have one entry per time point")
    return (X.values - mu) @ basis.psi


def _regression_spline_basis(grid, df):
    """Basis of dimension ``df``: a polynomial of degree ``df-1`` for ``df <= 4``,
    otherwise a cubic B-spline with ``df - 4`` equally spaced interior knots."""
    t = (grid - grid[0]) / (grid[-1] - grid[0])
    if df <= 4:
        return np.vander(t, df, increasing=True)
    B, _ = _bspline_basis(t, df - 4)
    return B


def presmooth_exposures(X, df: int) -> ExposureMatrix:
    """Replace each row by its least-squares fit on a ``df``-dimensional cubic spline space."""
    X = _as_exposures(X)
    if not isinstance(df, (int, np.integer)) or df < 2 or df > X.T:
        raise ParameterError(f"df must be an integer in [2, {X.T}], got {df!r}")
    B = _regression_spline_basis(X.time_grid, int(df))
    Q, _ = np.linalg.qr(B)
    fitted = (X.values @ Q) @ Q.T
    return ExposureMatrix(fitted, X.time_grid, X.ids)


def build_basis(X, knots: int = 15, variance_threshold: float = 0.99,
                presmooth_df: int | None = None):
    """Full preprocessing pipeline: optional pre-smoothing, smoothing, PCs, scores.

    Returns ``(basis, scores)``.  With ``presmooth_df`` set, rows are spline
    smoothed first and the PCs come from the raw covariance of the smoothed
    rows instead of the sandwich smoother.
    """
    X = _as_exposures(X)
    if presmooth_df is not None:
        Xs = presmooth_exposures(X, presmooth_df)
        Xc = Xs.centered()
        if Xs.n < 2:
            raise InsufficientDataError("need at least two exposure rows")
        cov = Xc.T @ Xc / (Xs.n - 1)
        record = {"method": "presmooth-regression-spline", "df": int(presmooth_df)}
        source = Xs
    else:
        cov, record = smooth_covariance_details(X, knots)
        source = X
    basis = compute_pc_basis(cov, variance_threshold, record, center=source.column_means)
    basis = replace(basis, time_grid=np.asarray(X.time_grid, dtype=float))
    scores = project_scores(source, basis)
    return basis, scores


def read_exposures_csv(path) -> ExposureMatrix:
    """Read an exposure panel: optional ``id`` column plus one column per time point.

    Columns named ``t1..tT`` give the grid ``1..T``; purely numeric headers
    are taken as the time grid itself.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        id_col = header.index("id") if "id" in header else None
        time_cols = [i for i in range(len(header)) if i != id_col]
        names = [header[i] for i in time_cols]
        if not names:
            raise DataError(f"{path}:1: no exposure columns")
        grid = _grid_from_header(names, path)
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(row[i]) for i in time_cols])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric exposure value") from None
            ids.append(row[id_col].strip() if id_col is not None else str(lineno - 1))
    if not rows:
        raise DataError(f"{path}: no data rows")
    return ExposureMatrix(np.array(rows), grid, tuple(ids))


def _grid_from_header(names, path):
    if all(n[:1] in ("t", "T") and n[1:].isdigit() for n in names):
        idx = [int(n[1:]) for n in names]
        if idx != list(range(1, len(names) + 1)):
            raise DataError(f"{path}:1: exposure columns must be t1..tT in order")
        return np.arange(1, len(names) + 1, dtype=float)
    try:
        return np.array([float(n) for n in names])
    except ValueError:
        raise DataError(f"{path}:1: cannot read time grid from header") from None
