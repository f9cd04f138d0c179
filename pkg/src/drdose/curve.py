"""Polynomial approximation of the dose-response curve from strata APO points."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .apo import StrataApoTable, fmt
from .errors import CollinearityError, InsufficientDataError
from .numkit import RANK_TOL, ols

CURVE_COLUMNS = ("d", "mu_hat", "se", "ci_lo", "ci_hi")


@dataclass
class DoseResponseCurve:
    degree: int
    theta: np.ndarray
    moments: np.ndarray          # one row per APO point: [1, mean d, mean d^2, ...]
    apo: np.ndarray
    dose_range: tuple
    eval_grid: list = field(default_factory=list)

    def __call__(self, d):
        return eval_curve(self, d)


def dose_moments(doses, degree: int) -> np.ndarray:
    doses = np.asarray(doses, dtype=float)
    return np.array([np.mean(doses ** m) for m in range(degree + 1)])


def fit_curve(table: StrataApoTable, degree: int = 2, dose_lists=None) -> DoseResponseCurve:
    """Regress strata APO estimates on within-stratum dose moments.

    Row q of the design is ``[1, mean_j d_qj, ..., mean_j d_qj^M]`` over the
    stratum's treatment levels (``dose_lists`` overrides the levels stored on
    the table rows). Overlapping rows from shifted partitions enter with equal
    weight.
    """
    if degree < 0:
        raise ValueError("degree must be non-negative")
    rows = table.rows
    if dose_lists is None:
        dose_lists = [r.levels for r in rows]
    if len(dose_lists) != len(rows):
        raise ValueError("one dose list per table row is required")
    k = len(rows)
    p = degree + 1
    if k < p:
        raise InsufficientDataError(
            f"degree {degree} needs at least {p} APO points, got {k}")
    X = np.array([dose_moments(d, degree) for d in dose_lists])
    y = np.array([r.estimate for r in rows])
    if k == p:
        theta = _solve_square(X, y)
    else:
        theta = ols(X, y).coefficients
    lo = min(r.lower for r in rows)
    hi = max(r.upper for r in rows)
    return DoseResponseCurve(degree, theta, X, y, (lo, hi))


def _solve_square(X, y):
    # saturated fit: exact interpolation, same rank rule as ols
    Q, R, piv = sla.qr(X, pivoting=True)
    diag = np.abs(np.diag(R))
    small = np.nonzero(diag < RANK_TOL * diag[0])[0]
    if small.size:
        raise CollinearityError(int(piv[small[0]]))
    theta = np.empty(X.shape[1])
    theta[piv] = sla.solve_triangular(R, Q.T @ y)
    return theta


def eval_curve(curve: DoseResponseCurve, d):
    """Horner evaluation of sum_m theta_m d^m."""
    d = np.asarray(d, dtype=float)
    acc = np.zeros_like(d)
    for c in curve.theta[::-1]:
        acc = acc * d + c
    return float(acc) if acc.ndim == 0 else acc


def evaluate_grid(curve: DoseResponseCurve, grid, se=None):
    """Fill ``curve.eval_grid`` with (d, mu_hat, se, ci_lo, ci_hi, extrapolated) rows."""
    grid = np.asarray(grid, dtype=float)
    mu = eval_curve(curve, grid)
    lo, hi = curve.dose_range
    out = []
    for i, (d, m) in enumerate(zip(grid, np.atleast_1d(mu))):
        s = None if se is None else float(se[i])
        ci = (None, None) if s is None else (m - 1.96 * s, m + 1.96 * s)
        out.append((float(d), float(m), s, ci[0], ci[1], not lo <= d <= hi))
    curve.eval_grid = out
    return out


def write_curve_csv(curve: DoseResponseCurve, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for d, m, s, lo, hi, _ in curve.eval_grid:
            w.writerow([fmt(d), fmt(m), fmt(s), fmt(lo), fmt(hi)])


def parse_grid(spec: str) -> np.ndarray:
    """``"lo:hi:step"`` to an inclusive grid."""
    try:
        lo, hi, step = (float(x) for x in spec.split(":"))
    except ValueError:
        raise ValueError(f"grid must be lo:hi:step, got {spec!r}") from None
    if not step > 0 or hi < lo:
        raise ValueError(f"bad grid {spec!r}")
    count = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(count)
