"""Numerical kernels: seeded random streams, normal distribution functions and
least squares via pivoted QR."""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
import scipy.linalg as sla
from scipy import special

from .errors import CollinearityError, InsufficientDataError

RANK_TOL = 1e-10
_HALF_ULP = 2.0 ** -54


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RngStream:
    """Addressable random stream.

    A stream is identified by ``(seed, stream_id)`` plus the ids of the streams
    it was derived from, so nested Monte Carlo loops (run -> bootstrap
    replicate) never share draws. The bit generator is PCG64 seeded through
    ``SeedSequence`` with the id path as spawn key.
    """

    seed: int
    stream_id: int = 0
    parent: tuple = field(default=())

    def generator(self) -> np.random.Generator:
        key = tuple(int(k) for k in self.parent) + (int(self.stream_id),)
        ss = np.random.SeedSequence(int(self.seed), spawn_key=key)
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, int(stream_id), self.parent + (self.stream_id,))


def _as_generator(rng):
    if isinstance(rng, RngStream):
        return rng.generator()
    return rng


def uniform_open(rng, count):
    """Uniforms on the open interval (0, 1)."""
    gen = _as_generator(rng)
    return gen.random(int(count)) + _HALF_ULP


def standard_normal(rng, count):
    # inverse-CDF so one uniform stream maps to one normal stream
    return special.ndtri(uniform_open(rng, count))


def draw_normal(rng, mean, var, count):
    if var < 0:
        raise ValueError("variance must be non-negative")
    return mean + math.sqrt(var) * standard_normal(rng, count)


def draw_bivariate_normal(rng, mean1, mean2, var1, var2, rho, count):
    """Correlated normal pair via the Cholesky factor of the 2x2 covariance."""
    if var1 <= 0 or var2 <= 0:
        raise ValueError("variances must be positive")
    if not abs(rho) < 1:
        raise ValueError("correlation must satisfy |rho| < 1")
    gen = _as_generator(rng)
    z1 = standard_normal(gen, count)
    z2 = standard_normal(gen, count)
    s1, s2 = math.sqrt(var1), math.sqrt(var2)
    x1 = mean1 + s1 * z1
    x2 = mean2 + s2 * (rho * z1 + math.sqrt(1.0 - rho * rho) * z2)
    return x1, x2


# ---------------------------------------------------------------------------
# Normal distribution
# ---------------------------------------------------------------------------

def normal_cdf(z):
    """Standard normal CDF, accurate to double precision across the real line."""
    return special.ndtr(z)


def normal_pdf(z):
    z = np.asarray(z, dtype=float)
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def normal_interval_prob(lo, hi):
    """P(lo <= Z <= hi) for a standard normal Z, elementwise, lo <= hi.

    Differences are taken in whichever tail keeps both terms small, so the
    result stays strictly positive far out in the tails.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    upper = lo > 0
    return np.where(upper,
                    special.ndtr(-lo) - special.ndtr(-hi),
                    special.ndtr(hi) - special.ndtr(lo))


def chi2_sf(x, dof):
    """Upper tail of the chi-squared distribution (regularized upper incomplete gamma)."""
    if x <= 0:
        return 1.0
    return float(special.gammaincc(0.5 * dof, 0.5 * x))


# ---------------------------------------------------------------------------
# Least squares
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LsFit:
    coefficients: np.ndarray
    covariance: np.ndarray
    residual_variance: float
    dof: int
    residuals: np.ndarray

    @property
    def se(self):
        return np.sqrt(np.diag(self.covariance))


def ols(X, y, weights=None, labels=None) -> LsFit:
    """Least squares through a column-pivoted QR factorisation.

    With ``weights`` the objective is sum_i w_i (y_i - x_i'b)^2; the reported
    residual variance is the weighted RSS over n - p and the covariance is
    s^2 (X'WX)^-1. A column whose pivot falls below ``RANK_TOL`` times the
    leading pivot raises :class:`CollinearityError` naming that column.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be two-dimensional")
    n, p = X.shape
    if y.shape != (n,):
        raise ValueError("y length does not match X")
    if n <= p:
        raise InsufficientDataError(f"need more rows than columns (n={n}, p={p})")
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,) or not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("weights must be finite and positive")
        sw = np.sqrt(w)
        Xw = X * sw[:, None]
        yw = y * sw
    else:
        Xw, yw = X, y

    Q, R, piv = sla.qr(Xw, mode="economic", pivoting=True, check_finite=False)
    diag = np.abs(np.diag(R))
    if diag[0] == 0 or not np.all(np.isfinite(diag)):
        col = int(piv[0])
        raise CollinearityError(col, None if labels is None else labels[col])
    small = np.nonzero(diag < RANK_TOL * diag[0])[0]
    if small.size:
        col = int(piv[small[0]])
        raise CollinearityError(col, None if labels is None else labels[col])

    qty = Q.T @ yw
    b_piv = sla.solve_triangular(R, qty, check_finite=False)
    coef = np.empty(p)
    coef[piv] = b_piv

    resid_w = yw - Xw @ coef
    dof = n - p
    s2 = float(resid_w @ resid_w) / dof

    Rinv = sla.solve_triangular(R, np.eye(p), check_finite=False)
    cov_piv = Rinv @ Rinv.T
    cov = np.empty((p, p))
    cov[np.ix_(piv, piv)] = cov_piv
    cov = 0.5 * (cov + cov.T) * s2

    return LsFit(coefficients=coef, covariance=cov, residual_variance=s2,
                 dof=dof, residuals=y - X @ coef)
