"""Augmented outcome regression: base outcome terms plus one inverse-PGPS
covariate per dose stratum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .data import (Dataset, StrataSpec, StratumMembership, assign_strata,
                   design_matrix)
from .errors import EmptyStratumError, EstimationError
from .gps import PgpsFit, pgps_at
from .numkit import chi2_sf, ols

DEFAULT_PI_FLOOR = 1e-4


@dataclass(frozen=True)
class AorSpec:
    or_terms: tuple
    strata: StrataSpec
    pi_floor: float = DEFAULT_PI_FLOOR

    def __post_init__(self):
        terms = tuple(self.or_terms)
        if not any(t.kind == "intercept" for t in terms):
            raise ValueError("outcome model terms must include an intercept")
        if not 0 < self.pi_floor < 0.5:
            raise ValueError("pi_floor must lie in (0, 0.5)")
        object.__setattr__(self, "or_terms", terms)


@dataclass(frozen=True)
class AorFit:
    beta: np.ndarray
    phi: np.ndarray
    covariance: np.ndarray
    residual_variance: float
    kappa: np.ndarray
    truncation_count: int
    membership: StratumMembership

    @property
    def coefficients(self):
        return np.concatenate([self.beta, self.phi])

    @property
    def phi_covariance(self):
        p = self.beta.size
        return self.covariance[p:, p:]


@dataclass(frozen=True)
class WaldResult:
    statistic: float
    dof: int
    p_value: float


def build_kappa(data: Dataset, fit: PgpsFit, spec: AorSpec, membership=None):
    """Inverse-PGPS stratum covariates; returns ``(kappa, truncation_count)``."""
    if membership is None:
        membership = assign_strata(data, spec.strata)
    for q, c in enumerate(membership.counts):
        if c == 0:
            raise EmptyStratumError(q + 1)
    a = membership.assignments
    assigned = a >= 0
    pi = fit.pi_observed
    floored = pi < spec.pi_floor
    inv = 1.0 / np.maximum(pi, spec.pi_floor)
    kappa = np.zeros((data.n, spec.strata.Q))
    rows = np.nonzero(assigned)[0]
    kappa[rows, a[rows]] = inv[rows]
    return kappa, int(np.count_nonzero(floored & assigned))


def fit_aor(data: Dataset, fit: PgpsFit, spec: AorSpec) -> AorFit:
    membership = assign_strata(data, spec.strata)
    kappa, truncated = build_kappa(data, fit, spec, membership)
    X = design_matrix(data, spec.or_terms)
    labels = [t.label for t in spec.or_terms] + [f"kappa[{q + 1}]" for q in range(spec.strata.Q)]
    ls = ols(np.hstack([X, kappa]), data.outcome, labels=labels)
    p = X.shape[1]
    return AorFit(beta=ls.coefficients[:p], phi=ls.coefficients[p:], covariance=ls.covariance,
                  residual_variance=ls.residual_variance, kappa=kappa,
                  truncation_count=truncated, membership=membership)


def wald_joint_test(fit: AorFit) -> WaldResult:
    """Wald chi-squared test of phi = 0 using the model-based covariance."""
    phi = fit.phi
    V = fit.phi_covariance
    try:
        sol = sla.solve(V, phi, assume_a="pos", check_finite=True)
    except (sla.LinAlgError, ValueError) as exc:
        raise EstimationError(f"singular augmentation covariance: {exc}") from None
    stat = max(float(phi @ sol), 0.0)
    return WaldResult(stat, phi.size, chi2_sf(stat, phi.size))


def predict_aor(fit: AorFit, data: Dataset, fitgps: PgpsFit, spec: AorSpec,
                d: float, q: int) -> np.ndarray:
    """Per-unit AOR prediction at dose ``d`` with stratum ``q`` (1-based) switched on."""
    lo, hi = spec.strata.intervals[q - 1]
    if not lo < d <= hi:
        raise ValueError(f"dose {d} lies outside stratum {q} ({lo}, {hi}]")
    base = design_matrix(data, spec.or_terms, dose_override=d) @ fit.beta
    pi = np.maximum(pgps_at(fitgps, data, d), spec.pi_floor)
    return base + fit.phi[q - 1] / pi
