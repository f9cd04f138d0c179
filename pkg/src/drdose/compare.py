"""GPS-weighted regression estimators used as comparators.

WR1 weights a stratum-dummy plus covariate regression by sqrt(1/R_i); WR2
weights the outcome regression by W(D_i)/R_i with W the fitted normal
marginal density of the dose.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Sequence

import numpy as np

from .apo import ApoRow, StrataApoTable, _warn_empty
from .data import (Dataset, StrataSpec, Term, assign_strata, design_matrix, mean_design_row,
                   stratum_levels)
from .errors import EmptyStratumError, EstimationError
from .gps import PgpsFit
from .numkit import normal_pdf, ols

# GPS densities are floored at the normal density of a deviation this many SDs out
R_FLOOR_SD = 6.0


@dataclass(frozen=True)
class WeightedFit:
    coefficients: np.ndarray
    weights: np.ndarray
    method: str
    floored: int = 0
    stabilizer_params: tuple | None = None


def floored_gps(gpsfit: PgpsFit):
    """Observed GPS densities floored at the ``R_FLOOR_SD`` deviation density."""
    floor = float(normal_pdf(R_FLOOR_SD)) / gpsfit.sigma_d
    r = gpsfit.r_observed
    return np.maximum(r, floor), int(np.count_nonzero(r < floor))


def fit_wr1(data: Dataset, gpsfit: PgpsFit, spec: StrataSpec, covar_terms: Sequence[Term]):
    """Weighted regression of Y on stratum dummies and covariate terms, stratum members only."""
    covar_terms = [t for t in covar_terms if t.kind == "covariate"]
    m = assign_strata(data, spec)
    for q, c in enumerate(m.counts):
        if c == 0:
            raise EmptyStratumError(q + 1)
    r, floored = floored_gps(gpsfit)
    w = np.sqrt(1.0 / r)
    rows = np.nonzero(m.assignments >= 0)[0]
    dummies = np.zeros((rows.size, spec.Q))
    dummies[np.arange(rows.size), m.assignments[rows]] = 1.0
    parts = [dummies]
    if covar_terms:
        parts.append(design_matrix(data, covar_terms)[rows])
    labels = [f"stratum[{q + 1}]" for q in range(spec.Q)] + [t.label for t in covar_terms]
    fit = ols(np.hstack(parts), data.outcome[rows], weights=w[rows], labels=labels)
    return WeightedFit(fit.coefficients, w, "WR1", floored)


def wr1_strata_apo(data: Dataset, gpsfit: PgpsFit, spec: StrataSpec,
                   covar_terms: Sequence[Term]) -> StrataApoTable:
    covar_terms = [t for t in covar_terms if t.kind == "covariate"]
    wfit = fit_wr1(data, gpsfit, spec, covar_terms)
    w = wfit.weights
    alpha = wfit.coefficients[:spec.Q]
    beta = wfit.coefficients[spec.Q:]
    xb = design_matrix(data, covar_terms) @ beta if covar_terms else np.zeros(data.n)
    # weighted average of (alpha_q + x_i'beta) over all units
    shift = float(w @ xb) / float(w.sum())
    m = assign_strata(data, spec)
    table = StrataApoTable([], provenance={"covar_terms": [t.label for t in covar_terms],
                                           "coefficients": wfit.coefficients.tolist(),
                                           "r_floored": wfit.floored}, fit=wfit)
    for q, (lo, hi) in enumerate(spec.intervals):
        doses = data.dose[m.assignments == q]
        table.rows.append(ApoRow(q + 1, lo, hi, doses.size, float(doses.mean()),
                                 float(alpha[q]) + shift, "WR1",
                                 levels=stratum_levels(lo, hi, doses, spec.levels)))
    return table


def fit_wr2(data: Dataset, gpsfit: PgpsFit, or_terms: Sequence[Term]) -> WeightedFit:
    mu_w = float(np.mean(data.dose))
    var_w = float(np.var(data.dose, ddof=1)) if data.n > 1 else 0.0
    if not var_w > 0:
        raise EstimationError("dose has zero variance; stabilising density is degenerate")
    s_w = math.sqrt(var_w)
    W = normal_pdf((data.dose - mu_w) / s_w) / s_w
    r, floored = floored_gps(gpsfit)
    weights = W / r
    X = design_matrix(data, or_terms)
    fit = ols(X, data.outcome, weights=weights, labels=[t.label for t in or_terms])
    return WeightedFit(fit.coefficients, weights, "WR2", floored, (mu_w, var_w))


def wr2_strata_apo(data: Dataset, gpsfit: PgpsFit, spec: StrataSpec,
                   or_terms: Sequence[Term]) -> StrataApoTable:
    wfit = fit_wr2(data, gpsfit, or_terms)
    m = assign_strata(data, spec)
    table = StrataApoTable([], provenance={"or_terms": [t.label for t in or_terms],
                                           "coefficients": wfit.coefficients.tolist(),
                                           "stabilizer": list(wfit.stabilizer_params),
                                           "r_floored": wfit.floored}, fit=wfit)
    for q, (lo, hi) in enumerate(spec.intervals):
        doses = data.dose[m.assignments == q]
        if doses.size == 0:
            _warn_empty(table, q, lo, hi)
            continue
        levels = stratum_levels(lo, hi, doses, spec.levels)
        est = float(np.mean(mean_design_row(data, or_terms, levels) @ wfit.coefficients))
        table.rows.append(ApoRow(q + 1, lo, hi, doses.size, float(doses.mean()), est,
                                 "WR2", levels=levels))
    return table
