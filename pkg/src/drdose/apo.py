"""Strata mean average-potential-outcome (APO) estimators."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
import logging
from typing import Sequence

import numpy as np

from .aor import AorSpec, fit_aor
from .data import (Dataset, StrataSpec, Term, assign_strata, design_matrix,
                   mean_design_row, slide_partition, stratum_levels)
from .errors import EmptyStratumError
from .gps import PgpsFit, mean_inverse_pgps, pgps_at
from .numkit import ols

log = logging.getLogger(__name__)

APO_COLUMNS = ("partition_offset", "lower", "upper", "midpoint", "mean_dose", "J",
               "estimate", "method")


def fmt(x) -> str:
    """Stable text form for CSV output."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    x = float(x)
    if not np.isfinite(x):
        return "nan" if np.isnan(x) else ("inf" if x > 0 else "-inf")
    return f"{x + 0.0:.12g}"


@dataclass
class ApoRow:
    stratum: int
    lower: float
    upper: float
    J: int
    mean_dose: float
    estimate: float
    method: str
    partition_offset: float = 0.0
    levels: np.ndarray = field(default=None, repr=False)

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def target_id(self) -> str:
        return f"{self.lower:g}<d<={self.upper:g}"


@dataclass
class StrataApoTable:
    rows: list
    warnings: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    fit: object = None

    @property
    def estimates(self) -> np.ndarray:
        return np.array([r.estimate for r in self.rows])

    def __len__(self):
        return len(self.rows)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(APO_COLUMNS)
            for r in self.rows:
                w.writerow([fmt(r.partition_offset), fmt(r.lower), fmt(r.upper), fmt(r.midpoint),
                            fmt(r.mean_dose), r.J, fmt(r.estimate), r.method])


def _stratum_doses(data: Dataset, spec: StrataSpec):
    m = assign_strata(data, spec)
    return [data.dose[m.assignments == q] for q in range(spec.Q)]


def or_strata_apo(data: Dataset, or_terms: Sequence[Term], spec: StrataSpec,
                  method: str = "OR") -> StrataApoTable:
    """Average over stratum levels of the all-unit mean OR prediction."""
    X = design_matrix(data, or_terms)
    fit = ols(X, data.outcome, labels=[t.label for t in or_terms])
    table = StrataApoTable([], provenance={"or_terms": [t.label for t in or_terms],
                                           "coefficients": fit.coefficients.tolist()})
    for q, ((lo, hi), doses) in enumerate(zip(spec.intervals, _stratum_doses(data, spec))):
        if doses.size == 0:
            _warn_empty(table, q, lo, hi)
            continue
        levels = stratum_levels(lo, hi, doses, spec.levels)
        est = float(np.mean(mean_design_row(data, or_terms, levels) @ fit.coefficients))
        table.rows.append(ApoRow(q + 1, lo, hi, doses.size, float(doses.mean()), est,
                                 method, levels=levels))
    return table


def _warn_empty(table, q, lo, hi):
    msg = f"stratum {q + 1} ({lo:g}, {hi:g}] has no units; omitted"
    table.warnings.append({"stratum": q + 1, "lower": lo, "upper": hi, "message": msg})
    log.warning(msg)


def dr_strata_apo(data: Dataset, gpsfit: PgpsFit, spec: AorSpec, average: str = "exact",
                  cache: dict | None = None) -> StrataApoTable:
    """Doubly robust strata APOs from the augmented outcome regression.

    For stratum q the estimate is the mean over stratum levels d_qj and all
    units i of m(d_qj, X_i) + phi_q / max(pi(d_qj | X_i), floor). The outcome
    part reduces to covariate means since terms never interact; the inverse
    PGPS part is averaged by :func:`mean_inverse_pgps`. ``cache`` memoises
    that average across calls sharing ``gpsfit`` and strata.
    """
    fit = fit_aor(data, gpsfit, spec)
    table = StrataApoTable([], provenance={
        "or_terms": [t.label for t in spec.or_terms],
        "gps_terms": [t.label for t in gpsfit.terms],
        "beta": fit.beta.tolist(), "phi": fit.phi.tolist(),
        "truncation_count": fit.truncation_count}, fit=fit)
    for q, (lo, hi) in enumerate(spec.strata.intervals):
        doses = data.dose[fit.membership.assignments == q]
        levels = stratum_levels(lo, hi, doses, spec.strata.levels)
        base = float(np.mean(mean_design_row(data, spec.or_terms, levels) @ fit.beta))
        ainv = inverse_pgps_average(gpsfit, spec, q, levels, average, cache)
        table.rows.append(ApoRow(q + 1, lo, hi, doses.size, float(doses.mean()),
                                 base + fit.phi[q] * ainv, "DR", levels=levels))
    return table


def inverse_pgps_average(gpsfit, spec: AorSpec, q, levels, average="exact", cache=None):
    if cache is None:
        return mean_inverse_pgps(gpsfit.fitted, gpsfit.sigma_d, gpsfit.delta, levels,
                                 spec.pi_floor, average)
    key = ("ainv", id(gpsfit), spec.strata.boundaries, spec.strata.levels, q,
           spec.pi_floor, average)
    if key not in cache:
        cache[("keep", id(gpsfit))] = gpsfit
        cache[key] = mean_inverse_pgps(gpsfit.fitted, gpsfit.sigma_d, gpsfit.delta, levels,
                                       spec.pi_floor, average)
    return cache[key]


def sliding_apo(data: Dataset, gpsfit: PgpsFit, spec: AorSpec, step: float,
                average: str = "exact", cache: dict | None = None) -> StrataApoTable:
    """DR strata APOs over every shifted partition, concatenated."""
    out = StrataApoTable([], provenance={"step": step, "partitions": []})
    base = spec.strata.boundaries[0]
    for shifted in slide_partition(spec.strata, step):
        offset = shifted.boundaries[0] - base
        sub = AorSpec(spec.or_terms, shifted, spec.pi_floor)
        try:
            table = dr_strata_apo(data, gpsfit, sub, average, cache)
        except EmptyStratumError as exc:
            msg = f"partition at offset {offset:g} skipped: {exc}"
            out.warnings.append({"partition_offset": offset, "message": msg})
            log.warning(msg)
            continue
        for r in table.rows:
            r.partition_offset = offset
        out.rows.extend(table.rows)
        out.provenance["partitions"].append({"offset": offset, "phi": table.provenance["phi"]})
    return out


def sliding_or_apo(data: Dataset, or_terms, spec: StrataSpec, step: float,
                   method: str = "OR") -> StrataApoTable:
    out = StrataApoTable([], provenance={"step": step})
    base = spec.boundaries[0]
    for shifted in slide_partition(spec, step):
        table = or_strata_apo(data, or_terms, shifted, method)
        offset = shifted.boundaries[0] - base
        for r in table.rows:
            r.partition_offset = offset
        out.rows.extend(table.rows)
        out.warnings.extend(table.warnings)
    return out


@dataclass
class SupportRow:
    stratum: int
    lower: float
    upper: float
    min_pi: float
    frac_below: float
    flagged: bool


def support_check(data: Dataset, gpsfit: PgpsFit, spec: StrataSpec,
                  threshold: float) -> list[SupportRow]:
    """Counterfactual PGPS at each stratum midpoint: minimum and share below ``threshold``."""
    rows = []
    for q, (lo, hi) in enumerate(spec.intervals):
        pi = pgps_at(gpsfit, data, 0.5 * (lo + hi))
        below = float(np.mean(pi < threshold))
        rows.append(SupportRow(q + 1, lo, hi, float(pi.min()), below, below > 0))
    return rows


def write_support_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stratum", "lower", "upper", "min_pi", "frac_below", "flagged"])
        for r in rows:
            w.writerow([r.stratum, fmt(r.lower), fmt(r.upper), fmt(r.min_pi),
                        fmt(r.frac_below), int(r.flagged)])
