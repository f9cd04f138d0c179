"""Datasets, design-matrix term grammar and dose strata."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
import math
from typing import Mapping, Sequence

import numpy as np

from .errors import (DataError, EmptyDataError, MissingColumnError, NonFiniteError,
                     UnknownCovariateError)

RESERVED = ("y", "d")


def _frozen(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Dataset:
    """Outcome, dose and named covariate columns for ``n`` units."""

    outcome: np.ndarray
    dose: np.ndarray
    covariates: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        y = _frozen(self.outcome)
        d = _frozen(self.dose)
        if y.ndim != 1 or d.ndim != 1:
            raise DataError("outcome and dose must be one-dimensional")
        n = y.shape[0]
        if n < 1:
            raise EmptyDataError("dataset has no rows")
        if d.shape[0] != n:
            raise DataError("dose and outcome lengths differ")
        for label, col in (("outcome", y), ("dose", d)):
            bad = np.nonzero(~np.isfinite(col))[0]
            if bad.size:
                raise NonFiniteError(label, int(bad[0]) + 1, float(col[bad[0]]))
        covs = {}
        for name, col in dict(self.covariates).items():
            if not name or name in RESERVED:
                raise DataError(f"invalid covariate name {name!r}")
            col = _frozen(col)
            if col.shape != (n,):
                raise DataError(f"covariate {name!r} has length {col.shape[0]}, expected {n}")
            covs[name] = col
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "dose", d)
        object.__setattr__(self, "covariates", covs)

    @property
    def n(self) -> int:
        return self.outcome.shape[0]

    def take(self, index) -> "Dataset":
        """Row subset (or resample with repeats) in the given order."""
        index = np.asarray(index)
        return Dataset(self.outcome[index], self.dose[index],
                       {k: v[index] for k, v in self.covariates.items()})

    def with_outcome(self, outcome) -> "Dataset":
        return Dataset(outcome, self.dose, self.covariates)


def load_csv(path, outcome_col: str, dose_col: str, covar_cols: Sequence[str] = ()) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDataError(f"{path}: file is empty") from None
        wanted = [outcome_col, dose_col, *covar_cols]
        for name in wanted:
            if name not in header:
                raise MissingColumnError(name)
        idx = {name: header.index(name) for name in wanted}
        cols = {name: [] for name in wanted}
        for rownum, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            for name in wanted:
                j = idx[name]
                cell = row[j].strip() if j < len(row) else ""
                try:
                    value = float(cell)
                except ValueError:
                    raise NonFiniteError(name, rownum, cell) from None
                if not math.isfinite(value):
                    raise NonFiniteError(name, rownum, cell)
                cols[name].append(value)
    if not cols[outcome_col]:
        raise EmptyDataError(f"{path}: no data rows")
    covs = {name: cols[name] for name in covar_cols}
    return Dataset(cols[outcome_col], cols[dose_col], covs)


def write_csv(data: Dataset, path, outcome_col: str = "y", dose_col: str = "d"):
    """Write ``data`` with full float precision (round-trips through :func:`load_csv`)."""
    names = list(data.covariates)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([outcome_col, dose_col, *names])
        cols = [data.outcome, data.dose, *(data.covariates[k] for k in names)]
        for row in zip(*cols):
            w.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# Terms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Term:
    """One design column: the intercept, a dose power or a covariate power."""

    kind: str
    power: int = 1
    name: str | None = None

    def __post_init__(self):
        if self.kind not in ("intercept", "dose", "covariate"):
            raise ValueError(f"unknown term kind {self.kind!r}")
        if self.kind != "intercept" and self.power < 1:
            raise ValueError("term powers must be positive integers")
        if self.kind == "covariate" and not self.name:
            raise ValueError("covariate terms need a name")

    @property
    def label(self) -> str:
        if self.kind == "intercept":
            return "1"
        base = "d" if self.kind == "dose" else self.name
        return base if self.power == 1 else f"{base}^{self.power}"

    def __str__(self):
        return self.label


INTERCEPT = Term("intercept")


def dose_power(k: int = 1) -> Term:
    return Term("dose", k)


def covariate(name: str, k: int = 1) -> Term:
    return Term("covariate", k, name)


def parse_terms(spec: str) -> list[Term]:
    """Parse a comma list such as ``"1,d,d^2,x1,x2^2"``."""
    terms = []
    for raw in spec.split(","):
        tok = raw.strip()
        if not tok:
            raise ValueError(f"empty term in {spec!r}")
        base, _, pw = tok.partition("^")
        base = base.strip()
        try:
            k = int(pw) if pw else 1
        except ValueError:
            raise ValueError(f"bad power in term {tok!r}") from None
        if k < 1:
            raise ValueError(f"bad power in term {tok!r}")
        if base == "1":
            if pw:
                raise ValueError("the intercept takes no power")
            terms.append(INTERCEPT)
        elif base == "d":
            terms.append(dose_power(k))
        else:
            terms.append(covariate(base, k))
    return terms


def format_terms(terms: Sequence[Term]) -> str:
    return ",".join(t.label for t in terms)


def covariate_names(terms: Sequence[Term]) -> list[str]:
    seen = []
    for t in terms:
        if t.kind == "covariate" and t.name not in seen:
            seen.append(t.name)
    return seen


def _column(data: Dataset, term: Term, dose):
    if term.kind == "intercept":
        return np.ones(data.n)
    if term.kind == "dose":
        base = dose
    else:
        try:
            base = data.covariates[term.name]
        except KeyError:
            raise UnknownCovariateError(term.name) from None
    return base ** term.power if term.power != 1 else np.array(base, dtype=float)


def design_matrix(data: Dataset, terms: Sequence[Term], dose_override=None) -> np.ndarray:
    """Evaluate ``terms`` per unit; dose terms use ``dose_override`` when given."""
    if not terms:
        raise ValueError("at least one term is required")
    if dose_override is None:
        dose = data.dose
    else:
        dose = np.full(data.n, float(dose_override))
    X = np.column_stack([_column(data, t, dose) for t in terms])
    if not np.all(np.isfinite(X)):
        raise DataError("design matrix has non-finite entries (overflow in a power term?)")
    return X


def mean_design_row(data: Dataset, terms: Sequence[Term], doses) -> np.ndarray:
    """Average of ``design_matrix(data, terms, d)`` over units, for each ``d``.

    Terms never interact, so the unit average splits into a dose part and a
    covariate part. Returns shape ``(len(doses), len(terms))``.
    """
    doses = np.atleast_1d(np.asarray(doses, dtype=float))
    out = np.empty((doses.size, len(terms)))
    for j, t in enumerate(terms):
        if t.kind == "intercept":
            out[:, j] = 1.0
        elif t.kind == "dose":
            out[:, j] = doses ** t.power
        else:
            try:
                col = data.covariates[t.name]
            except KeyError:
                raise UnknownCovariateError(t.name) from None
            out[:, j] = np.mean(col ** t.power)
    return out


# ---------------------------------------------------------------------------
# Strata
# ---------------------------------------------------------------------------

LEVEL_MODES = ("grid", "observed")


def stratum_levels(lower: float, upper: float, member_doses, mode: str = "grid") -> np.ndarray:
    """Treatment levels d_q1..d_qJ at which a stratum's APO is averaged.

    J is the number of member units. ``"grid"`` spreads the J levels evenly
    over the interval (cell midpoints), so the stratum estimand is the
    interval average of the dose-response; ``"observed"`` uses the members'
    own doses, which tilts the estimand toward where doses are dense.
    """
    member_doses = np.asarray(member_doses, dtype=float)
    if mode == "observed":
        return member_doses
    if mode != "grid":
        raise ValueError(f"unknown level mode {mode!r}")
    J = member_doses.size
    return lower + (upper - lower) * (np.arange(J) + 0.5) / max(J, 1)


@dataclass(frozen=True)
class StrataSpec:
    """Half-open dose intervals ``(b[q], b[q+1]]``, the PGPS half-width, and
    how the treatment levels d_qj of each stratum are chosen (see
    :func:`stratum_levels`)."""

    boundaries: tuple
    delta: float = 0.5
    levels: str = "grid"

    def __post_init__(self):
        b = tuple(float(x) for x in self.boundaries)
        if len(b) < 2:
            raise ValueError("need at least two boundaries (one stratum)")
        if any(not math.isfinite(x) for x in b):
            raise ValueError("boundaries must be finite")
        if any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
            raise ValueError("boundaries must be strictly ascending")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.levels not in LEVEL_MODES:
            raise ValueError(f"levels must be one of {LEVEL_MODES}, got {self.levels!r}")
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "delta", float(self.delta))

    @classmethod
    def regular(cls, lower, upper, width, delta=0.5, levels="grid") -> "StrataSpec":
        count = int(round((upper - lower) / width))
        if count < 1 or abs(lower + count * width - upper) > 1e-9 * max(1.0, abs(upper)):
            raise ValueError(f"({lower}, {upper}] is not a whole number of width-{width} strata")
        return cls(tuple(lower + k * width for k in range(count + 1)), delta, levels)

    @property
    def Q(self) -> int:
        return len(self.boundaries) - 1

    @property
    def intervals(self):
        b = self.boundaries
        return list(zip(b[:-1], b[1:]))

    @property
    def midpoints(self):
        return [0.5 * (lo + hi) for lo, hi in self.intervals]

    def shifted(self, offset) -> "StrataSpec":
        return StrataSpec(tuple(x + offset for x in self.boundaries), self.delta, self.levels)


@dataclass(frozen=True)
class StratumMembership:
    """Stratum index per unit (``-1`` when unassigned) and per-stratum counts."""

    assignments: np.ndarray
    counts: np.ndarray

    def members(self, q: int) -> np.ndarray:
        return np.nonzero(self.assignments == q)[0]

    def indicator(self, q: int) -> np.ndarray:
        return (self.assignments == q).astype(float)


def assign_strata(data_or_dose, spec: StrataSpec) -> StratumMembership:
    dose = data_or_dose.dose if isinstance(data_or_dose, Dataset) else np.asarray(data_or_dose, float)
    b = np.asarray(spec.boundaries)
    # side="left": d == b[q+1] lands in stratum q, giving (l, u]
    pos = np.searchsorted(b, dose, side="left")
    q = pos - 1
    q[(pos < 1) | (pos > spec.Q)] = -1
    counts = np.bincount(q[q >= 0], minlength=spec.Q)
    q.flags.writeable = False
    return StratumMembership(q, counts)


def slide_partition(spec: StrataSpec, step: float) -> list[StrataSpec]:
    """Shifted copies of ``spec`` at offsets 0, step, 2*step, ... below one stratum width."""
    if not step > 0:
        raise ValueError("slide step must be positive")
    width = spec.boundaries[1] - spec.boundaries[0]
    if step > width * (1 + 1e-12):
        raise ValueError("slide step exceeds the stratum width")
    specs = []
    k = 0
    while k * step < width * (1 - 1e-9):
        specs.append(spec.shifted(k * step) if k else spec)
        k += 1
    return specs
