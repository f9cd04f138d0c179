"""Full-pipeline estimation and nonparametric bootstrap over units."""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import os

import numpy as np

from .aor import DEFAULT_PI_FLOOR, AorSpec
from .apo import (StrataApoTable, dr_strata_apo, fmt, or_strata_apo, sliding_apo,
                  sliding_or_apo)
from .compare import wr1_strata_apo, wr2_strata_apo
from .curve import evaluate_grid, fit_curve
from .data import Dataset, StrataSpec
from .errors import BootstrapAbort, DrDoseError
from .gps import fit_treatment_model
from .numkit import RngStream

METHODS = ("or", "dr", "wr1", "wr2")
Z95 = 1.96


@dataclass(frozen=True)
class PipelineConfig:
    """Everything needed to go from a dataset to strata APOs (and a curve)."""

    method: str
    or_terms: tuple
    strata: StrataSpec
    gps_terms: tuple | None = None
    pi_floor: float = DEFAULT_PI_FLOOR
    slide_step: float | None = None
    degree: int | None = None
    grid: tuple | None = None
    average: str = "exact"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        object.__setattr__(self, "or_terms", tuple(self.or_terms))
        if self.gps_terms is not None:
            object.__setattr__(self, "gps_terms", tuple(self.gps_terms))
        elif self.method != "or":
            raise ValueError(f"method {self.method!r} needs treatment-model terms")
        if self.slide_step is not None and self.method not in ("or", "dr"):
            raise ValueError("sliding partitions apply to the OR and DR estimators only")
        if self.grid is not None:
            object.__setattr__(self, "grid", tuple(float(g) for g in self.grid))

    def describe(self) -> dict:
        return {
            "method": self.method,
            "or_terms": [t.label for t in self.or_terms],
            "gps_terms": None if self.gps_terms is None else [t.label for t in self.gps_terms],
            "strata": list(self.strata.boundaries), "delta": self.strata.delta,
            "levels": self.strata.levels,
            "pi_floor": self.pi_floor, "slide_step": self.slide_step,
            "degree": self.degree, "average": self.average,
        }


@dataclass
class PipelineResult:
    table: StrataApoTable
    curve: object = None
    gpsfit: object = None

    @property
    def target_ids(self) -> list:
        ids = [_row_id(r) for r in self.table.rows]
        if self.curve is not None:
            ids += [f"mu({g[0]:g})" for g in self.curve.eval_grid]
        return ids

    @property
    def values(self) -> np.ndarray:
        vals = [r.estimate for r in self.table.rows]
        if self.curve is not None:
            vals += [g[1] for g in self.curve.eval_grid]
        return np.array(vals)


def _row_id(row):
    return f"{row.lower:g}<d<={row.upper:g}"


def treatment_fit(data: Dataset, gps_terms, delta, cache=None):
    if cache is None:
        return fit_treatment_model(data, gps_terms, delta)
    key = ("gps", tuple(gps_terms), delta)
    if key not in cache:
        cache[key] = fit_treatment_model(data, gps_terms, delta)
    return cache[key]


def run_pipeline(data: Dataset, config: PipelineConfig, cache: dict | None = None) -> PipelineResult:
    """Estimate every stage from scratch on ``data``.

    ``cache`` lets several configurations on the same dataset share treatment
    model fits and inverse-PGPS averages.
    """
    gpsfit = None
    if config.gps_terms is not None:
        gpsfit = treatment_fit(data, config.gps_terms, config.strata.delta, cache)
    m = config.method
    if m == "or":
        if config.slide_step:
            table = sliding_or_apo(data, config.or_terms, config.strata, config.slide_step)
        else:
            table = or_strata_apo(data, config.or_terms, config.strata)
    elif m == "dr":
        spec = AorSpec(config.or_terms, config.strata, config.pi_floor)
        if config.slide_step:
            table = sliding_apo(data, gpsfit, spec, config.slide_step, config.average, cache)
        else:
            table = dr_strata_apo(data, gpsfit, spec, config.average, cache)
    elif m == "wr1":
        table = wr1_strata_apo(data, gpsfit, config.strata, config.or_terms)
    else:
        table = wr2_strata_apo(data, gpsfit, config.strata, config.or_terms)
    curve = None
    if config.degree is not None:
        curve = fit_curve(table, config.degree)
        if config.grid is not None:
            evaluate_grid(curve, np.array(config.grid))
    return PipelineResult(table, curve, gpsfit)


# ---------------------------------------------------------------------------
# Bootstrap
# ---------------------------------------------------------------------------

@dataclass
class BootstrapResult:
    B: int
    target_ids: list
    estimate: np.ndarray
    variance: np.ndarray
    failures: int
    replicates: np.ndarray = field(default=None, repr=False)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(self.variance)

    @property
    def ci_lo(self) -> np.ndarray:
        return self.estimate - Z95 * self.se

    @property
    def ci_hi(self) -> np.ndarray:
        return self.estimate + Z95 * self.se

    def row(self, i) -> dict:
        return {"target_id": self.target_ids[i], "estimate": float(self.estimate[i]),
                "var": float(self.variance[i]), "se": float(self.se[i]),
                "ci_lo": float(self.ci_lo[i]), "ci_hi": float(self.ci_hi[i])}

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["target_id", "estimate", "var", "se", "ci_lo", "ci_hi", "failures"])
            for i, tid in enumerate(self.target_ids):
                w.writerow([tid, fmt(self.estimate[i]), fmt(self.variance[i]), fmt(self.se[i]),
                            fmt(self.ci_lo[i]), fmt(self.ci_hi[i]), self.failures])


def ci_covers(truth: float, result: BootstrapResult | dict, index: int | None = None) -> bool:
    """Whether ``truth`` lies in the closed normal interval of one target."""
    if isinstance(result, BootstrapResult):
        lo, hi = result.ci_lo[index], result.ci_hi[index]
    else:
        lo, hi = result["ci_lo"], result["ci_hi"]
    return bool(lo <= truth <= hi)


def resample_index(rng: RngStream, n: int) -> np.ndarray:
    return rng.generator().integers(0, n, size=n)


def _replicate_block(data, configs, ids, start, stop, rng):
    out = []
    for b in range(start, stop):
        sample = data.take(resample_index(rng.child(b), data.n))
        cache = {}
        vals = {}
        for name, cfg in configs.items():
            try:
                res = run_pipeline(sample, cfg, cache)
            except (DrDoseError, ValueError, np.linalg.LinAlgError):
                vals[name] = None
                continue
            vals[name] = res.values if res.target_ids == ids[name] else None
        out.append(vals)
    return out


def default_threads() -> int:
    return os.cpu_count() or 1


def _blocks(B, threads):
    k = max(1, min(B, threads * 4))
    edges = np.linspace(0, B, k + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def bootstrap_many(data: Dataset, configs: dict, B: int, rng: RngStream, threads: int = 1,
                   point: dict | None = None, max_failure_frac: float | None = 0.2) -> dict:
    """Bootstrap several configurations over the same unit resamples.

    Replicate b draws its resample from ``rng.child(b)``, so results do not
    depend on ``threads``. Replicates that fail (empty stratum, collinearity,
    missing target) are counted and skipped; more than ``max_failure_frac``
    failures raise :class:`BootstrapAbort`.
    """
    if B < 2:
        raise ValueError("need at least two bootstrap replicates")
    if point is None:
        cache = {}
        point = {name: run_pipeline(data, cfg, cache) for name, cfg in configs.items()}
    ids = {name: point[name].target_ids for name in configs}
    blocks = _blocks(B, threads)
    if threads <= 1 or len(blocks) == 1:
        reps = [r for a, b in blocks for r in _replicate_block(data, configs, ids, a, b, rng)]
    else:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            futs = [ex.submit(_replicate_block, data, configs, ids, a, b, rng) for a, b in blocks]
            reps = [r for f in futs for r in f.result()]
    results = {}
    for name in configs:
        good = [r[name] for r in reps if r[name] is not None]
        failures = B - len(good)
        if max_failure_frac is not None and failures > max_failure_frac * B:
            raise BootstrapAbort(
                f"{name}: {failures} of {B} bootstrap replicates failed; "
                "the estimand is unstable under resampling")
        est = point[name].values
        if len(good) >= 2:
            mat = np.vstack(good)
            var = np.var(mat, axis=0, ddof=1)
        else:
            mat = np.empty((len(good), est.size))
            var = np.full(est.size, np.nan)
        results[name] = BootstrapResult(B, ids[name], est, var, failures, mat)
    return results


def bootstrap_pipeline(data: Dataset, config: PipelineConfig, B: int, rng: RngStream,
                       threads: int = 1) -> BootstrapResult:
    return bootstrap_many(data, {"main": config}, B, rng, threads)["main"]
