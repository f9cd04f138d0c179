"""Simulation design with confounded continuous dose, analytic truth, and
Monte Carlo drivers for the strata, weighting, Wald and curve experiments."""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
import math

import numpy as np

from .aor import AorSpec, fit_aor, wald_joint_test
from .apo import fmt
from .boot import PipelineConfig, bootstrap_many, run_pipeline
from .curve import eval_curve
from .data import Dataset, StrataSpec, parse_terms
from .errors import DrDoseError
from .gps import fit_treatment_model
from .numkit import RngStream, draw_bivariate_normal, draw_normal, uniform_open

TRUTH_STREAM = 2 ** 31 - 1
BOOT_STREAM = 1

CORRECT_OR = tuple(parse_terms("1,d,d^2,x1,x2,x2^2"))
WRONG_OR = tuple(parse_terms("1,d,x1"))
CORRECT_GPS = tuple(parse_terms("1,x1,x2"))
WRONG_GPS = tuple(parse_terms("1,x1"))
CORRECT_COVARS = tuple(parse_terms("x1,x2,x2^2"))
WRONG_COVARS = tuple(parse_terms("x1"))

# name -> (method, outcome/covariate terms, treatment terms)
ESTIMATORS = {
    "OR1": ("or", CORRECT_OR, None),
    "OR2": ("or", WRONG_OR, None),
    "DR1": ("dr", WRONG_OR, CORRECT_GPS),
    "DR2": ("dr", CORRECT_OR, WRONG_GPS),
    "DR3": ("dr", WRONG_OR, WRONG_GPS),
    "DR4": ("dr", CORRECT_OR, CORRECT_GPS),
    "WR1-DR1": ("wr1", WRONG_COVARS, CORRECT_GPS),
    "WR1-DR2": ("wr1", CORRECT_COVARS, WRONG_GPS),
    "WR2-DR1": ("wr2", WRONG_OR, CORRECT_GPS),
    "WR2-DR2": ("wr2", CORRECT_OR, WRONG_GPS),
}
TABLE1 = ("OR1", "OR2", "DR1", "DR2", "DR3", "DR4")
TABLE2 = ("WR1-DR1", "WR1-DR2", "WR2-DR1", "WR2-DR2")
TABLE3 = ("DR1", "DR2", "DR3", "DR4")
FIGURE1 = ("DR1", "OR2")

METRICS = ("Av Est", "Av Est Var", "Emp Var", "MSE", "Coverage")


@dataclass(frozen=True)
class SimConfig:
    n: int = 2000
    runs: int = 200
    seed: int = 20240611
    sigma_d: float = 3.15
    sigma_y: float = 4.0
    delta: float = 0.5
    boundaries: tuple = (10.5, 12.5, 14.5, 16.5, 18.5, 20.5)
    B: int = 200
    pi_floor: float = 1e-4
    z_mean: float = 10.0
    z_var: float = 4.0
    slide_step: float = 1.0
    degree: int = 2
    grid: tuple = tuple(11.0 + 0.25 * k for k in range(41))
    average: str = "binned"
    levels: str = "grid"
    truth_draws: int = 10 ** 7
    threads: int = 1

    def __post_init__(self):
        if self.n < 50:
            raise ValueError("n must be at least 50")
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if not (self.sigma_d > 0 and self.sigma_y > 0):
            raise ValueError("noise standard deviations must be positive")
        object.__setattr__(self, "boundaries", tuple(float(b) for b in self.boundaries))
        object.__setattr__(self, "grid", tuple(float(g) for g in self.grid))

    @classmethod
    def full_scale(cls, **kw):
        return cls(n=10_000, runs=1000, **kw)

    @property
    def strata(self) -> StrataSpec:
        return StrataSpec(self.boundaries, self.delta, self.levels)

    def snapshot(self) -> dict:
        d = asdict(self)
        d["grid"] = [self.grid[0], self.grid[-1], len(self.grid)]
        return d


# ---------------------------------------------------------------------------
# Data-generating process and truth
# ---------------------------------------------------------------------------

def _draw_dose_parts(gen, cfg: SimConfig, count):
    x1, x2 = draw_bivariate_normal(gen, 4.0, 8.0, 1.0, 2.0, -0.5, count)
    z = draw_normal(gen, cfg.z_mean, cfg.z_var, count)
    eps_d = draw_normal(gen, 0.0, cfg.sigma_d ** 2, count)
    d = 2.0 + 0.5 * x1 + 0.25 * x2 + z + eps_d
    return x1, x2, d


def outcome_mean(d, x1, x2):
    return 1.0 + 4.0 * d - 0.125 * d * d + 0.5 * x1 + 2.0 * x2 - 0.5 * x2 * x2


def generate(config: SimConfig, rng: RngStream) -> Dataset:
    """One dataset; the latent dose driver Z is not exported."""
    gen = rng.generator()
    n = config.n
    x1, x2, d = _draw_dose_parts(gen, config, n)
    y = outcome_mean(d, x1, x2) + draw_normal(gen, 0.0, config.sigma_y ** 2, n)
    return Dataset(y, d, {"x1": x1, "x2": x2})


def true_mu(d):
    """Dose-response: 1 + 4d - 0.125d^2 + E[0.5X1 + 2X2 - 0.5X2^2] = -14 + 4d - 0.125d^2."""
    d = np.asarray(d, dtype=float)
    out = -14.0 + 4.0 * d - 0.125 * d * d
    return float(out) if out.ndim == 0 else out


def true_strata_mu(intervals, config: SimConfig = SimConfig(), rng: RngStream | None = None,
                   draws: int | None = None, chunk: int = 1_000_000):
    """Monte Carlo truth for the strata estimand selected by ``config.levels``.

    ``"grid"``: the interval average of true_mu, from doses drawn uniformly on
    each interval. ``"observed"``: E[true_mu(D) | lo < D <= hi] under the dose
    law. Accepts one ``(lo, hi)`` pair or a list; returns ``(values, ses)``
    (scalars for a single interval).
    """
    single = np.ndim(intervals) == 1
    iv = np.atleast_2d(np.asarray(intervals, dtype=float))
    if rng is None:
        rng = RngStream(config.seed, 0, (TRUTH_STREAM,))
    draws = config.truth_draws if draws is None else int(draws)
    gen = rng.generator()
    s1 = np.zeros(len(iv))
    s2 = np.zeros(len(iv))
    cnt = np.zeros(len(iv))
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        if config.levels == "grid":
            u = uniform_open(gen, m)
            for k, (lo, hi) in enumerate(iv):
                mu = true_mu(lo + (hi - lo) * u)
                s1[k] += mu.sum()
                s2[k] += (mu * mu).sum()
                cnt[k] += m
        else:
            _, _, d = _draw_dose_parts(gen, config, m)
            mu = true_mu(d)
            for k, (lo, hi) in enumerate(iv):
                sel = mu[(d > lo) & (d <= hi)]
                s1[k] += sel.sum()
                s2[k] += (sel * sel).sum()
                cnt[k] += sel.size
        done += m
    if np.any(cnt < 2):
        raise ValueError("an interval received (almost) no dose draws")
    mean = s1 / cnt
    var = np.maximum(s2 / cnt - mean ** 2, 0.0)
    se = np.sqrt(var / cnt)
    if single:
        return float(mean[0]), float(se[0])
    return mean, se


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

def estimator_config(name: str, config: SimConfig, curve: bool = False) -> PipelineConfig:
    method, terms, gps = ESTIMATORS[name]
    return PipelineConfig(
        method=method, or_terms=terms, gps_terms=gps, strata=config.strata,
        pi_floor=config.pi_floor, average=config.average,
        slide_step=config.slide_step if curve else None,
        degree=config.degree if curve else None,
        grid=config.grid if curve else None)


def run_stream(config: SimConfig, r: int) -> RngStream:
    return RngStream(config.seed, r)


def _strata_run(config: SimConfig, r: int, names, bootstrap: bool):
    stream = run_stream(config, r)
    data = generate(config, stream.child(0))
    configs = {name: estimator_config(name, config) for name in names}
    Q = config.strata.Q
    est = np.full((len(names), Q), np.nan)
    var = np.full((len(names), Q), np.nan)
    fails = np.zeros(len(names), dtype=int)
    cache = {}
    point = {}
    for k, name in enumerate(names):
        try:
            res = run_pipeline(data, configs[name], cache)
        except (DrDoseError, ValueError):
            continue
        if len(res.table.rows) != Q:
            continue
        point[name] = res
        est[k] = res.values
    if bootstrap and point:
        live = {name: configs[name] for name in names if name in point}
        boot = bootstrap_many(data, live, config.B, stream.child(BOOT_STREAM),
                              point=point, max_failure_frac=None)
        for k, name in enumerate(names):
            if name in boot:
                var[k] = boot[name].variance
                fails[k] = boot[name].failures
    return est, var, fails


def _map_runs(fn, config: SimConfig, *args) -> list:
    """``[fn(config, r, *args) for r in runs]``, in run order, optionally in processes."""
    runs = range(config.runs)
    if config.threads <= 1:
        return [fn(config, r, *args) for r in runs]
    with ProcessPoolExecutor(max_workers=config.threads) as ex:
        futs = [ex.submit(fn, config, r, *args) for r in runs]
        return [f.result() for f in futs]


@dataclass
class MetricsRow:
    estimator: str
    stratum: int
    lower: float
    upper: float
    truth: float
    av_est: float
    av_est_var: float
    emp_var: float
    mse: float
    coverage: float
    runs_ok: int
    boot_failures: int = 0

    def metric(self, label):
        return {"Av Est": self.av_est, "Av Est Var": self.av_est_var, "Emp Var": self.emp_var,
                "MSE": self.mse, "Coverage": self.coverage}[label]


@dataclass
class StrataStudy:
    config: SimConfig
    names: tuple
    truth: np.ndarray
    truth_se: np.ndarray
    estimates: np.ndarray      # runs x estimators x strata
    variances: np.ndarray
    boot_failures: np.ndarray  # runs x estimators
    rows: list = field(default_factory=list)

    def row(self, name, stratum) -> MetricsRow:
        for r in self.rows:
            if r.estimator == name and r.stratum == stratum:
                return r
        raise KeyError((name, stratum))

    def metric(self, name, label) -> np.ndarray:
        return np.array([self.row(name, q + 1).metric(label) for q in range(len(self.truth))])


def summarize(config: SimConfig, names, truth, est, var, fails) -> list:
    rows = []
    for k, name in enumerate(names):
        for q, (lo, hi) in enumerate(config.strata.intervals):
            e = est[:, k, q]
            v = var[:, k, q]
            ok = np.isfinite(e)
            e_ok = e[ok]
            v_ok = v[ok]
            t = truth[q]
            emp = float(np.var(e_ok, ddof=1)) if e_ok.size > 1 else math.nan
            vk = np.isfinite(v_ok)
            se = np.sqrt(v_ok[vk])
            cover = np.abs(e_ok[vk] - t) <= 1.96 * se
            rows.append(MetricsRow(
                name, q + 1, lo, hi, float(t),
                float(np.mean(e_ok)) if e_ok.size else math.nan,
                float(np.mean(v_ok[vk])) if vk.any() else math.nan,
                emp,
                float(np.mean((e_ok - t) ** 2)) if e_ok.size else math.nan,
                100.0 * float(np.mean(cover)) if cover.size else math.nan,
                int(ok.sum()), int(fails[:, k].sum())))
    return rows


def run_strata_study(config: SimConfig, names, bootstrap: bool = True) -> StrataStudy:
    truth, truth_se = true_strata_mu(config.strata.intervals, config)
    results = _map_runs(_strata_run, config, names, bootstrap)
    est = np.stack([r[0] for r in results])
    var = np.stack([r[1] for r in results])
    fails = np.stack([r[2] for r in results])
    study = StrataStudy(config, tuple(names), truth, truth_se, est, var, fails)
    study.rows = summarize(config, names, truth, est, var, fails)
    return study


def run_table1(config: SimConfig = SimConfig()) -> StrataStudy:
    return run_strata_study(config, TABLE1)


def run_table2(config: SimConfig = SimConfig()) -> StrataStudy:
    return run_strata_study(config, TABLE2)


def _wald_run(config: SimConfig, r: int, names):
    data = generate(config, run_stream(config, r).child(0))
    out = np.full(len(names), np.nan)
    fits = {}
    for k, name in enumerate(names):
        _, or_terms, gps_terms = ESTIMATORS[name]
        try:
            if gps_terms not in fits:
                fits[gps_terms] = fit_treatment_model(data, gps_terms, config.delta)
            aor = fit_aor(data, fits[gps_terms], AorSpec(or_terms, config.strata, config.pi_floor))
            out[k] = wald_joint_test(aor).p_value
        except (DrDoseError, ValueError):
            pass
    return out


@dataclass
class WaldStudy:
    names: tuple
    p_values: np.ndarray       # runs x estimators
    level: float = 0.05

    @property
    def rejection_rates(self) -> dict:
        out = {}
        for k, name in enumerate(self.names):
            p = self.p_values[:, k]
            p = p[np.isfinite(p)]
            out[name] = 100.0 * float(np.mean(p < self.level)) if p.size else math.nan
        return out


def run_table3(config: SimConfig = SimConfig(), names=TABLE3) -> WaldStudy:
    pv = _map_runs(_wald_run, config, names)
    return WaldStudy(tuple(names), np.vstack(pv))


def _curve_run(config: SimConfig, r: int, names):
    data = generate(config, run_stream(config, r).child(0))
    grid = np.array(config.grid)
    out = np.full((len(names), grid.size), np.nan)
    cache = {}
    for k, name in enumerate(names):
        try:
            res = run_pipeline(data, estimator_config(name, config, curve=True), cache)
        except (DrDoseError, ValueError):
            continue
        out[k] = eval_curve(res.curve, grid)
    return out


@dataclass
class CurveStudy:
    names: tuple
    grid: np.ndarray
    curves: np.ndarray         # runs x estimators x grid

    @property
    def mean_curves(self) -> dict:
        return {name: np.nanmean(self.curves[:, k], axis=0) for k, name in enumerate(self.names)}

    @property
    def truth(self) -> np.ndarray:
        return true_mu(self.grid)

    def max_deviation(self, name) -> float:
        return float(np.max(np.abs(self.mean_curves[name] - self.truth)))


def run_figure1(config: SimConfig = SimConfig(), names=FIGURE1) -> CurveStudy:
    cv = _map_runs(_curve_run, config, names)
    return CurveStudy(tuple(names), np.array(config.grid), np.stack(cv))


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def interval_label(lo, hi) -> str:
    return f"({lo:g},{hi:g}]"


def write_strata_table(study: StrataStudy, path):
    """Wide layout: one column per stratum, five metric rows per estimator."""
    labels = [interval_label(lo, hi) for lo, hi in study.config.strata.intervals]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["estimator", "metric", *labels])
        w.writerow(["Truth", "", *[fmt(t) for t in study.truth]])
        for name in study.names:
            for metric in METRICS:
                w.writerow([name, metric, *[fmt(v) for v in study.metric(name, metric)]])


def write_wald_table(study: WaldStudy, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["estimator", "rejection_rate_pct", "runs"])
        rates = study.rejection_rates
        for k, name in enumerate(study.names):
            runs = int(np.isfinite(study.p_values[:, k]).sum())
            w.writerow([name, fmt(rates[name]), runs])


def write_curve_points(grid, values, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["d", "mu_hat", "se", "ci_lo", "ci_hi"])
        for d, m in zip(grid, values):
            w.writerow([fmt(d), fmt(m), "", "", ""])


def scaled(config: SimConfig, **changes) -> SimConfig:
    return replace(config, **changes)
