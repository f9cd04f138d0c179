import dataclasses

import numpy as np
import pytest

from drdose.apo import or_strata_apo
from drdose.compare import fit_wr1, fit_wr2, floored_gps, wr1_strata_apo, wr2_strata_apo
from drdose.data import StrataSpec, assign_strata, design_matrix, parse_terms
from drdose.errors import EmptyStratumError
from drdose.gps import fit_treatment_model
from drdose.numkit import RngStream, normal_pdf, ols
from drdose.sim import (CORRECT_COVARS, CORRECT_GPS, CORRECT_OR, SimConfig, generate,
                        true_strata_mu)

from oracles import random_case

GPS = parse_terms("1,x1,x2")


def _with_r(gps, r):
    return dataclasses.replace(gps, r_observed=np.asarray(r, dtype=float))


class TestWr1:
    def test_equal_weights_reduce_to_dummy_regression(self):
        data, bounds = random_case(1)
        spec = StrataSpec(tuple(bounds))
        gps = _with_r(fit_treatment_model(data, GPS, 0.5), np.full(data.n, 0.2))
        covars = parse_terms("x1,x2")
        wfit = fit_wr1(data, gps, spec, covars)
        m = assign_strata(data, spec)
        rows = m.assignments >= 0
        D = np.zeros((rows.sum(), spec.Q))
        D[np.arange(rows.sum()), m.assignments[rows]] = 1
        X = np.hstack([D, design_matrix(data, covars)[rows]])
        ref = np.linalg.lstsq(X, data.outcome[rows], rcond=None)[0]
        np.testing.assert_allclose(wfit.coefficients, ref, rtol=1e-10)
        table = wr1_strata_apo(data, gps, spec, covars)
        shift = np.mean(design_matrix(data, covars) @ ref[spec.Q:])
        np.testing.assert_allclose(table.estimates, ref[:spec.Q] + shift, rtol=1e-10)

    def test_weights_are_root_inverse_gps(self):
        data, bounds = random_case(2)
        gps = fit_treatment_model(data, GPS, 0.5)
        wfit = fit_wr1(data, gps, StrataSpec(tuple(bounds)), parse_terms("x1"))
        r, _ = floored_gps(gps)
        np.testing.assert_allclose(wfit.weights, np.sqrt(1 / r))

    def test_empty_stratum(self):
        data, _ = random_case(3)
        gps = fit_treatment_model(data, GPS, 0.5)
        with pytest.raises(EmptyStratumError):
            fit_wr1(data, gps, StrataSpec((10.0, 12.0, 40.0, 41.0)), parse_terms("x1"))

    def test_gps_floor(self):
        data, _ = random_case(4)
        gps = fit_treatment_model(data, GPS, 0.5)
        r = gps.r_observed.copy()
        r[0] = 0.0
        floored, count = floored_gps(_with_r(gps, r))
        assert count == 1
        assert floored[0] == pytest.approx(normal_pdf(6.0) / gps.sigma_d)


class TestWr2:
    def test_w_equal_r_reduces_to_or(self):
        data, bounds = random_case(5)
        spec = StrataSpec(tuple(bounds))
        terms = parse_terms("1,d,x1")
        mu, sd = data.dose.mean(), data.dose.std(ddof=1)
        W = normal_pdf((data.dose - mu) / sd) / sd
        gps = _with_r(fit_treatment_model(data, GPS, 0.5), W)
        np.testing.assert_allclose(fit_wr2(data, gps, terms).weights, 1.0, rtol=1e-12)
        got = wr2_strata_apo(data, gps, spec, terms).estimates
        np.testing.assert_allclose(got, or_strata_apo(data, terms, spec).estimates, rtol=1e-10)

    def test_weighted_coefficients(self):
        data, _ = random_case(6)
        terms = parse_terms("1,d,x1")
        gps = fit_treatment_model(data, GPS, 0.5)
        wfit = fit_wr2(data, gps, terms)
        ref = ols(design_matrix(data, terms), data.outcome, weights=wfit.weights)
        np.testing.assert_allclose(wfit.coefficients, ref.coefficients)
        mu_w, var_w = wfit.stabilizer_params
        assert var_w == pytest.approx(np.var(data.dose, ddof=1))


def test_correct_models_near_truth():
    # large sample: WR1 and WR2 with correct outcome terms are consistent
    cfg = SimConfig(n=40_000)
    data = generate(cfg, RngStream(12))
    gps = fit_treatment_model(data, parse_terms("1,x1"), 0.5)
    truth, _ = true_strata_mu(cfg.strata.intervals, cfg, draws=10 ** 6)
    wr2 = wr2_strata_apo(data, gps, cfg.strata, CORRECT_OR).estimates
    np.testing.assert_allclose(wr2, truth, atol=0.15)
    gps_c = fit_treatment_model(data, CORRECT_GPS, 0.5)
    wr1 = wr1_strata_apo(data, gps_c, cfg.strata, CORRECT_COVARS).estimates
    np.testing.assert_allclose(wr1, truth, atol=0.2)
