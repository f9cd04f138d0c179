import math

import numpy as np
import pytest

from drdose.aor import AorFit, AorSpec, build_kappa, fit_aor, predict_aor, wald_joint_test
from drdose.data import Dataset, StrataSpec, design_matrix, parse_terms
from drdose.errors import EmptyStratumError, EstimationError
from drdose.gps import fit_treatment_model
from drdose.numkit import RngStream
from drdose.sim import CORRECT_GPS, CORRECT_OR, SimConfig, generate

from oracles import aor_oracle, random_case

GPS = parse_terms("1,x1,x2")


def _fake_fit(data, pi):
    fit = fit_treatment_model(data, parse_terms("1,x1"), 0.5)
    return type(fit)(fit.alpha, fit.sigma2_d, fit.terms, fit.delta, fit.fitted,
                     fit.r_observed, np.asarray(pi, dtype=float))


class TestKappa:
    def setup_method(self):
        self.data = Dataset(np.arange(4.0), [11.0, 13.0, 9.0, 13.5], {"x1": [0.1, 0.5, -1, 2]})
        self.spec = AorSpec(parse_terms("1,d"), StrataSpec((10.0, 12.0, 14.0)), 1e-4)

    def test_reciprocal_and_zero_rows(self):
        kappa, trunc = build_kappa(self.data, _fake_fit(self.data, [0.5, 0.25, 0.3, 1e-9]),
                                   self.spec)
        np.testing.assert_allclose(kappa[0], [2, 0])
        np.testing.assert_allclose(kappa[1], [0, 4])
        np.testing.assert_array_equal(kappa[2], [0, 0])
        np.testing.assert_allclose(kappa[3], [0, 1e4])
        assert trunc == 1

    def test_unassigned_unit_not_counted_as_truncated(self):
        _, trunc = build_kappa(self.data, _fake_fit(self.data, [0.5, 0.25, 1e-9, 0.3]), self.spec)
        assert trunc == 0

    def test_empty_stratum(self):
        spec = AorSpec(parse_terms("1,d"), StrataSpec((10.0, 12.0, 13.0, 13.2)))
        with pytest.raises(EmptyStratumError, match="stratum 3"):
            build_kappa(self.data, _fake_fit(self.data, [0.5] * 4), spec)


class TestFit:
    @pytest.mark.parametrize("seed", range(10))
    def test_normal_equation_oracle(self, seed):
        data, bounds = random_case(seed)
        or_terms = parse_terms("1,d,x1")
        spec = AorSpec(or_terms, StrataSpec(tuple(bounds)), 1e-4)
        gps = fit_treatment_model(data, GPS, 0.5)
        fit = fit_aor(data, gps, spec)
        beta, phi, _, _ = aor_oracle(data, or_terms, GPS, bounds, 0.5, 1e-4)
        np.testing.assert_allclose(fit.beta, beta, rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(fit.phi, phi, rtol=1e-8, atol=1e-10)

    def test_eight_units_one_stratum(self):
        d = np.array([10.2, 10.7, 11.1, 11.6, 11.9, 12.4, 9.5, 13.0])
        x1 = np.array([0.3, -0.1, 0.8, -0.6, 0.2, 0.0, 1.1, -1.0])
        y = np.array([3.0, 2.0, 4.5, 1.0, 2.2, 3.3, 5.0, 0.4])
        data = Dataset(y, d, {"x1": x1, "x2": x1 ** 2 + np.arange(8) / 7})
        or_terms = parse_terms("1,d")
        spec = AorSpec(or_terms, StrataSpec((10.0, 12.5)))
        fit = fit_aor(data, fit_treatment_model(data, GPS, 0.5), spec)
        beta, phi, _, _ = aor_oracle(data, or_terms, GPS, [10.0, 12.5], 0.5, 1e-4)
        np.testing.assert_allclose(fit.coefficients, np.concatenate([beta, phi]), rtol=1e-10)

    def test_phi_near_zero_under_correct_model(self):
        data = generate(SimConfig(n=5000), RngStream(3))
        spec = AorSpec(CORRECT_OR, SimConfig().strata)
        fit = fit_aor(data, fit_treatment_model(data, CORRECT_GPS, 0.5), spec)
        se = np.sqrt(np.diag(fit.phi_covariance))
        assert np.all(np.abs(fit.phi) <= 4 * se)


class TestWald:
    def _fit(self, phi, V):
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        cov = np.zeros((1 + phi.size, 1 + phi.size))
        cov[0, 0] = 1.0
        cov[1:, 1:] = V
        return AorFit(np.zeros(1), phi, cov, 1.0, None, 0, None)

    def test_null_point(self):
        res = wald_joint_test(self._fit([0.0, 0.0], np.eye(2)))
        assert res.statistic == 0.0 and res.p_value == 1.0 and res.dof == 2

    def test_one_dof(self):
        res = wald_joint_test(self._fit([2.0], [[1.0]]))
        assert res.statistic == pytest.approx(4.0)
        assert res.p_value == pytest.approx(math.erfc(math.sqrt(2.0)), rel=1e-12)
        assert res.p_value == pytest.approx(0.0455, abs=5e-5)

    def test_correlated_quadratic_form(self):
        V = np.array([[2.0, 0.5], [0.5, 1.0]])
        phi = np.array([1.0, -2.0])
        res = wald_joint_test(self._fit(phi, V))
        assert res.statistic == pytest.approx(phi @ np.linalg.inv(V) @ phi, rel=1e-12)
        assert res.p_value == pytest.approx(math.exp(-res.statistic / 2), rel=1e-12)

    def test_singular(self):
        with pytest.raises(EstimationError):
            wald_joint_test(self._fit([1.0, 1.0], np.zeros((2, 2))))


class TestPredict:
    def test_zero_phi_reduces_to_or(self):
        data, bounds = random_case(5)
        or_terms = parse_terms("1,d,x1")
        spec = AorSpec(or_terms, StrataSpec(tuple(bounds)))
        gps = fit_treatment_model(data, GPS, 0.5)
        fit = fit_aor(data, gps, spec)
        zero = AorFit(fit.beta, np.zeros_like(fit.phi), fit.covariance, 1.0, fit.kappa, 0,
                      fit.membership)
        pred = predict_aor(zero, data, gps, spec, 11.0, 1)
        np.testing.assert_allclose(pred, design_matrix(data, or_terms, 11.0) @ fit.beta)

    def test_single_unit_by_hand(self):
        data, bounds = random_case(6)
        or_terms = parse_terms("1,d,x1")
        spec = AorSpec(or_terms, StrataSpec(tuple(bounds)))
        gps = fit_treatment_model(data, GPS, 0.5)
        fit = fit_aor(data, gps, spec)
        one = data.take([0])
        d = 11.3
        x = one.covariates["x1"][0]
        mu = gps.alpha[0] + gps.alpha[1] * x + gps.alpha[2] * one.covariates["x2"][0]
        z = lambda v: 0.5 * math.erfc(-v / math.sqrt(2))
        pi = z((d + 0.5 - mu) / gps.sigma_d) - z((d - 0.5 - mu) / gps.sigma_d)
        hand = fit.beta[0] + fit.beta[1] * d + fit.beta[2] * x + fit.phi[0] / max(pi, 1e-4)
        assert predict_aor(fit, one, gps, spec, d, 1)[0] == pytest.approx(hand, rel=1e-10)

    def test_dose_outside_stratum(self):
        data, bounds = random_case(7)
        spec = AorSpec(parse_terms("1,d"), StrataSpec(tuple(bounds)))
        gps = fit_treatment_model(data, GPS, 0.5)
        fit = fit_aor(data, gps, spec)
        with pytest.raises(ValueError):
            predict_aor(fit, data, gps, spec, 12.0, 2)
