import numpy as np
import pytest

from drdose.aor import AorSpec
from drdose.apo import (dr_strata_apo, inverse_pgps_average, or_strata_apo, sliding_apo,
                        sliding_or_apo, support_check, write_support_csv)
from drdose.data import Dataset, StrataSpec, design_matrix, parse_terms
from drdose.errors import EmptyStratumError
from drdose.gps import fit_treatment_model
from drdose.numkit import RngStream
from drdose.sim import CORRECT_GPS, CORRECT_OR, SimConfig, generate

from oracles import dr_apo_oracle, or_apo_oracle, random_case

GPS = parse_terms("1,x1,x2")
OR = parse_terms("1,d,x1")


class TestOracles:
    @pytest.mark.parametrize("seed", range(12))
    def test_dr_double_sum(self, seed):
        data, bounds = random_case(seed)
        spec = AorSpec(OR, StrataSpec(tuple(bounds)), 1e-4)
        gps = fit_treatment_model(data, GPS, 0.5)
        got = dr_strata_apo(data, gps, spec).estimates
        ref = dr_apo_oracle(data, OR, GPS, bounds, 0.5, 1e-4)
        np.testing.assert_allclose(got, ref, rtol=1e-10)

    def test_dr_observed_levels(self):
        data, bounds = random_case(99)
        spec = AorSpec(OR, StrataSpec(tuple(bounds), levels="observed"))
        gps = fit_treatment_model(data, GPS, 0.5)
        table = dr_strata_apo(data, gps, spec)
        for row in table.rows:
            members = data.dose[(data.dose > row.lower) & (data.dose <= row.upper)]
            np.testing.assert_array_equal(np.sort(row.levels), np.sort(members))

    @pytest.mark.parametrize("seed", range(12))
    def test_or_double_sum(self, seed):
        data, bounds = random_case(seed)
        terms = parse_terms("1,d,d^2,x2,x2^2")
        got = or_strata_apo(data, terms, StrataSpec(tuple(bounds))).estimates
        np.testing.assert_allclose(got, or_apo_oracle(data, terms, bounds), rtol=1e-10)


class TestReductions:
    def test_constant_outcome(self):
        data, bounds = random_case(1)
        const = data.with_outcome(np.full(data.n, 3.25))
        est = or_strata_apo(const, OR, StrataSpec(tuple(bounds))).estimates
        np.testing.assert_allclose(est, 3.25, rtol=1e-12)

    def test_exact_or_fit_gives_zero_phi_and_or_estimates(self):
        data, bounds = random_case(2)
        beta = np.array([1.5, -0.3, 2.0])
        exact = data.with_outcome(design_matrix(data, OR) @ beta)
        spec = AorSpec(OR, StrataSpec(tuple(bounds)))
        table = dr_strata_apo(exact, fit_treatment_model(exact, GPS, 0.5), spec)
        np.testing.assert_allclose(table.fit.phi, 0.0, atol=1e-9)
        ref = or_strata_apo(exact, OR, spec.strata).estimates
        np.testing.assert_allclose(table.estimates, ref, rtol=1e-10)

    def test_empty_stratum(self):
        data, _ = random_case(3)
        spec = AorSpec(OR, StrataSpec((10.0, 12.0, 14.0, 30.0, 31.0)))
        with pytest.raises(EmptyStratumError):
            dr_strata_apo(data, fit_treatment_model(data, GPS, 0.5), spec)

    def test_or_omits_empty_stratum(self):
        data, _ = random_case(3)
        table = or_strata_apo(data, OR, StrataSpec((10.0, 12.0, 30.0, 31.0)))
        assert [r.stratum for r in table.rows] == [1, 2]
        assert table.warnings and table.warnings[0]["stratum"] == 3

    def test_cache_reuses_average(self):
        data, bounds = random_case(4)
        gps = fit_treatment_model(data, GPS, 0.5)
        spec = AorSpec(OR, StrataSpec(tuple(bounds)))
        cache = {}
        a = dr_strata_apo(data, gps, spec, cache=cache).estimates
        b = dr_strata_apo(data, gps, spec, cache=cache).estimates
        np.testing.assert_array_equal(a, b)
        assert sum(1 for k in cache if k[0] == "ainv") == spec.strata.Q
        lv = np.array([10.5, 11.5])
        assert inverse_pgps_average(gps, spec, 0, lv) > 0


class TestSliding:
    def setup_method(self):
        self.data = generate(SimConfig(n=2000), RngStream(21))
        self.gps = fit_treatment_model(self.data, CORRECT_GPS, 0.5)
        self.spec = AorSpec(parse_terms("1,d,x1"), SimConfig().strata)

    def test_full_width_step_is_identity(self):
        one = dr_strata_apo(self.data, self.gps, self.spec).estimates
        slid = sliding_apo(self.data, self.gps, self.spec, 2.0).estimates
        np.testing.assert_array_equal(one, slid)

    def test_half_width_doubles_points(self):
        slid = sliding_apo(self.data, self.gps, self.spec, 1.0)
        assert len(slid) == 2 * self.spec.strata.Q
        offsets = sorted({r.partition_offset for r in slid.rows})
        assert offsets == [0.0, 1.0]

    def test_or_sliding(self):
        slid = sliding_or_apo(self.data, CORRECT_OR, self.spec.strata, 1.0)
        assert len(slid) == 10


class TestSupport:
    def test_homogeneous_covariates(self):
        rng = np.random.default_rng(0)
        n = 50
        data = Dataset(np.zeros(n), rng.normal(12, 1, n), {"x1": np.ones(n)})
        gps = fit_treatment_model(data, parse_terms("1"), 0.5)
        rows = support_check(data, gps, StrataSpec((10.0, 12.0, 14.0, 30.0, 40.0)), 1e-4)
        for r in rows:
            assert r.frac_below in (0.0, 1.0)
        assert rows[-1].flagged and not rows[0].flagged

    def test_central_strata_supported(self, tmp_path):
        data = generate(SimConfig(n=5000), RngStream(8))
        gps = fit_treatment_model(data, CORRECT_GPS, 0.5)
        rows = support_check(data, gps, SimConfig().strata, 1e-4)
        assert rows[2].frac_below < 0.01
        write_support_csv(rows, tmp_path / "s.csv")
        assert (tmp_path / "s.csv").read_text().startswith("stratum,lower,upper")
