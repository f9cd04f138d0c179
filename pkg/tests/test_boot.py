import numpy as np
import pytest

from drdose.boot import (BootstrapResult, PipelineConfig, bootstrap_many, bootstrap_pipeline,
                         ci_covers, resample_index, run_pipeline)
from drdose.data import StrataSpec, parse_terms
from drdose.errors import BootstrapAbort
from drdose.numkit import RngStream

from oracles import random_case

GPS = parse_terms("1,x1,x2")


def _config(bounds, method="dr", **kw):
    gps = None if method == "or" else GPS
    terms = parse_terms("x1") if method == "wr1" else parse_terms("1,d,x1")
    return PipelineConfig(method=method, or_terms=terms, gps_terms=gps,
                          strata=StrataSpec(tuple(bounds)), **kw)


def _bigger_case(seed=0, n=120):
    rng = np.random.default_rng(seed)
    x1 = rng.normal(size=n)
    x2 = rng.normal(size=n)
    d = rng.uniform(10, 16, size=n) + 0.3 * x1
    y = 2 + 0.5 * d + x1 - x2 + rng.normal(size=n)
    from drdose.data import Dataset
    return Dataset(y, d, {"x1": x1, "x2": x2})


class TestBootstrap:
    def test_constant_outcome_zero_variance(self):
        data, bounds = random_case(0)
        const = data.with_outcome(np.full(data.n, 2.5))
        res = bootstrap_pipeline(const, _config(bounds, "or"), 20, RngStream(1))
        np.testing.assert_allclose(res.estimate, 2.5, rtol=1e-12)
        np.testing.assert_allclose(res.variance, 0.0, atol=1e-20)
        np.testing.assert_allclose(res.ci_lo, res.ci_hi, atol=1e-9)

    def test_two_replicates_formula(self):
        data = _bigger_case(1)
        res = bootstrap_pipeline(data, _config([10, 12, 14, 16], "or"), 2, RngStream(2))
        a, b = res.replicates
        np.testing.assert_allclose(res.variance, 0.5 * (a - b) ** 2, rtol=1e-12)

    def test_replicate_uses_child_stream(self):
        data = _bigger_case(2)
        cfg = _config([10, 12, 14, 16], "dr")
        rng = RngStream(3)
        res = bootstrap_pipeline(data, cfg, 3, rng)
        sample = data.take(resample_index(rng.child(1), data.n))
        np.testing.assert_allclose(res.replicates[1], run_pipeline(sample, cfg).values)

    def test_deterministic_and_thread_invariant(self):
        data = _bigger_case(3)
        cfg = _config([10, 12, 14, 16], "dr")
        a = bootstrap_pipeline(data, cfg, 8, RngStream(4), threads=1)
        b = bootstrap_pipeline(data, cfg, 8, RngStream(4), threads=3)
        np.testing.assert_array_equal(a.replicates, b.replicates)
        np.testing.assert_array_equal(a.variance, b.variance)

    def test_many_share_resamples(self):
        data = _bigger_case(4)
        cfgs = {"dr": _config([10, 12, 14, 16], "dr"), "wr2": _config([10, 12, 14, 16], "wr2"),
                "wr1": _config([10, 12, 14, 16], "wr1")}
        many = bootstrap_many(data, cfgs, 5, RngStream(5))
        alone = bootstrap_pipeline(data, cfgs["wr2"], 5, RngStream(5))
        np.testing.assert_array_equal(many["wr2"].replicates, alone.replicates)

    def test_failures_abort(self):
        data = _bigger_case(5)
        # a stratum with one member is empty in ~37% of resamples
        d = np.sort(data.dose)
        bounds = (10.0, float(d[-2]), float(d[-1]))
        with pytest.raises(BootstrapAbort):
            bootstrap_pipeline(data, _config(bounds, "dr"), 30, RngStream(6))
        res = bootstrap_many(data, {"dr": _config(bounds, "dr")}, 30, RngStream(6),
                             max_failure_frac=None)["dr"]
        assert 0 < res.failures < 30

    def test_write_csv(self, tmp_path):
        data = _bigger_case(6)
        res = bootstrap_pipeline(data, _config([10, 12, 14, 16], "or", degree=1,
                                               grid=(11.0, 13.0)), 4, RngStream(7))
        res.write_csv(tmp_path / "b.csv")
        lines = (tmp_path / "b.csv").read_text().splitlines()
        assert lines[0] == "target_id,estimate,var,se,ci_lo,ci_hi,failures"
        assert [line.split(",")[0] for line in lines[1:]] == [
            "10<d<=12", "12<d<=14", "14<d<=16", "mu(11)", "mu(13)"]

    def test_needs_two_replicates(self):
        data = _bigger_case(7)
        with pytest.raises(ValueError):
            bootstrap_pipeline(data, _config([10, 12, 14, 16], "or"), 1, RngStream(1))


class TestCiCovers:
    def setup_method(self):
        self.res = BootstrapResult(10, ["t"], np.array([5.0]), np.array([4.0]), 0)

    def test_boundaries(self):
        se = 2.0
        assert ci_covers(5.0, self.res, 0)
        assert not ci_covers(5.0 + 1.97 * se, self.res, 0)
        assert ci_covers(5.0 - 1.95 * se, self.res, 0)

    def test_row_dict(self):
        assert ci_covers(5.0, self.res.row(0))


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            PipelineConfig(method="ipw", or_terms=(), strata=StrataSpec((0, 1)))
        with pytest.raises(ValueError):
            PipelineConfig(method="dr", or_terms=parse_terms("1,d"), strata=StrataSpec((0, 1)))
        with pytest.raises(ValueError):
            PipelineConfig(method="wr2", or_terms=parse_terms("1,d"), gps_terms=GPS,
                           strata=StrataSpec((0, 1)), slide_step=0.5)

    def test_describe(self):
        desc = _config([10, 12], "dr").describe()
        assert desc["or_terms"] == ["1", "d", "x1"] and desc["levels"] == "grid"
