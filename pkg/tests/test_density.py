import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from smc.density import (
    LOG_ZERO,
    BinaryDim,
    ContinuousDim,
    DensityModel,
    ModelInfo,
    ZeroVarianceWarning,
    fit_density,
    fit_factorised,
    fit_kde,
    load_model_info,
    log_density,
    save_model_info,
    scott_bandwidth,
)

from oracles import factorised_logpdf_mp, kde_logpdf_mp, trapezoid_integral


class TestBandwidth:
    def test_scott_rule(self):
        x = np.random.default_rng(0).normal(size=(50, 3))
        expect = x.std(axis=0, ddof=1) * 50 ** (-1 / 7)
        np.testing.assert_allclose(scott_bandwidth(x), expect, rtol=1e-14)

    def test_single_sample(self):
        np.testing.assert_array_equal(fit_kde(np.array([[2.0, 3.0]])).bandwidth, [1.0, 1.0])

    def test_zero_variance_warns_and_floors(self):
        x = np.column_stack([np.zeros(10), np.arange(10.0)])
        with pytest.warns(ZeroVarianceWarning):
            h = scott_bandwidth(x)
        assert h[0] == pytest.approx(1e-3)
        assert h[1] > 0

    def test_explicit_bandwidth(self):
        assert fit_kde(np.zeros((3, 2)), 0.5).bandwidth.tolist() == [0.5, 0.5]

    def test_rejects_nonpositive_bandwidth(self):
        with pytest.raises(ValueError):
            fit_kde(np.zeros((3, 1)), 0.0)


class TestKde:
    def test_matches_extended_precision(self, rng):
        for _ in range(10):
            d = int(rng.integers(1, 4))
            s = rng.normal(size=(int(rng.integers(1, 30)), d))
            h = rng.uniform(0.1, 2.0, d)
            x = rng.normal(scale=2, size=d)
            got = log_density(fit_kde(s, h), x)
            assert got == pytest.approx(kde_logpdf_mp(x, s, h), abs=1e-10)

    def test_far_point_is_finite(self):
        m = fit_kde(np.zeros((5, 1)), 1.0)
        v = log_density(m, np.array([1e4]))
        assert np.isfinite(v) and v < -1e7

    def test_integrates_to_one(self, rng):
        m = fit_kde(rng.normal(size=(40, 1)))
        assert trapezoid_integral(m.log_density, -12, 12) == pytest.approx(1.0, abs=1e-3)

    def test_vector_and_matrix_forms(self, rng):
        m = fit_kde(rng.normal(size=(10, 2)))
        x = rng.normal(size=(4, 2))
        batch = log_density(m, x)
        assert batch.shape == (4,)
        assert log_density(m, x[1]) == pytest.approx(batch[1])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            log_density(fit_kde(np.zeros((3, 2)), 1.0), np.zeros(3))

    def test_sampling_moments(self):
        m = fit_kde(np.array([[0.0], [10.0]]), 0.5)
        draws = m.sample(np.random.default_rng(0), 20000)[:, 0]
        assert draws.mean() == pytest.approx(5.0, abs=0.15)
        assert draws.var() == pytest.approx(25.0 + 0.25, rel=0.03)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (6, 2), elements=st.floats(-50, 50)),
           arrays(np.float64, (2,), elements=st.floats(-60, 60)))
    def test_log_density_bounded_above(self, support, x):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ZeroVarianceWarning)
            m = fit_kde(support)
        # a Gaussian mixture never exceeds the peak of its narrowest component
        ceiling = -np.sum(np.log(m.bandwidth)) - np.log(2 * np.pi)
        assert log_density(m, x) <= ceiling + 1e-9


class TestFactorised:
    DIMS = (ContinuousDim(43.0, 7.5), BinaryDim(0.61), ContinuousDim(-1.0, 0.2))
    ORACLE = (("c", 43.0, 7.5), ("b", 0.61), ("c", -1.0, 0.2))

    def test_matches_extended_precision(self, rng):
        m = fit_factorised(self.DIMS)
        for _ in range(10):
            x = np.array([rng.normal(43, 10), float(rng.integers(0, 2)), rng.normal(-1, 0.5)])
            assert log_density(m, x) == pytest.approx(factorised_logpdf_mp(x, self.ORACLE), abs=1e-10)

    def test_binary_rejects_other_values(self):
        with pytest.raises(ValueError, match="0 or 1"):
            log_density(fit_factorised(self.DIMS), np.array([40.0, 0.5, 0.0]))

    def test_degenerate_probability_is_log_zero(self):
        m = fit_factorised([BinaryDim(1.0)])
        assert log_density(m, np.array([0.0])) == LOG_ZERO
        assert log_density(m, np.array([1.0])) == 0.0

    def test_continuous_integral(self):
        m = fit_factorised([ContinuousDim(2.0, 0.7)])
        assert trapezoid_integral(m.log_density, -6, 10) == pytest.approx(1.0, abs=1e-3)

    def test_rejects_bad_moments(self):
        with pytest.raises(ValueError):
            ContinuousDim(0.0, 0.0)
        with pytest.raises(ValueError):
            BinaryDim(1.5)

    def test_sampling_binary_frequency(self):
        m = fit_factorised([BinaryDim(0.3), ContinuousDim(5.0, 2.0)])
        x = m.sample(np.random.default_rng(1), 20000)
        assert set(np.unique(x[:, 0])) <= {0.0, 1.0}
        assert x[:, 0].mean() == pytest.approx(0.3, abs=0.015)
        assert x[:, 1].std() == pytest.approx(2.0, rel=0.03)


class TestModelInfo:
    def test_needs_exactly_one_form(self):
        with pytest.raises(ValueError):
            ModelInfo()
        with pytest.raises(ValueError):
            ModelInfo(samples=np.zeros((1, 1)), dims=(BinaryDim(0.5),))

    def test_json_formats(self, tmp_path):
        moments = {"kind": "moments", "dims": [{"type": "continuous", "mean": 43.0, "std": 7.5},
                                               {"type": "binary", "p": 0.61}]}
        info = ModelInfo.from_json(moments)
        assert info.dim == 2 and info.kind == "moments"
        assert info.to_json() == moments
        s = ModelInfo(samples=np.arange(6.0).reshape(3, 2))
        save_model_info(tmp_path / "s.json", s)
        assert json.loads((tmp_path / "s.json").read_text())["kind"] == "samples"
        np.testing.assert_array_equal(load_model_info(tmp_path / "s.json").samples, s.samples)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            ModelInfo.from_json({"kind": "histogram"})

    def test_fit_density_dispatch(self):
        assert fit_density(ModelInfo(samples=np.zeros((3, 1)) + np.arange(3)[:, None])).kind == "kde"
        assert fit_density(ModelInfo(dims=(BinaryDim(0.5),))).kind == "factorised"

    def test_density_json_round_trip(self, rng):
        for m in (fit_kde(rng.normal(size=(7, 2))), fit_factorised(TestFactorised.DIMS)):
            back = DensityModel.from_json(json.loads(json.dumps(m.to_json())))
            x = np.array([[43.0, 1.0, -1.0]]) if m.kind == "factorised" else rng.normal(size=(3, 2))
            np.testing.assert_array_equal(log_density(back, x), log_density(m, x))
