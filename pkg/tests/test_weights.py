import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smc.pipeline import PipelineSettings, fit_smc
from smc.representation import RepresentationConfig
from smc.weights import (
    CONFIDENT,
    LOW_CONFIDENCE,
    LatentDensitySet,
    WeightVector,
    compute_weights,
    confidence_flag,
    weights_from_densities,
    weights_from_log_densities,
)
from smc.core import ModelBundle
from smc.density import ModelInfo

from conftest import linear_expert
from oracles import naive_weights

FAST = PipelineSettings(representation=RepresentationConfig(steps=150, hidden=(8,)),
                        n_latent_samples=100)


class TestWeightFormula:
    def test_matches_naive(self):
        p = [0.2, 0.05, 1.3]
        wv = weights_from_densities(p, 1e-3)
        np.testing.assert_allclose(wv.weights, naive_weights(p, 1e-3), rtol=1e-13)
        assert wv.confidence == pytest.approx(sum(p))

    def test_all_zero_is_uniform(self):
        wv = weights_from_densities([0.0, 0.0, 0.0, 0.0])
        np.testing.assert_allclose(wv.weights, 0.25)
        assert wv.confidence == 0.0

    def test_extreme_log_densities_are_finite(self):
        w, conf = weights_from_log_densities(np.array([-1e30, -5000.0, 800.0]), 1e-9)
        assert np.all(np.isfinite(w)) and abs(w.sum() - 1) < 1e-12
        assert w[2] == pytest.approx(1.0)

    def test_batch_form(self):
        lp = np.log(np.array([[0.1, 0.3], [2.0, 0.0 + 1e-300]]))
        w, conf = weights_from_log_densities(lp, 1e-9)
        assert w.shape == (2, 2) and conf.shape == (2,)

    def test_gamma_must_be_positive(self):
        with pytest.raises(ValueError):
            weights_from_densities([1.0, 2.0], 0.0)

    def test_gamma_dominates_far_from_all(self):
        wv = weights_from_densities([1e-14, 1e-20], 1e-9)
        assert np.ptp(wv.weights) < 1e-4

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0, 1e3), min_size=2, max_size=8),
           st.floats(1e-12, 1.0), st.integers(0, 7), st.floats(1.0, 100.0))
    def test_simplex_and_monotone(self, p, gamma, idx, factor):
        wv = weights_from_densities(p, gamma)
        assert abs(wv.weights.sum() - 1) < 1e-9 and np.all(wv.weights >= 0)
        i = idx % len(p)
        bumped = list(p)
        bumped[i] = p[i] * factor + 1e-6
        assert weights_from_densities(bumped, gamma).weights[i] >= wv.weights[i] - 1e-12


class TestFlags:
    def test_flag(self):
        assert confidence_flag(WeightVector(np.array([1.0]), 0.5), 1.0) == LOW_CONFIDENCE
        assert confidence_flag(2.0, 1.0) == CONFIDENT
        with pytest.raises(ValueError):
            confidence_flag(1.0, -1.0)


@pytest.fixture(scope="module")
def engine():
    r = np.random.default_rng(7)
    infos = [ModelInfo(samples=r.normal(-3, 1, (80, 1))), ModelInfo(samples=r.normal(3, 1, (80, 1)))]
    bundle = ModelBundle([linear_expert("l", 1.0), linear_expert("r", -1.0)], infos)
    return fit_smc(bundle, np.linspace(-7, 7, 100)[:, None], FAST)


class TestEngine:
    def test_domain_centres_get_their_model(self, engine):
        assert compute_weights(engine, None, np.array([-3.0])).weights[0] > 0.9
        assert compute_weights(engine, None, np.array([3.0])).weights[1] > 0.9

    def test_confidence_lower_far_away(self, engine):
        near = compute_weights(engine, None, np.array([3.0])).confidence
        far = compute_weights(engine, None, np.array([40.0])).confidence
        assert far < near

    def test_tau_is_test_percentile(self, engine):
        _, conf = engine.weights(np.linspace(-7, 7, 100)[:, None])
        assert engine.tau == pytest.approx(np.percentile(conf, 1.0))

    def test_json_round_trip_bit_identical(self, engine):
        back = LatentDensitySet.from_json(json.loads(json.dumps(engine.to_json())))
        x = np.linspace(-8, 8, 17)[:, None]
        np.testing.assert_array_equal(back.weights(x)[0], engine.weights(x)[0])
        assert back.tau == engine.tau

    def test_vector_required(self, engine):
        with pytest.raises(ValueError):
            compute_weights(engine, None, np.zeros((2, 1)))

    def test_sample_counts_recorded(self, engine):
        assert engine.samples_per_model == [80, 80]

    def test_draws_when_info_samples_disabled(self, toy_regression_bundle):
        eng = fit_smc(toy_regression_bundle, np.zeros((10, 1)),
                      replace(FAST, use_info_samples=False, n_latent_samples=37))
        assert eng.samples_per_model == [37, 37]


def test_empty_information_rejected(toy_regression_bundle):
    with pytest.raises(ValueError):
        ModelInfo(samples=np.zeros((0, 1)))
