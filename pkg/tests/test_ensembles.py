import numpy as np
import pytest

from smc.core import Dataset, ExpertModel, ModelBundle
from smc.density import ModelInfo
from smc.ensembles import (
    EnsembleStrategy,
    bic_weights,
    bma_weights,
    combine,
    entropy_weights,
    model_bics,
    predict_entropy_weighted,
    predict_fixed,
    predict_global_average,
    predict_majority_vote,
    strategy_names,
)

from conftest import linear_expert
from oracles import naive_bic_weights


def fixed_class_bundle(rows):
    """Classification experts that ignore x and return the given probability rows."""
    rows = [np.asarray(r, dtype=float) for r in rows]
    models = [ExpertModel(f"m{i}", (lambda r: lambda x: np.tile(r, (len(x), 1)))(r),
                          "classification", n_classes=len(r), param_count=1)
              for i, r in enumerate(rows)]
    infos = [ModelInfo(samples=np.zeros((2, 1))) for _ in rows]
    return ModelBundle(models, infos)


class TestBma:
    def test_reference_values(self):
        np.testing.assert_allclose(bic_weights([0.0, 2.0]), [0.7311, 0.2689], atol=1e-4)

    def test_log_space_matches_naive(self, rng):
        for _ in range(20):
            b = rng.uniform(-50, 50, 4)
            np.testing.assert_allclose(bic_weights(b), naive_bic_weights(b), rtol=1e-12)

    def test_huge_bics_stay_finite(self):
        w = bic_weights([1e6, 1e6 + 2])
        np.testing.assert_allclose(w, [0.7311, 0.2689], atol=1e-4)

    def test_regression_bic_prefers_better_model(self, rng):
        x = rng.uniform(-1, 1, 100)
        val = Dataset(x, x + rng.normal(0, 0.1, 100))
        infos = [ModelInfo(samples=np.zeros((2, 1)))] * 2
        bundle = ModelBundle([linear_expert("good", 1.0), linear_expert("bad", -1.0)], infos)
        bics = model_bics(bundle, val)
        assert bics[0] < bics[1]
        w = bma_weights(bundle, val)
        assert w[0] > 0.99

    def test_needs_targets(self):
        infos = [ModelInfo(samples=np.zeros((2, 1)))] * 2
        bundle = ModelBundle([linear_expert("a", 1.0), linear_expert("b", 2.0)], infos)
        with pytest.raises(ValueError):
            model_bics(bundle, Dataset(np.zeros(3)))


class TestGlobalEnsembles:
    def test_average_regression(self):
        infos = [ModelInfo(samples=np.zeros((2, 1)))] * 2
        bundle = ModelBundle([linear_expert("a", 1.0), linear_expert("b", 3.0)], infos)
        assert predict_global_average(bundle, np.array([2.0])) == pytest.approx(4.0)

    def test_majority_vote_tie_lowest_index(self):
        b = fixed_class_bundle([[0.1, 0.9, 0.0], [0.8, 0.1, 0.1]])
        np.testing.assert_array_equal(predict_majority_vote(b, np.zeros(1)), [1, 0, 0])
        b = fixed_class_bundle([[0.1, 0.0, 0.9], [0.8, 0.1, 0.1]])
        np.testing.assert_array_equal(predict_majority_vote(b, np.zeros(1)), [1, 0, 0])

    def test_majority_vote_counts(self):
        b = fixed_class_bundle([[0.1, 0.9], [0.2, 0.8], [0.7, 0.3]])
        np.testing.assert_array_equal(predict_majority_vote(b, np.zeros((2, 1))), [[0, 1], [0, 1]])

    def test_entropy_weights(self):
        preds = np.array([[[0.5, 0.5]], [[0.99, 0.01]]])
        h = np.array([np.log(2), -(0.99 * np.log(0.99) + 0.01 * np.log(0.01))])
        want = np.exp(1 / h) / np.exp(1 / h).sum()
        np.testing.assert_allclose(entropy_weights(preds)[0], want, rtol=1e-12)

    def test_entropy_floor_for_one_hot(self):
        preds = np.array([[[1.0, 0.0]], [[0.5, 0.5]]])
        w = entropy_weights(preds)
        assert np.isfinite(w).all() and w[0, 0] == pytest.approx(1.0)

    def test_entropy_weighted_on_simplex(self):
        b = fixed_class_bundle([[0.2, 0.8], [0.6, 0.4]])
        y = predict_entropy_weighted(b, np.zeros((3, 1)))
        np.testing.assert_allclose(y.sum(axis=1), 1.0)

    def test_classification_only(self, toy_regression_bundle):
        with pytest.raises(ValueError):
            predict_majority_vote(toy_regression_bundle, np.zeros(1))
        with pytest.raises(ValueError):
            predict_entropy_weighted(toy_regression_bundle, np.zeros(1))

    def test_fixed_weights_validated(self, toy_regression_bundle):
        with pytest.raises(ValueError, match="simplex"):
            predict_fixed(toy_regression_bundle, [0.7, 0.7], np.zeros(1))

    def test_combine_per_instance(self, toy_regression_bundle):
        x = np.array([[1.0], [2.0]])
        preds = toy_regression_bundle.predict_all(x)
        y = combine(toy_regression_bundle, preds, np.array([[1.0, 0.0], [0.0, 1.0]]))
        np.testing.assert_allclose(y, [1.0, -2.0])


class TestStrategy:
    def test_requirements(self):
        with pytest.raises(ValueError):
            EnsembleStrategy("smc")
        with pytest.raises(ValueError):
            EnsembleStrategy("bma")
        with pytest.raises(ValueError):
            EnsembleStrategy("voting")

    def test_dispatch(self, toy_regression_bundle):
        s = EnsembleStrategy("fixed", fixed_weights=np.array([0.25, 0.75]))
        assert s.predict(toy_regression_bundle, np.array([4.0])) == pytest.approx(-2.0)
        assert EnsembleStrategy("global_average").predict(toy_regression_bundle, np.array([4.0])) == 0.0

    def test_names(self):
        assert strategy_names(["smc", "bma"]) == ["smc", "bma"]
        with pytest.raises(ValueError):
            strategy_names(["nope"])
