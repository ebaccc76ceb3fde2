import json
from dataclasses import replace

import numpy as np
import pytest

from smc.experiments import (
    BENCH_SETTINGS,
    DOMAIN_STD,
    ExperimentReport,
    fold_standardization,
    load_digits_corpus,
    make_digits_scenario,
    make_regression_scenario,
    oracle_weights,
    rec_only,
    run_benchmark,
)
from smc.nn import forward, init_mlp
from smc.pipeline import InsufficientInformation, PipelineSettings


def test_fold_standardization_is_exact(rng):
    net = init_mlp([3, 4, 1], rng)
    mean, std = rng.normal(size=3), rng.uniform(0.5, 3, 3)
    x = rng.normal(size=(6, 3))
    np.testing.assert_allclose(forward(fold_standardization(net, mean, std), x),
                               forward(net, (x - mean) / std), rtol=1e-12)


def test_oracle_weights():
    w = oracle_weights(np.array([[0.0], [10.0], [20.0]]), (5.0, 15.0))
    np.testing.assert_array_equal(w, [[1, 0], [0.5, 0.5], [0, 1]])


def test_regression_scenario_layout():
    sc = make_regression_scenario("gap", seed=3, n_train=100, n_test=50, n_validation=20,
                                  expert_steps=50)
    assert sc.centers == (0.0, 20.0)
    assert len(sc.test) == 50 and len(sc.validation) == 20
    assert sc.test.features.min() >= -5.0 and sc.test.features.max() <= 25.0
    for info, c in zip(sc.bundle.infos, sc.centers):
        assert info.samples.mean() == pytest.approx(c, abs=4 * DOMAIN_STD / 10)
    with pytest.raises(ValueError):
        make_regression_scenario("sideways")


def test_regression_scenario_deterministic():
    a = make_regression_scenario("standard", 1, n_train=50, n_test=20, expert_steps=30)
    b = make_regression_scenario("standard", 1, n_train=50, n_test=20, expert_steps=30)
    np.testing.assert_array_equal(a.test.features, b.test.features)
    np.testing.assert_array_equal(a.bundle.predict_all(a.test.features),
                                  b.bundle.predict_all(b.test.features))


def test_digits_corpus_shape():
    x, y = load_digits_corpus()
    assert x.shape == (1797, 64) and sorted(set(y.tolist())) == list(range(10))
    assert x.min() >= 0 and x.max() <= 16


def test_digits_scenario_specialists():
    sc = make_digits_scenario(0, expert_steps=20)
    assert len(sc.experts) == 10
    for digit, train in enumerate(sc.train_sets):
        assert np.mean(train.targets == digit) >= 0.85
    assert sc.bundle(3).infos[0].samples.shape == (3, 64)
    with pytest.raises(InsufficientInformation):
        sc.bundle(0)


def test_rec_only_zeroes_pair_terms():
    s = rec_only(PipelineSettings())
    assert s.representation.weights.con == 0 and s.representation.weights.sep == 0
    assert s.representation.weights.rec == 1


def test_report_files_exclude_timings(tmp_path):
    r = ExperimentReport()
    r.add("s", 0, "full", "smc", "rmse", 0.5, 12.3)
    r.plot.append((0, 1.0, "smc", 0.2))
    r.write_csv(tmp_path / "r.csv")
    r.write_json(tmp_path / "r.json")
    r.write_timings(tmp_path / "t.csv")
    assert "12.3" not in (tmp_path / "r.csv").read_text()
    assert json.loads((tmp_path / "r.json").read_text())["rows"][0]["value"] == 0.5
    assert "12.300" in (tmp_path / "t.csv").read_text()
    assert r.seed_mean("smc", "rmse") == 0.5


def test_unknown_benchmark_scenario():
    with pytest.raises(ValueError):
        run_benchmark("cifar")


def test_oracle_rejected_on_digits():
    with pytest.raises(ValueError):
        run_benchmark("digits", ["oracle"], settings=PipelineSettings())


def test_bench_settings_differ_only_in_model_samples():
    assert BENCH_SETTINGS.representation.samples_per_model == 4
    assert replace(BENCH_SETTINGS.representation, samples_per_model=1) == PipelineSettings().representation
