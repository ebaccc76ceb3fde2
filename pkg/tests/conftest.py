import numpy as np
import pytest

from smc.core import ExpertModel, ModelBundle
from smc.density import ModelInfo


def linear_expert(name, slope, intercept=0.0):
    return ExpertModel(name, lambda x: slope * x[:, 0] + intercept, "regression",
                       input_dim=1, param_count=2)


def softmax_expert(name, logits_fn, k):
    def predict(x):
        a = logits_fn(x)
        e = np.exp(a - a.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)
    return ExpertModel(name, predict, "classification", n_classes=k, input_dim=None,
                       param_count=4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_regression_bundle():
    """Two 1-D experts whose domains are N(-3, 1) and N(3, 1)."""
    r = np.random.default_rng(7)
    infos = [ModelInfo(samples=r.normal(-3, 1, (80, 1))), ModelInfo(samples=r.normal(3, 1, (80, 1)))]
    return ModelBundle([linear_expert("left", 1.0), linear_expert("right", -1.0)], infos)


@pytest.fixture
def toy_classification_bundle():
    """Two 2-D, 3-class experts with sample information."""
    r = np.random.default_rng(8)
    w1 = r.normal(size=(2, 3))
    w2 = r.normal(size=(2, 3))
    infos = [ModelInfo(samples=r.normal(-2, 1, (40, 2))), ModelInfo(samples=r.normal(2, 1, (40, 2)))]
    return ModelBundle([softmax_expert("a", lambda x: x @ w1, 3),
                        softmax_expert("b", lambda x: x @ w2, 3)], infos)


def two_population_cohort(seed=0, n=300):
    """Demographics table and pooled cohort for two populations 10 sigma apart.

    Returns (table JSON, covariate matrix, origin indices, oracle tables).
    """
    r = np.random.default_rng(seed)
    table = {
        "covariates": [{"name": "age", "type": "continuous"}, {"name": "male", "type": "binary"}],
        "models": {"young": {"age": {"mean": 30.0, "std": 3.0}, "male": {"p": 0.4}},
                   "old": {"age": {"mean": 60.0, "std": 3.0}, "male": {"p": 0.7}}},
    }
    origin = np.repeat([0, 1], n // 2)
    age = np.where(origin == 0, r.normal(30, 3, n), r.normal(60, 3, n))
    male = (r.random(n) < np.where(origin == 0, 0.4, 0.7)).astype(float)
    oracle = [[("c", 30.0, 3.0), ("b", 0.4)], [("c", 60.0, 3.0), ("b", 0.7)]]
    return table, np.column_stack([age, male]), origin, oracle


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
