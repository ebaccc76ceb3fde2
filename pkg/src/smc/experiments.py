"""Desk-scale benchmark scenarios and the benchmark runner.

Regression: two experts trained on Gaussian feature domains with noisy
``sin`` targets (variants ``standard``, ``gap``, ``overlap``).
Digits: ten mostly-single-digit classifiers on the 8x8 handwritten digits.
"""
from __future__ import annotations

import csv
import gzip
import json
import time
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Dataset, ExpertModel, ModelBundle, auroc_ovr, relative_rmse, rmse
from .density import ModelInfo, fit_density
from .ensembles import (
    bma_weights,
    predict_entropy_weighted,
    predict_fixed,
    predict_global_average,
    predict_majority_vote,
    predict_smc,
    predict_smc_bma,
)
from .nn import AdamState, GradientTape, Layer, Mlp, adam_step, backward, forward, init_mlp
from .pipeline import InsufficientInformation, PipelineSettings, fit_smc
from .representation import RepresentationConfig, model_separation, rng_stream

DOMAIN_STD = 3.5
NOISE_STD = 0.1
REGRESSION_CENTERS = {"standard": (5.0, 15.0), "gap": (0.0, 20.0), "overlap": (10.0, 10.0)}
SCENARIOS = ("regression-standard", "regression-gap", "regression-overlap", "digits")
BENCH_STRATEGIES = (
    "smc", "smc_rec_only", "global_average", "majority_vote", "entropy_weighted",
    "bma", "smc_bma", "oracle",
)
REGRESSION_DEFAULT = ("smc", "global_average", "oracle")
DIGITS_DEFAULT = ("smc", "smc_rec_only", "global_average", "majority_vote", "entropy_weighted")
GAP_REGION = (8.0, 12.0)
CORE_REGION = (-2.0, 2.0)
# Four model samples per step instead of one: with a single draw the pair
# losses are noisy enough that the learnt map occasionally folds the region
# between domains onto them (gap/core confidence ratio up to 0.14).
BENCH_SETTINGS = PipelineSettings(representation=RepresentationConfig(samples_per_model=4))


def fold_standardization(net: Mlp, mean, std) -> Mlp:
    """Equivalent network that takes raw inputs instead of ``(x - mean) / std``."""
    first = net.layers[0]
    w = first.weight / np.asarray(std)[:, None]
    b = first.bias - np.asarray(mean) @ w
    return Mlp([Layer(w, b, first.activation)] + [l for l in net.layers[1:]])


@dataclass(frozen=True)
class MlpPredictor:
    """Callable wrapper that keeps the network reachable for export."""

    net: Mlp
    column: int | None = None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        out = forward(self.net, x)
        return out if self.column is None else out[:, self.column]


def mlp_expert(identity: str, net: Mlp, kind: str = "regression") -> ExpertModel:
    if kind == "regression":
        return ExpertModel(identity, MlpPredictor(net, 0), "regression",
                           input_dim=net.input_dim, param_count=net.n_params())
    return ExpertModel(identity, MlpPredictor(net), "classification",
                       n_classes=net.output_dim, input_dim=net.input_dim,
                       param_count=net.n_params())


def train_regressor(
    train: Dataset,
    rng: np.random.Generator,
    hidden: Sequence[int] = (16, 16),
    steps: int = 2000,
    lr: float = 1e-2,
    restarts: int = 3,
) -> Mlp:
    """Full-batch MSE training with a cosine learning-rate decay.

    Keeps the restart with the lowest training loss; the returned network
    takes raw (unstandardised) inputs.
    """
    x, y = train.features, train.targets
    mean, std = x.mean(axis=0), x.std(axis=0)
    std[std == 0] = 1.0
    xs = (x - mean) / std
    n = len(x)
    best = None
    for _ in range(restarts):
        net = init_mlp([x.shape[1], *hidden, 1], rng, bias_init="uniform")
        params = net.params()
        state = AdamState.zeros_like(params)
        for s in range(steps):
            tape = GradientTape()
            out = forward(net, xs, tape)[:, 0]
            grads, _ = backward(net, tape, (2.0 * (out - y) / n)[:, None])
            adam_step(params, grads, state, lr=lr * 0.5 * (1 + np.cos(np.pi * s / steps)))
        loss = float(np.mean((forward(net, xs)[:, 0] - y) ** 2))
        if best is None or loss < best[0]:
            best = (loss, net)
    return fold_standardization(best[1], mean, std)


def train_classifier(
    train: Dataset,
    n_classes: int,
    rng: np.random.Generator,
    hidden: Sequence[int] = (32,),
    steps: int = 1000,
    lr: float = 1e-2,
    input_scale: float = 1.0,
) -> Mlp:
    """Softmax MLP trained with full-batch cross-entropy."""
    x = train.features / input_scale
    y = train.targets.astype(int)
    n = len(x)
    onehot = np.eye(n_classes)[y]
    net = init_mlp([x.shape[1], *hidden, n_classes], rng, output="softmax")
    params = net.params()
    state = AdamState.zeros_like(params)
    for _ in range(steps):
        tape = GradientTape()
        p = forward(net, x, tape)
        upstream = -onehot / np.maximum(p, 1e-300) / n
        grads, _ = backward(net, tape, upstream)
        adam_step(params, grads, state, lr=lr)
    d = x.shape[1]
    return fold_standardization(net, np.zeros(d), np.full(d, input_scale))


def sine_target(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return np.sin(x[:, 0]) + rng.normal(0.0, NOISE_STD, len(x))


@dataclass
class Scenario:
    """Frozen experts, the data they were trained on, and the shared test set."""

    name: str
    seed: int
    bundle: ModelBundle
    train_sets: list[Dataset]
    test: Dataset
    validation: Dataset
    centers: tuple[float, ...] = ()


def make_regression_scenario(
    variant: str = "standard",
    seed: int = 0,
    n_train: int = 500,
    n_test: int = 500,
    n_validation: int = 200,
    expert_steps: int = 2000,
) -> Scenario:
    """Two 1-D experts whose training domains are ``N(center_j, 3.5^2)``.

    Test features are uniform over ``[min center - 5, max center + 5]``.
    Each model's information is its own training feature sample.
    """
    if variant not in REGRESSION_CENTERS:
        raise ValueError(f"unknown regression variant {variant!r}")
    centers = REGRESSION_CENTERS[variant]
    data_rng = rng_stream(seed, f"scenario.regression.{variant}.data")
    train_rng = rng_stream(seed, f"scenario.regression.{variant}.experts")
    models, infos, trains = [], [], []
    for j, c in enumerate(centers):
        x = data_rng.normal(c, DOMAIN_STD, (n_train, 1))
        ds = Dataset(x, sine_target(x, data_rng))
        net = train_regressor(ds, train_rng, steps=expert_steps)
        models.append(mlp_expert(f"model_{j + 1}", net))
        infos.append(ModelInfo(samples=x))
        trains.append(ds)
    lo, hi = min(centers) - 5.0, max(centers) + 5.0
    x_test = data_rng.uniform(lo, hi, (n_test, 1))
    x_val = data_rng.uniform(lo, hi, (n_validation, 1))
    return Scenario(
        name=f"regression-{variant}",
        seed=seed,
        bundle=ModelBundle(models, infos),
        train_sets=trains,
        test=Dataset(x_test, sine_target(x_test, data_rng)),
        validation=Dataset(x_val, sine_target(x_val, data_rng)),
        centers=centers,
    )


def oracle_weights(x: np.ndarray, centers: Sequence[float], std: float = DOMAIN_STD) -> np.ndarray:
    """Indicator of the model whose true domain density is largest (ties shared)."""
    x = np.atleast_2d(x)
    logp = np.column_stack([-0.5 * ((x[:, 0] - c) / std) ** 2 for c in centers])
    best = logp == logp.max(axis=1, keepdims=True)
    return best / best.sum(axis=1, keepdims=True)


def predict_oracle(scenario: Scenario, x) -> np.ndarray:
    xb = np.atleast_2d(x)
    w = oracle_weights(xb, scenario.centers)
    preds = scenario.bundle.predict_all(xb)
    return np.einsum("nm,mn->m", preds, w)


def default_digits_path() -> Path:
    return Path(str(resources.files("smc") / "data" / "digits.csv.gz"))


def load_digits_corpus(path=None) -> tuple[np.ndarray, np.ndarray]:
    """8x8 digits as rows of 64 pixel intensities followed by the label."""
    path = Path(path) if path is not None else default_digits_path()
    if not path.exists():
        raise FileNotFoundError(f"digits corpus not found: {path}")
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt") as fh:
        try:
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise ValueError(f"{path}: malformed digits corpus ({exc})") from None
    if data.shape[1] != 65:
        raise ValueError(f"{path}: expected 65 columns (64 pixels + label), got {data.shape[1]}")
    return data[:, :64], data[:, 64].astype(int)


@dataclass
class DigitsScenario:
    seed: int
    experts: list[ExpertModel]
    train_sets: list[Dataset]
    test: Dataset
    validation: Dataset
    name: str = "digits"

    def bundle(self, info_count: int | None = None) -> ModelBundle:
        """Bundle whose information is the first ``info_count`` training features
        of each model (all of them when ``None``)."""
        if info_count is not None and info_count < 1:
            raise InsufficientInformation(
                "info_count must be >= 1: with no feature samples no density can be fitted "
                "and SMC degenerates to chance (AUROC 0.5)"
            )
        infos = [
            ModelInfo(samples=t.features if info_count is None else t.features[:info_count])
            for t in self.train_sets
        ]
        return ModelBundle(self.experts, infos)


def make_digits_scenario(
    seed: int = 0,
    corpus_path=None,
    test_fraction: float = 0.3,
    validation_fraction: float = 0.1,
    specialty_fraction: float = 0.9,
    expert_steps: int = 1000,
) -> DigitsScenario:
    """Ten classifiers, each trained on a tenth of the training pool made of
    ~90% one digit and ~10% random other examples."""
    x, y = load_digits_corpus(corpus_path)
    rng = rng_stream(seed, "scenario.digits.split")
    train_rng = rng_stream(seed, "scenario.digits.experts")
    order = rng.permutation(len(x))
    n_test = int(round(test_fraction * len(x)))
    n_val = int(round(validation_fraction * len(x)))
    test_idx, val_idx, pool = order[:n_test], order[n_test:n_test + n_val], order[n_test + n_val:]
    share = len(pool) // 10
    n_own = int(round(specialty_fraction * share))
    experts, trains = [], []
    for digit in range(10):
        own = pool[y[pool] == digit][:n_own]
        rest = pool[y[pool] != digit]
        others = rng.choice(rest, size=share - len(own), replace=False)
        idx = rng.permutation(np.concatenate([own, others]))
        ds = Dataset(x[idx], y[idx])
        net = train_classifier(ds, 10, train_rng, steps=expert_steps, input_scale=16.0)
        experts.append(mlp_expert(f"digit_{digit}", net, "classification"))
        trains.append(ds)
    return DigitsScenario(
        seed=seed,
        experts=experts,
        train_sets=trains,
        test=Dataset(x[test_idx], y[test_idx]),
        validation=Dataset(x[val_idx], y[val_idx]),
    )


def specialty_accuracy(scenario: DigitsScenario, digit: int) -> float:
    """Accuracy of expert ``digit`` on held-out test images of that digit."""
    mask = scenario.test.targets == digit
    pred = scenario.experts[digit].predict(scenario.test.features[mask]).argmax(axis=1)
    return float(np.mean(pred == digit))


@dataclass
class ReportRow:
    scenario: str
    seed: int
    info_count: str
    strategy: str
    metric: str
    value: float
    seconds: float = 0.0


@dataclass
class ExperimentReport:
    """Metric rows plus long-format plot data.

    Wall-clock seconds are kept in memory and written to a separate timings
    file so the report files themselves are reproducible byte for byte.
    """

    rows: list[ReportRow] = field(default_factory=list)
    plot: list[tuple[int, float, str, float]] = field(default_factory=list)

    def add(self, *args, **kw) -> None:
        self.rows.append(ReportRow(*args, **kw))

    def extend(self, other: "ExperimentReport") -> None:
        self.rows += other.rows
        self.plot += other.plot

    def value(self, strategy: str, metric: str, info_count: str | None = None, seed=None) -> list[float]:
        return [r.value for r in self.rows
                if r.strategy == strategy and r.metric == metric
                and (info_count is None or r.info_count == info_count)
                and (seed is None or r.seed == seed)]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scenario", "seed", "info_count", "strategy", "metric", "value"])
            for r in self.rows:
                w.writerow([r.scenario, r.seed, r.info_count, r.strategy, r.metric, repr(float(r.value))])

    def write_json(self, path) -> None:
        rows = [{"scenario": r.scenario, "seed": r.seed, "info_count": r.info_count,
                 "strategy": r.strategy, "metric": r.metric, "value": float(r.value)}
                for r in self.rows]
        with open(path, "w") as fh:
            json.dump({"rows": rows}, fh, indent=1)
            fh.write("\n")

    def write_plot_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed", "x", "series", "value"])
            for seed, x, series, value in self.plot:
                w.writerow([seed, repr(float(x)), series, repr(float(value))])

    def write_timings(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scenario", "seed", "info_count", "strategy", "metric", "seconds"])
            for r in self.rows:
                w.writerow([r.scenario, r.seed, r.info_count, r.strategy, r.metric, f"{r.seconds:.3f}"])

    def seed_mean(self, strategy: str, metric: str, info_count: str | None = None) -> float:
        vals = self.value(strategy, metric, info_count)
        if not vals:
            raise KeyError(f"no rows for {strategy}/{metric}/{info_count}")
        return float(np.mean(vals))


def rec_only(settings: PipelineSettings) -> PipelineSettings:
    rep = settings.representation
    return replace(settings, representation=replace(rep, weights=replace(rep.weights, con=0.0, sep=0.0)))


def _check_strategies(names: Sequence[str]) -> list[str]:
    bad = [n for n in names if n not in BENCH_STRATEGIES]
    if bad:
        raise ValueError(f"unknown strategies {bad}; choose from {BENCH_STRATEGIES}")
    return list(names)


def run_regression_benchmark(
    scenario: Scenario,
    strategies: Sequence[str] = REGRESSION_DEFAULT,
    settings: PipelineSettings = BENCH_SETTINGS,
    plot_points: int = 201,
) -> ExperimentReport:
    strategies = _check_strategies(strategies)
    settings = settings.with_seed(scenario.seed)
    report = ExperimentReport()
    bundle, test = scenario.bundle, scenario.test
    engines = {}
    for name in ("smc", "smc_rec_only"):
        if name in strategies or (name == "smc" and "smc_bma" in strategies):
            t0 = time.perf_counter()
            engines[name] = (fit_smc(bundle, test, settings if name == "smc" else rec_only(settings)),
                             time.perf_counter() - t0)
    bma = bma_weights(bundle, scenario.validation) if {"bma", "smc_bma"} & set(strategies) else None

    def run(name, x):
        if name in engines:
            return predict_smc(bundle, engines[name][0], x, settings.gamma)[0]
        if name == "global_average":
            return predict_global_average(bundle, x)
        if name == "oracle":
            return predict_oracle(scenario, x)
        if name == "bma":
            return predict_fixed(bundle, bma, x)
        if name == "smc_bma":
            return predict_smc_bma(bundle, engines["smc"][0], bma, x, settings.gamma)
        raise ValueError(f"strategy {name!r} does not apply to regression")

    results = {}
    for name in strategies:
        t0 = time.perf_counter()
        pred = run(name, test.features)
        secs = time.perf_counter() - t0 + (engines[name][1] if name in engines else 0.0)
        results[name] = rmse(pred, test.targets)
        report.add(scenario.name, scenario.seed, "", name, "rmse", results[name], secs)
        report.add(scenario.name, scenario.seed, "", name, "relative_rmse",
                   relative_rmse(pred, test.targets), secs)
    if "smc" in results and "global_average" in results:
        gap = abs(results["smc"] - results["global_average"]) / results["global_average"]
        report.add(scenario.name, scenario.seed, "", "smc", "rel_gap_vs_global_average", gap)
    for name, (engine, _) in engines.items():
        lo, hi = GAP_REGION
        _, conf_gap = engine.weights(np.linspace(lo, hi, 101)[:, None])
        lo, hi = CORE_REGION
        _, conf_core = engine.weights(np.linspace(lo, hi, 101)[:, None])
        report.add(scenario.name, scenario.seed, "", name, "confidence_gap_ratio",
                   float(conf_gap.mean() / conf_core.mean()))

    xs = test.features[:, 0]
    grid = np.linspace(xs.min(), xs.max(), plot_points)[:, None]
    for g, v in zip(grid[:, 0], np.sin(grid[:, 0])):
        report.plot.append((scenario.seed, g, "truth", v))
    for j, preds in enumerate(bundle.predict_all(grid)):
        report.plot += [(scenario.seed, g, bundle.models[j].identity, v) for g, v in zip(grid[:, 0], preds)]
    for name in strategies:
        report.plot += [(scenario.seed, g, name, v) for g, v in zip(grid[:, 0], run(name, grid))]
    if "smc" in engines:
        w, conf = engines["smc"][0].weights(grid)
        report.plot += [(scenario.seed, g, "smc_confidence", c) for g, c in zip(grid[:, 0], conf)]
        for j in range(w.shape[1]):
            report.plot += [(scenario.seed, g, f"smc_weight_{j + 1}", c) for g, c in zip(grid[:, 0], w[:, j])]
    return report


def _count_label(c: int | None) -> str:
    return "full" if c is None else str(c)


def run_digits_benchmark(
    scenario: DigitsScenario,
    strategies: Sequence[str] = DIGITS_DEFAULT,
    settings: PipelineSettings = BENCH_SETTINGS,
    info_counts: Sequence[int | None] = (None,),
) -> ExperimentReport:
    strategies = _check_strategies(strategies)
    if "oracle" in strategies:
        raise ValueError("the oracle strategy only applies to regression scenarios")
    settings = settings.with_seed(scenario.seed)
    report = ExperimentReport()
    test = scenario.test
    labels = test.targets.astype(int)
    fixed = {}
    base_bundle = scenario.bundle(None)
    for name in strategies:
        t0 = time.perf_counter()
        if name == "global_average":
            fixed[name] = predict_global_average(base_bundle, test.features)
        elif name == "majority_vote":
            fixed[name] = predict_majority_vote(base_bundle, test.features)
        elif name == "entropy_weighted":
            fixed[name] = predict_entropy_weighted(base_bundle, test.features)
        elif name == "bma":
            fixed[name] = predict_fixed(base_bundle, bma_weights(base_bundle, scenario.validation),
                                        test.features)
        else:
            continue
        fixed[name] = (fixed[name], time.perf_counter() - t0)
    bma = bma_weights(base_bundle, scenario.validation) if "smc_bma" in strategies else None
    for c in info_counts:
        label = _count_label(c)
        x_plot = 0.0 if c is None else float(c)
        for name in strategies:
            if name in fixed:
                pred, secs = fixed[name]
                value = auroc_ovr(pred, labels)
                report.add(scenario.name, scenario.seed, label, name, "auroc", value, secs)
                report.plot.append((scenario.seed, x_plot, name, value))
                continue
            if name not in ("smc", "smc_rec_only", "smc_bma"):
                continue
            t0 = time.perf_counter()
            bundle = scenario.bundle(c)
            cfg = rec_only(settings) if name == "smc_rec_only" else settings
            engine = fit_smc(bundle, test, cfg)
            if name == "smc_bma":
                pred = predict_smc_bma(bundle, engine, bma, test.features, settings.gamma)
            else:
                pred = predict_smc(bundle, engine, test.features, settings.gamma)[0]
            value = auroc_ovr(pred, labels)
            secs = time.perf_counter() - t0
            report.add(scenario.name, scenario.seed, label, name, "auroc", value, secs)
            report.plot.append((scenario.seed, x_plot, name, value))
            sep = model_separation(engine.latent_map, [fit_density(i) for i in bundle.infos],
                                   scenario.seed)
            report.add(scenario.name, scenario.seed, label, name, "latent_separation", sep)
    return report


def run_benchmark(
    scenario: str,
    strategies: Sequence[str] | None = None,
    seed: int = 0,
    settings: PipelineSettings = BENCH_SETTINGS,
    info_counts: Sequence[int | None] = (None,),
    corpus_path=None,
) -> ExperimentReport:
    """Build the named scenario for ``seed`` and evaluate the strategies on it."""
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")
    if scenario == "digits":
        sc = make_digits_scenario(seed, corpus_path)
        return run_digits_benchmark(sc, strategies or DIGITS_DEFAULT, settings, info_counts)
    sc = make_regression_scenario(scenario.split("-", 1)[1], seed)
    return run_regression_benchmark(sc, strategies or REGRESSION_DEFAULT, settings)
