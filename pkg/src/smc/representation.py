"""Representation learning for instance-wise weighting.

An autoencoder ``f`` (encoder) / ``g`` (decoder) is trained on the test
features together with points sampled from every model's domain density.
Three terms shape the latent space:

* reconstruction: ``sum ||g(f(x)) - x||^2 + beta ||f(x)||^2`` over test and
  model points,
* connection: pulls model samples together in proportion to how similarly
  the two models predict at the first point of the pair,
* separation: pushes apart samples that came from different models.

All pair sums run over ordered pairs, self-pairs included (they vanish).
"""
from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import kernels
from .core import Dataset, ModelBundle
from .density import DensityModel, fit_density
from .nn import AdamState, GradientTape, Mlp, adam_step, backward, forward, init_mlp, mlp_from_json, mlp_to_json

SCALE_FLOOR = 1e-6
MAX_SAMPLES_PER_MODEL = 8


class TrainingDivergence(RuntimeError):
    """A loss term became non-finite during optimisation."""


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named purpose under one root seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


@dataclass(frozen=True)
class LossWeights:
    rec: float = 1.0
    con: float = 1.0
    sep: float = 1.0
    beta: float = 1e-3

    def __post_init__(self):
        for name in ("rec", "con", "sep", "beta"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")


@dataclass(frozen=True)
class RepresentationConfig:
    steps: int = 3000
    seed: int = 0
    latent_dim: int = 2
    hidden: tuple[int, ...] = (64, 32)
    weights: LossWeights = field(default_factory=LossWeights)
    samples_per_model: int = 1
    batch_size: int = 64
    lr: float = 1e-3
    # model samples per density used to fit the input standardisation
    standardize_samples: int = 256
    regression_scale: float | None = None
    # Lower bound on beta per separated model sample. The separation term is
    # unbounded below; a latent-norm penalty at least this large keeps the
    # latent scale finite. Set to 0 to use ``weights.beta`` verbatim.
    beta_floor: float = 0.5

    def __post_init__(self):
        if self.beta_floor < 0:
            raise ValueError("beta_floor must be non-negative")
        if not 1 <= self.samples_per_model <= MAX_SAMPLES_PER_MODEL:
            raise ValueError(f"samples_per_model must be in [1, {MAX_SAMPLES_PER_MODEL}]")
        if self.steps < 0 or self.batch_size < 1 or self.latent_dim < 1:
            raise ValueError("steps >= 0, batch_size >= 1 and latent_dim >= 1 are required")

    def to_json(self) -> dict:
        return {
            "steps": self.steps,
            "seed": self.seed,
            "latent_dim": self.latent_dim,
            "hidden": list(self.hidden),
            "lambda_rec": self.weights.rec,
            "lambda_con": self.weights.con,
            "lambda_sep": self.weights.sep,
            "beta": self.weights.beta,
            "samples_per_model": self.samples_per_model,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "beta_floor": self.beta_floor,
        }

    def effective_beta(self, n_models: int) -> float:
        """Latent-norm weight actually used when training with ``n_models`` experts."""
        floor = self.beta_floor * max(self.weights.sep, 1.0) * n_models * self.samples_per_model
        return max(self.weights.beta, floor)

    @classmethod
    def from_json(cls, obj: dict) -> "RepresentationConfig":
        known = {
            "steps", "seed", "latent_dim", "hidden", "lambda_rec", "lambda_con",
            "lambda_sep", "beta", "samples_per_model", "batch_size", "lr",
            "standardize_samples", "regression_scale", "beta_floor",
        }
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown representation config keys: {sorted(unknown)}")
        base = cls()
        w = LossWeights(
            rec=float(obj.get("lambda_rec", base.weights.rec)),
            con=float(obj.get("lambda_con", base.weights.con)),
            sep=float(obj.get("lambda_sep", base.weights.sep)),
            beta=float(obj.get("beta", base.weights.beta)),
        )
        kw = {k: obj[k] for k in ("steps", "seed", "latent_dim", "samples_per_model",
                                   "batch_size", "lr", "standardize_samples",
                                   "regression_scale", "beta_floor") if k in obj}
        if "hidden" in obj:
            kw["hidden"] = tuple(int(h) for h in obj["hidden"])
        return cls(weights=w, **kw)


@dataclass
class LatentMap:
    """Encoder/decoder pair plus the input standardisation applied before encoding."""

    encoder: Mlp
    decoder: Mlp
    mean: np.ndarray
    std: np.ndarray
    trace: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        d = self.encoder.input_dim
        if self.decoder.input_dim != self.encoder.output_dim or self.decoder.output_dim != d:
            raise ValueError("encoder and decoder dimensions are inconsistent")
        if self.mean.shape != (d,) or self.std.shape != (d,) or np.any(self.std <= 0):
            raise ValueError("standardisation must give d means and d positive stds")

    @property
    def input_dim(self) -> int:
        return self.encoder.input_dim

    @property
    def latent_dim(self) -> int:
        return self.encoder.output_dim

    def params(self) -> list[np.ndarray]:
        return self.encoder.params() + self.decoder.params()

    def standardize(self, x) -> np.ndarray:
        return (np.atleast_2d(np.asarray(x, dtype=np.float64)) - self.mean) / self.std

    def encode(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        z = forward(self.encoder, self.standardize(x))
        return z[0] if x.ndim == 1 else z

    def reconstruct(self, x) -> np.ndarray:
        """Reconstruction in standardised units."""
        return forward(self.decoder, forward(self.encoder, self.standardize(x)))

    def copy(self) -> "LatentMap":
        return LatentMap(self.encoder.copy(), self.decoder.copy(), self.mean.copy(), self.std.copy())

    def to_json(self) -> dict:
        return {
            "encoder": mlp_to_json(self.encoder),
            "decoder": mlp_to_json(self.decoder),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LatentMap":
        return cls(mlp_from_json(obj["encoder"]), mlp_from_json(obj["decoder"]),
                   np.asarray(obj["mean"]), np.asarray(obj["std"]))


def init_latent_map(
    dim: int,
    latent_dim: int,
    rng: np.random.Generator,
    hidden: Sequence[int] = (64, 32),
    mean=None,
    std=None,
) -> LatentMap:
    """Symmetric encoder ``d -> hidden -> z`` and decoder ``z -> reversed(hidden) -> d``."""
    enc = init_mlp([dim, *hidden, latent_dim], rng)
    dec = init_mlp([latent_dim, *reversed(hidden), dim], rng)
    mean = np.zeros(dim) if mean is None else mean
    std = np.ones(dim) if std is None else std
    return LatentMap(enc, dec, mean, std)


@dataclass(frozen=True)
class ModelSampleBatch:
    """Points sampled from the model densities.

    ``provenance[r]`` is the index of the density row ``r`` came from, and
    ``predictions[r, j]`` caches model ``j``'s prediction at ``points[r]``
    (shape (n, N) for regression, (n, N, K) for classification).
    """

    points: np.ndarray
    provenance: np.ndarray
    predictions: np.ndarray | None = None

    def __post_init__(self):
        if len(self.points) != len(self.provenance):
            raise ValueError("one provenance index per point is required")
        if self.predictions is not None and len(self.predictions) != len(self.points):
            raise ValueError("prediction cache does not match the points")


def sample_model_batch(
    densities: Sequence[DensityModel],
    rng: np.random.Generator,
    per_model: int = 1,
    bundle: ModelBundle | None = None,
) -> ModelSampleBatch:
    points = np.concatenate([d.sample(rng, per_model) for d in densities])
    prov = np.repeat(np.arange(len(densities)), per_model)
    preds = None
    if bundle is not None:
        preds = np.moveaxis(bundle.predict_all(points), 0, 1)
    return ModelSampleBatch(points, prov, preds)


def predictive_similarity(a, b, kind: str = "classification", scale: float = 1.0) -> float:
    """One minus a normalised distance between two predictions.

    Classification uses total variation; regression uses
    ``min(|a - b| / scale, 1)``.
    """
    if kind == "classification":
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if a.shape != b.shape or a.ndim != 1:
            raise ValueError("classification predictions must be equal-length probability vectors")
        return float(1.0 - 0.5 * np.abs(a - b).sum())
    if kind == "regression":
        if np.ndim(a) or np.ndim(b):
            raise ValueError("regression predictions must be scalars")
        if scale <= 0:
            raise ValueError("regression scale must be positive")
        return float(1.0 - min(abs(float(a) - float(b)) / scale, 1.0))
    raise ValueError(f"unknown output kind {kind!r}")


def similarity_matrix(batch: ModelSampleBatch, kind: str, scale: float | None = None) -> np.ndarray:
    """``S[a, b] = 1 - D(M_i(x_a) || M_j(x_a))`` with ``i, j`` the provenances of ``a, b``."""
    if batch.predictions is None:
        raise ValueError("connection loss needs the model prediction cache")
    p = batch.predictions
    rows = np.arange(len(batch.points))
    own = p[rows, batch.provenance]                 # M_{m(a)}(x_a)
    other = p[:, batch.provenance]                  # [a, b] -> M_{m(b)}(x_a)
    if kind == "classification":
        dist = 0.5 * np.abs(own[:, None, :] - other).sum(axis=-1)
    elif kind == "regression":
        if scale is None:
            scale = float(p.max() - p.min())
        scale = max(scale, SCALE_FLOOR)
        dist = np.minimum(np.abs(own[:, None] - other) / scale, 1.0)
    else:
        raise ValueError(f"unknown output kind {kind!r}")
    return 1.0 - dist


def separation_matrix(provenance) -> np.ndarray:
    prov = np.asarray(provenance)
    return -0.5 * (prov[:, None] != prov[None, :]).astype(np.float64)


def _encoder_backward(latent_map: LatentMap, x_std: np.ndarray, dz: np.ndarray) -> list[np.ndarray]:
    tape = GradientTape()
    forward(latent_map.encoder, x_std, tape)
    enc_grads, _ = backward(latent_map.encoder, tape, dz)
    return enc_grads + [np.zeros_like(p) for p in latent_map.decoder.params()]


def _rec_parts(latent_map: LatentMap, x_std: np.ndarray, beta: float):
    """Reconstruction value, decoder grads and dL/dz for standardised inputs."""
    tape_e, tape_d = GradientTape(), GradientTape()
    z = forward(latent_map.encoder, x_std, tape_e)
    r = forward(latent_map.decoder, z, tape_d)
    diff = r - x_std
    value = float(np.sum(diff * diff) + beta * np.sum(z * z))
    dec_grads, dz = backward(latent_map.decoder, tape_d, 2.0 * diff)
    dz = dz + 2.0 * beta * z
    return value, z, tape_e, dec_grads, dz


def loss_rec(latent_map: LatentMap, batch, beta: float = 1e-3) -> tuple[float, list[np.ndarray]]:
    """Regularised reconstruction loss summed over the rows of ``batch``.

    Error is measured in standardised units. Gradients follow
    :meth:`LatentMap.params` order.
    """
    x_std = latent_map.standardize(batch)
    if x_std.shape[1] != latent_map.input_dim:
        raise ValueError(f"expected dimension {latent_map.input_dim}, got {x_std.shape[1]}")
    value, _, tape_e, dec_grads, dz = _rec_parts(latent_map, x_std, beta)
    enc_grads, _ = backward(latent_map.encoder, tape_e, dz)
    return value, enc_grads + dec_grads


def _pair_term(latent_map: LatentMap, points: np.ndarray, coef: np.ndarray):
    x_std = latent_map.standardize(points)
    z = forward(latent_map.encoder, x_std)
    value, dz = kernels.pair_loss(z, coef)
    return value, _encoder_backward(latent_map, x_std, dz)


def loss_con(
    latent_map: LatentMap,
    batch: ModelSampleBatch,
    kind: str = "classification",
    scale: float | None = None,
) -> tuple[float, list[np.ndarray]]:
    """Connection loss: similarity-weighted squared latent distances."""
    return _pair_term(latent_map, batch.points, similarity_matrix(batch, kind, scale))


def loss_sep(latent_map: LatentMap, batch: ModelSampleBatch) -> tuple[float, list[np.ndarray]]:
    """Separation loss: minus half the squared latent distance of cross-model pairs."""
    return _pair_term(latent_map, batch.points, separation_matrix(batch.provenance))


def total_loss(
    latent_map: LatentMap,
    test_batch: np.ndarray,
    model_batch: ModelSampleBatch,
    weights: LossWeights,
    kind: str,
    scale: float | None = None,
) -> tuple[dict[str, float], list[np.ndarray]]:
    """Weighted sum of the three terms, sharing one encoder pass.

    Returns the unweighted term values and the gradient of the weighted total.
    """
    x = np.concatenate([np.atleast_2d(test_batch), model_batch.points])
    x_std = latent_map.standardize(x)
    n_t = len(x) - len(model_batch.points)
    rec, z, tape_e, dec_grads, dz = _rec_parts(latent_map, x_std, weights.beta)
    dz = weights.rec * dz
    dec_grads = [weights.rec * g for g in dec_grads]
    z_m = z[n_t:]
    con = sep = 0.0
    if weights.con or weights.sep:
        coef = np.zeros((len(z_m), len(z_m)))
        sim = similarity_matrix(model_batch, kind, scale) if weights.con else None
        sepm = separation_matrix(model_batch.provenance)
        con = float(kernels.pair_loss(z_m, sim)[0]) if sim is not None else 0.0
        sep = float(kernels.pair_loss(z_m, sepm)[0])
        if sim is not None:
            coef += weights.con * sim
        coef += weights.sep * sepm
        _, dz_m = kernels.pair_loss(z_m, coef)
        dz[n_t:] += dz_m
    else:
        sep = float(kernels.pair_loss(z_m, separation_matrix(model_batch.provenance))[0])
    enc_grads, _ = backward(latent_map.encoder, tape_e, dz)
    terms = {
        "l_rec": rec,
        "l_con": con,
        "l_sep": sep,
        "l_total": weights.rec * rec + weights.con * con + weights.sep * sep,
    }
    return terms, enc_grads + dec_grads


def fit_standardization(
    test_features: np.ndarray,
    densities: Sequence[DensityModel],
    rng: np.random.Generator,
    per_model: int = 256,
) -> tuple[np.ndarray, np.ndarray]:
    pool = [np.atleast_2d(test_features)] + [d.sample(rng, per_model) for d in densities]
    pool = np.concatenate(pool)
    mean = pool.mean(axis=0)
    std = pool.std(axis=0)
    std[std == 0] = 1.0
    return mean, std


def train_representation(
    bundle: ModelBundle,
    test_data: Dataset | np.ndarray,
    config: RepresentationConfig = RepresentationConfig(),
    densities: Sequence[DensityModel] | None = None,
) -> LatentMap:
    """Optimise the weighted three-term objective and return the trained map.

    Every step draws ``samples_per_model`` fresh points from each domain
    density and a minibatch of test features. The per-step loss trace
    (step, l_rec, l_con, l_sep, l_total) is stored on ``LatentMap.trace``.
    """
    x_test = test_data.features if isinstance(test_data, Dataset) else np.atleast_2d(test_data)
    if x_test.shape[1] != bundle.dim:
        raise ValueError(f"test data has dimension {x_test.shape[1]}, models expect {bundle.dim}")
    if densities is None:
        densities = [fit_density(info) for info in bundle.infos]
    init_rng = rng_stream(config.seed, "representation.init")
    sample_rng = rng_stream(config.seed, "representation.samples")
    batch_rng = rng_stream(config.seed, "representation.minibatch")

    mean, std = fit_standardization(x_test, densities, init_rng, config.standardize_samples)
    latent_map = init_latent_map(bundle.dim, config.latent_dim, init_rng, config.hidden, mean, std)
    params = latent_map.params()
    state = AdamState.zeros_like(params)
    w = replace(config.weights, beta=config.effective_beta(len(bundle.models)))
    kind = bundle.output_kind
    trace = np.zeros((config.steps, 5))
    m = len(x_test)
    for step in range(config.steps):
        mb = sample_model_batch(densities, sample_rng, config.samples_per_model,
                                bundle if w.con else None)
        if m > config.batch_size:
            idx = batch_rng.choice(m, size=config.batch_size, replace=False)
            tb = x_test[idx]
        else:
            tb = x_test
        terms, grads = total_loss(latent_map, tb, mb, w, kind, config.regression_scale)
        for name, value in terms.items():
            if not math.isfinite(value):
                raise TrainingDivergence(f"step {step}: {name} became non-finite ({value})")
        trace[step] = (step, terms["l_rec"], terms["l_con"], terms["l_sep"], terms["l_total"])
        adam_step(params, grads, state, lr=config.lr)
    latent_map.trace = trace
    return latent_map


def write_trace_csv(path, trace: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("step,l_rec,l_con,l_sep,l_total\n")
        for row in trace:
            fh.write(f"{int(row[0])},{row[1]!r},{row[2]!r},{row[3]!r},{row[4]!r}\n")


def evaluation_points(
    test_data: Dataset | np.ndarray,
    densities: Sequence[DensityModel],
    seed: int,
    per_model: int = 64,
) -> np.ndarray:
    """Fixed evaluation set (test features plus model samples) for comparing maps."""
    x_test = test_data.features if isinstance(test_data, Dataset) else np.atleast_2d(test_data)
    rng = rng_stream(seed, "representation.evaluation")
    return np.concatenate([x_test] + [d.sample(rng, per_model) for d in densities])


def mean_reconstruction_loss(latent_map: LatentMap, points: np.ndarray, beta: float) -> float:
    """Per-point reconstruction loss (including the latent penalty)."""
    value, _ = loss_rec(latent_map, points, beta)
    return value / len(points)


def model_separation(
    latent_map: LatentMap,
    densities: Sequence[DensityModel],
    seed: int,
    per_model: int = 64,
) -> float:
    """Mean latent distance between encoded samples of different models."""
    rng = rng_stream(seed, "representation.separation")
    z = [latent_map.encode(d.sample(rng, per_model)) for d in densities]
    dists = []
    for i in range(len(z)):
        for j in range(i + 1, len(z)):
            diff = z[i][:, None, :] - z[j][None, :, :]
            dists.append(np.sqrt((diff**2).sum(-1)).mean())
    return float(np.mean(dists))


BALANCE_LADDER = (1.0, 2.0, 4.0, 8.0)


@dataclass(frozen=True)
class BalanceReport:
    weights: LossWeights
    reference_rec: float
    ladder_rec: dict[float, float]


def balance_losses(
    bundle: ModelBundle,
    test_data: Dataset | np.ndarray,
    base_config: RepresentationConfig = RepresentationConfig(),
    threshold: float = 0.025,
    ladder: Sequence[float] = BALANCE_LADDER,
    densities: Sequence[DensityModel] | None = None,
    return_report: bool = False,
) -> LossWeights | BalanceReport:
    """Largest joint connection/separation multiplier that keeps reconstruction
    within ``threshold`` of the reconstruction-only optimum.

    Reconstruction is compared on a fixed evaluation set. Falls back to
    equal weighting when no multiplier qualifies.
    """
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    if densities is None:
        densities = [fit_density(info) for info in bundle.infos]
    base = base_config.weights
    points = evaluation_points(test_data, densities, base_config.seed)

    def final_rec(con: float, sep: float) -> float:
        cfg = replace(base_config, weights=replace(base, con=con, sep=sep))
        lm = train_representation(bundle, test_data, cfg, densities)
        return mean_reconstruction_loss(lm, points, base.beta)

    reference = final_rec(0.0, 0.0)
    bound = (1.0 + threshold) * reference
    results = {}
    chosen = None
    for lam in ladder:
        results[float(lam)] = final_rec(lam, lam)
        if results[float(lam)] <= bound:
            chosen = float(lam) if chosen is None else max(chosen, float(lam))
    lam = 1.0 if chosen is None else chosen
    weights = replace(base, con=lam, sep=lam)
    if return_report:
        return BalanceReport(weights, reference, results)
    return weights


def save_config(path, config: RepresentationConfig) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_json(), fh, indent=2)
