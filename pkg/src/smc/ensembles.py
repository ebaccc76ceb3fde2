"""Prediction strategies: instance-wise SMC combination and global baselines.

All functions take a single feature vector or an (m, d) batch and return
predictions of matching rank.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from .core import Dataset, ModelBundle
from .weights import DEFAULT_GAMMA, LatentDensitySet, WeightVector

ENTROPY_FLOOR = 1e-3
STRATEGIES = ("smc", "global_average", "majority_vote", "entropy_weighted", "bma", "smc_bma", "fixed")


def _batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    return np.atleast_2d(x), x.ndim == 1


def combine(bundle: ModelBundle, preds: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Convex combination of stacked predictions with (m, N) or (N,) weights."""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim == 1:
        w = np.broadcast_to(w, (preds.shape[1], len(w)))
    if bundle.output_kind == "regression":
        return np.einsum("nm,mn->m", preds, w)
    out = np.einsum("nmk,mn->mk", preds, w)
    return out / out.sum(axis=1, keepdims=True)


def predict_smc(
    bundle: ModelBundle,
    engine: LatentDensitySet,
    x,
    gamma: float = DEFAULT_GAMMA,
) -> tuple[np.ndarray, WeightVector | tuple[np.ndarray, np.ndarray]]:
    """SMC prediction with its weights.

    For a single vector the second element is a :class:`WeightVector`; for a
    batch it is ``(weights (m, N), confidences (m,))``.
    """
    xb, single = _batch(x)
    w, conf = engine.weights(xb, gamma)
    y = combine(bundle, bundle.predict_all(xb), w)
    if single:
        return y[0], WeightVector(w[0], float(conf[0]))
    return y, (w, conf)


def predict_fixed(bundle: ModelBundle, weights, x) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(bundle),) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("fixed weights must be a point on the N-simplex")
    xb, single = _batch(x)
    y = combine(bundle, bundle.predict_all(xb), w)
    return y[0] if single else y


def predict_global_average(bundle: ModelBundle, x) -> np.ndarray:
    return predict_fixed(bundle, np.full(len(bundle), 1.0 / len(bundle)), x)


def _require_classification(bundle: ModelBundle, name: str) -> None:
    if bundle.output_kind != "classification":
        raise ValueError(f"{name} needs classification models")


def predict_majority_vote(bundle: ModelBundle, x) -> np.ndarray:
    """One-hot of the most-voted class; ties go to the lowest class index."""
    _require_classification(bundle, "majority voting")
    xb, single = _batch(x)
    votes = bundle.predict_all(xb).argmax(axis=2)          # (N, m)
    k = bundle.n_classes
    counts = np.zeros((len(xb), k), dtype=int)
    for row in votes:
        counts[np.arange(len(xb)), row] += 1
    out = np.eye(k)[counts.argmax(axis=1)]
    return out[0] if single else out


def entropy_weights(preds: np.ndarray, floor: float = ENTROPY_FLOOR) -> np.ndarray:
    """(m, N) weights proportional to ``exp(1 / max(H, floor))``, H in nats."""
    p = np.moveaxis(np.asarray(preds), 0, 1)                # (m, N, K)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.sum(np.where(p > 0, p * np.log(p), 0.0), axis=2)
    return softmax(1.0 / np.maximum(h, floor), axis=1)


def predict_entropy_weighted(bundle: ModelBundle, x, floor: float = ENTROPY_FLOOR) -> np.ndarray:
    _require_classification(bundle, "entropy weighting")
    if floor <= 0:
        raise ValueError("entropy floor must be positive")
    xb, single = _batch(x)
    preds = bundle.predict_all(xb)
    y = combine(bundle, preds, entropy_weights(preds, floor))
    return y[0] if single else y


def bic_weights(bics) -> np.ndarray:
    """Posterior model probabilities ``exp(-BIC/2) / sum exp(-BIC/2)`` in log space."""
    b = -0.5 * np.asarray(bics, dtype=np.float64)
    return np.exp(b - logsumexp(b))


def model_bics(bundle: ModelBundle, validation: Dataset) -> np.ndarray:
    """``k ln n - 2 ln L`` per model on the validation set.

    Regression uses a Gaussian likelihood with the MLE residual variance;
    classification uses the categorical likelihood of the true labels.
    """
    if validation.targets is None or len(validation) == 0:
        raise ValueError("BMA needs a non-empty validation set with targets")
    missing = [m.identity for m in bundle.models if m.param_count is None]
    if missing:
        raise ValueError(f"models without a parameter count: {missing}")
    n = len(validation)
    y = validation.targets
    preds = bundle.predict_all(validation.features)
    bics = []
    for model, p in zip(bundle.models, preds):
        if bundle.output_kind == "regression":
            sigma2 = max(np.mean((p - y) ** 2), np.finfo(float).tiny)
            loglik = -0.5 * n * (np.log(2 * np.pi * sigma2) + 1.0)
        else:
            probs = p[np.arange(n), y.astype(int)]
            loglik = np.sum(np.log(np.maximum(probs, np.finfo(float).tiny)))
        bics.append(model.param_count * np.log(n) - 2.0 * loglik)
    return np.array(bics)


def bma_weights(bundle: ModelBundle, validation: Dataset) -> np.ndarray:
    return bic_weights(model_bics(bundle, validation))


def predict_smc_bma(
    bundle: ModelBundle,
    engine: LatentDensitySet,
    bma: np.ndarray,
    x,
    gamma: float = DEFAULT_GAMMA,
) -> np.ndarray:
    """Average the instance-wise SMC weights with fixed BMA weights, then combine."""
    xb, single = _batch(x)
    w, _ = engine.weights(xb, gamma)
    w = 0.5 * (w + np.asarray(bma)[None, :])
    w /= w.sum(axis=1, keepdims=True)
    y = combine(bundle, bundle.predict_all(xb), w)
    return y[0] if single else y


@dataclass
class EnsembleStrategy:
    """A named way of turning the bundle's predictions into one prediction."""

    kind: str
    engine: LatentDensitySet | None = None
    fixed_weights: np.ndarray | None = None
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}; choose from {STRATEGIES}")
        if self.kind in ("smc", "smc_bma") and self.engine is None:
            raise ValueError(f"{self.kind} needs a weights engine")
        if self.kind in ("fixed", "bma", "smc_bma") and self.fixed_weights is None:
            raise ValueError(f"{self.kind} needs fixed weights (see bma_weights)")

    def predict(self, bundle: ModelBundle, x) -> np.ndarray:
        if self.kind == "smc":
            return predict_smc(bundle, self.engine, x, self.gamma)[0]
        if self.kind == "global_average":
            return predict_global_average(bundle, x)
        if self.kind == "majority_vote":
            return predict_majority_vote(bundle, x)
        if self.kind == "entropy_weighted":
            return predict_entropy_weighted(bundle, x)
        if self.kind == "smc_bma":
            return predict_smc_bma(bundle, self.engine, self.fixed_weights, x, self.gamma)
        return predict_fixed(bundle, self.fixed_weights, x)


def strategy_names(names: Sequence[str]) -> list[str]:
    bad = [n for n in names if n not in STRATEGIES]
    if bad:
        raise ValueError(f"unknown strategies {bad}; choose from {STRATEGIES}")
    return list(names)
