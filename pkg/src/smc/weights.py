"""Latent-space domain densities and the instance-wise weights derived from them."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .core import ModelBundle
from .density import DensityModel, fit_density, fit_kde
from .representation import LatentMap, rng_stream

DEFAULT_GAMMA = 1e-9
DEFAULT_LATENT_SAMPLES = 500
CONFIDENT = "confident"
LOW_CONFIDENCE = "low_confidence"


@dataclass(frozen=True)
class WeightVector:
    weights: np.ndarray
    confidence: float


@dataclass
class LatentDensitySet:
    """One latent KDE per model, tied to the map that produced its support."""

    densities: list[DensityModel]
    latent_map: LatentMap
    samples_per_model: list[int]
    tau: float = 0.0

    def __post_init__(self):
        z = self.latent_map.latent_dim
        if any(d.kind != "kde" or d.dim != z for d in self.densities):
            raise ValueError(f"latent densities must all be KDEs of dimension {z}")

    def __len__(self) -> int:
        return len(self.densities)

    def log_densities(self, x) -> np.ndarray:
        """(m, N) latent log densities of each row of ``x`` under each model."""
        z = np.atleast_2d(self.latent_map.encode(np.atleast_2d(x)))
        if not np.all(np.isfinite(z)):
            raise ValueError("encoding produced non-finite values")
        return np.column_stack([d.log_density(z) for d in self.densities])

    def weights(self, x, gamma: float = DEFAULT_GAMMA) -> tuple[np.ndarray, np.ndarray]:
        """Batch weights (m, N) and confidences (m,)."""
        return weights_from_log_densities(self.log_densities(x), gamma)

    def to_json(self) -> dict:
        return {
            "latent_map": self.latent_map.to_json(),
            "densities": [d.to_json() for d in self.densities],
            "samples_per_model": list(self.samples_per_model),
            "tau": self.tau,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LatentDensitySet":
        return cls(
            [DensityModel.from_json(d) for d in obj["densities"]],
            LatentMap.from_json(obj["latent_map"]),
            list(obj["samples_per_model"]),
            float(obj.get("tau", 0.0)),
        )


def build_latent_densities(
    latent_map: LatentMap,
    bundle: ModelBundle,
    n_samples: int = DEFAULT_LATENT_SAMPLES,
    rng: np.random.Generator | None = None,
    densities: Sequence[DensityModel] | None = None,
    use_info_samples: bool = True,
) -> LatentDensitySet:
    """Encode each model's domain into the latent space and fit a KDE there.

    Models described by feature samples contribute those samples directly
    when ``use_info_samples`` is set; otherwise ``n_samples`` points are
    drawn from the feature-space density.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2 for a well-defined bandwidth")
    if latent_map.input_dim != bundle.dim:
        raise ValueError(f"map expects dimension {latent_map.input_dim}, models use {bundle.dim}")
    rng = rng if rng is not None else rng_stream(0, "weights.latent")
    if densities is None:
        densities = [fit_density(info) for info in bundle.infos]
    out, counts = [], []
    for info, dens in zip(bundle.infos, densities):
        if use_info_samples and info.kind == "samples":
            pts = info.samples
        else:
            pts = dens.sample(rng, n_samples)
        z = latent_map.encode(pts)
        out.append(fit_kde(np.atleast_2d(z)))
        counts.append(len(pts))
    return LatentDensitySet(out, latent_map, counts)


def weights_from_log_densities(log_p, gamma: float = DEFAULT_GAMMA) -> tuple[np.ndarray, np.ndarray]:
    """``w_i = (p_i + gamma) / sum_j (p_j + gamma)`` evaluated in log space.

    Accepts one row of N log densities or an (m, N) matrix. Returns the
    weights and the confidence ``sum_j p_j``.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    lp = np.asarray(log_p, dtype=np.float64)
    single = lp.ndim == 1
    lp = np.atleast_2d(lp)
    shifted = np.logaddexp(lp, np.log(gamma))
    w = np.exp(shifted - logsumexp(shifted, axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    with np.errstate(over="ignore"):
        conf = np.exp(lp).sum(axis=1)
    return (w[0], conf[0]) if single else (w, conf)


def weights_from_densities(p, gamma: float = DEFAULT_GAMMA) -> WeightVector:
    """Same as :func:`weights_from_log_densities` for raw density values."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("densities must be non-negative")
    with np.errstate(divide="ignore"):
        w, conf = weights_from_log_densities(np.log(p), gamma)
    return WeightVector(w, float(conf))


def compute_weights(
    density_set: LatentDensitySet,
    latent_map: LatentMap | None,
    x,
    gamma: float = DEFAULT_GAMMA,
) -> WeightVector:
    """Weights and confidence for a single feature vector."""
    if latent_map is not None and latent_map is not density_set.latent_map:
        density_set = LatentDensitySet(density_set.densities, latent_map,
                                       density_set.samples_per_model, density_set.tau)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or len(x) != density_set.latent_map.input_dim:
        raise ValueError(f"expected a feature vector of length {density_set.latent_map.input_dim}")
    w, conf = density_set.weights(x[None, :], gamma)
    return WeightVector(w[0], float(conf[0]))


def confidence_flag(wv: WeightVector | float, tau: float) -> str:
    if tau < 0:
        raise ValueError("tau must be non-negative")
    conf = wv.confidence if isinstance(wv, WeightVector) else float(wv)
    return LOW_CONFIDENCE if conf < tau else CONFIDENT


def default_tau(density_set: LatentDensitySet, test_features, percentile: float = 1.0) -> float:
    """Data-relative low-confidence threshold: a percentile of test-set confidence."""
    _, conf = density_set.weights(test_features)
    return float(np.percentile(conf, percentile))
