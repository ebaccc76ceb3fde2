"""End-to-end fit: domain densities, representation, latent densities, threshold."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import Dataset, ModelBundle
from .density import fit_density
from .representation import LatentMap, RepresentationConfig, rng_stream, train_representation
from .weights import (
    DEFAULT_GAMMA,
    DEFAULT_LATENT_SAMPLES,
    LatentDensitySet,
    build_latent_densities,
    default_tau,
)


class InsufficientInformation(ValueError):
    """A model came with no usable domain information, so no weights can be built."""


@dataclass(frozen=True)
class PipelineSettings:
    representation: RepresentationConfig = field(default_factory=RepresentationConfig)
    n_latent_samples: int = DEFAULT_LATENT_SAMPLES
    gamma: float = DEFAULT_GAMMA
    use_info_samples: bool = True
    tau_percentile: float = 1.0

    def with_seed(self, seed: int) -> "PipelineSettings":
        return replace(self, representation=replace(self.representation, seed=seed))

    def to_json(self) -> dict:
        return {
            "representation": self.representation.to_json(),
            "n_latent_samples": self.n_latent_samples,
            "gamma": self.gamma,
            "use_info_samples": self.use_info_samples,
            "tau_percentile": self.tau_percentile,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PipelineSettings":
        kw = {k: obj[k] for k in ("n_latent_samples", "gamma", "use_info_samples",
                                   "tau_percentile") if k in obj}
        rep = RepresentationConfig.from_json(obj.get("representation", {}))
        return cls(representation=rep, **kw)


def fit_smc(
    bundle: ModelBundle,
    test_data: Dataset | np.ndarray,
    settings: PipelineSettings = PipelineSettings(),
) -> LatentDensitySet:
    """Run the fitting half of SMC and return the weights engine.

    The engine's ``tau`` is set to the configured percentile of the test-set
    confidence.
    """
    x_test = test_data.features if isinstance(test_data, Dataset) else np.atleast_2d(test_data)
    empty = [m.identity for m, info in zip(bundle.models, bundle.infos)
             if info.kind == "samples" and len(info.samples) == 0]
    if empty:
        raise InsufficientInformation(f"no domain information for models {empty}")
    densities = [fit_density(info) for info in bundle.infos]
    latent_map: LatentMap = train_representation(bundle, x_test, settings.representation, densities)
    rng = rng_stream(settings.representation.seed, "weights.latent")
    engine = build_latent_densities(
        latent_map, bundle, settings.n_latent_samples, rng, densities, settings.use_info_samples
    )
    engine.tau = default_tau(engine, x_test, settings.tau_percentile)
    return engine
