"""Domain densities built from model information.

Two estimators are provided: a Gaussian KDE with a per-dimension Scott
bandwidth (for feature samples, and for every latent-space density), and a
factorised Gaussian/Bernoulli product (for published summary statistics).
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import kernels

# stands in for log(0) so downstream weight arithmetic stays finite
LOG_ZERO = -1e30
BANDWIDTH_FLOOR = 1e-3
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


class ZeroVarianceWarning(UserWarning):
    """A KDE dimension had zero spread; the bandwidth floor was used."""


@dataclass(frozen=True)
class ContinuousDim:
    mean: float
    std: float

    def __post_init__(self):
        if not (np.isfinite(self.mean) and np.isfinite(self.std)):
            raise ValueError("continuous moments must be finite")
        if self.std <= 0:
            raise ValueError(f"std must be strictly positive, got {self.std}")


@dataclass(frozen=True)
class BinaryDim:
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"bernoulli p must lie in [0, 1], got {self.p}")


@dataclass(frozen=True)
class ModelInfo:
    """What is known about a model's training domain.

    Exactly one of ``samples`` (an n x d feature matrix) or ``dims``
    (per-dimension moments) is set.
    """

    samples: np.ndarray | None = None
    dims: tuple[ContinuousDim | BinaryDim, ...] | None = None

    def __post_init__(self):
        if (self.samples is None) == (self.dims is None):
            raise ValueError("ModelInfo needs exactly one of samples or dims")
        if self.samples is not None:
            s = np.array(self.samples, dtype=np.float64)
            if s.ndim == 1:
                s = s[:, None]
            if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] < 1:
                raise ValueError(f"samples must be an n x d matrix with n >= 1, got {s.shape}")
            if not np.all(np.isfinite(s)):
                raise ValueError("samples contain non-finite values")
            s.setflags(write=False)
            object.__setattr__(self, "samples", s)
        else:
            dims = tuple(self.dims)
            if not dims:
                raise ValueError("moments info needs at least one dimension")
            for d in dims:
                if not isinstance(d, (ContinuousDim, BinaryDim)):
                    raise TypeError(f"dimension spec must be ContinuousDim or BinaryDim, got {d!r}")
            object.__setattr__(self, "dims", dims)

    @property
    def kind(self) -> Literal["samples", "moments"]:
        return "samples" if self.samples is not None else "moments"

    @property
    def dim(self) -> int:
        return self.samples.shape[1] if self.samples is not None else len(self.dims)

    def to_json(self) -> dict:
        if self.samples is not None:
            return {"kind": "samples", "data": self.samples.tolist()}
        out = []
        for d in self.dims:
            if isinstance(d, ContinuousDim):
                out.append({"type": "continuous", "mean": d.mean, "std": d.std})
            else:
                out.append({"type": "binary", "p": d.p})
        return {"kind": "moments", "dims": out}

    @classmethod
    def from_json(cls, obj: dict) -> "ModelInfo":
        kind = obj.get("kind")
        if kind == "samples":
            return cls(samples=np.asarray(obj["data"], dtype=np.float64))
        if kind == "moments":
            dims = []
            for i, spec in enumerate(obj["dims"]):
                if spec.get("type") == "continuous":
                    dims.append(ContinuousDim(float(spec["mean"]), float(spec["std"])))
                elif spec.get("type") == "binary":
                    dims.append(BinaryDim(float(spec["p"])))
                else:
                    raise ValueError(f"dimension {i}: unknown type {spec.get('type')!r}")
            return cls(dims=tuple(dims))
        raise ValueError(f"unknown info kind {kind!r}")


def load_model_info(path) -> ModelInfo:
    with open(path) as fh:
        return ModelInfo.from_json(json.load(fh))


def save_model_info(path, info: ModelInfo) -> None:
    with open(path, "w") as fh:
        json.dump(info.to_json(), fh)


@dataclass(frozen=True)
class DensityModel:
    """A fitted density over R^d.

    ``kind == "kde"``: ``support`` (n x d) and ``bandwidth`` (d,).
    ``kind == "factorised"``: ``means``/``stds`` for continuous dimensions,
    ``probs`` for binary ones, selected by the boolean ``binary`` mask.
    """

    kind: Literal["kde", "factorised"]
    support: np.ndarray | None = None
    bandwidth: np.ndarray | None = None
    means: np.ndarray | None = None
    stds: np.ndarray | None = None
    probs: np.ndarray | None = None
    binary: np.ndarray | None = field(default=None)

    @property
    def dim(self) -> int:
        if self.kind == "kde":
            return self.support.shape[1]
        return len(self.binary)

    def log_density(self, x) -> np.ndarray | float:
        return log_density(self, x)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return sample(self, rng, count)

    def to_json(self) -> dict:
        if self.kind == "kde":
            return {
                "kind": "kde",
                "support": self.support.tolist(),
                "bandwidth": self.bandwidth.tolist(),
            }
        return {
            "kind": "factorised",
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "probs": self.probs.tolist(),
            "binary": self.binary.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DensityModel":
        if obj["kind"] == "kde":
            return kde_from_parts(np.asarray(obj["support"]), np.asarray(obj["bandwidth"]))
        return cls(
            kind="factorised",
            means=_ro(obj["means"]),
            stds=_ro(obj["stds"]),
            probs=_ro(obj["probs"]),
            binary=_ro(obj["binary"], dtype=bool),
        )


def _ro(a, dtype=np.float64) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def scott_bandwidth(samples: np.ndarray) -> np.ndarray:
    """Per-dimension Scott bandwidth, ``std_k * n ** (-1 / (d + 4))``, with floors.

    A single sample gets bandwidth 1. Zero-spread dimensions get
    ``BANDWIDTH_FLOOR`` and raise a :class:`ZeroVarianceWarning`.
    """
    n, d = samples.shape
    if n == 1:
        return np.ones(d)
    std = samples.std(axis=0, ddof=1)
    flat = std == 0
    if np.any(flat):
        warnings.warn(
            f"{int(flat.sum())} of {d} dimensions have zero variance; "
            f"bandwidth floored at {BANDWIDTH_FLOOR}",
            ZeroVarianceWarning,
            stacklevel=3,
        )
    h = std * n ** (-1.0 / (d + 4))
    return np.maximum(h, BANDWIDTH_FLOOR * np.where(flat, 1.0, std))


def kde_from_parts(support, bandwidth) -> DensityModel:
    s = _ro(np.atleast_2d(support))
    h = _ro(bandwidth)
    if h.shape != (s.shape[1],) or np.any(h <= 0):
        raise ValueError(f"bandwidth must be {s.shape[1]} positive values, got {h}")
    return DensityModel(kind="kde", support=s, bandwidth=h)


def fit_kde(samples, bandwidth=None) -> DensityModel:
    """Gaussian KDE on the rows of ``samples``.

    ``bandwidth`` overrides the Scott rule when given (scalar or per-dim).
    """
    s = np.array(samples, dtype=np.float64)
    if s.ndim == 1:
        s = s[:, None]
    if s.ndim != 2 or len(s) < 1:
        raise ValueError("fit_kde needs at least one sample")
    if not np.all(np.isfinite(s)):
        raise ValueError("samples contain non-finite values")
    if bandwidth is None:
        h = scott_bandwidth(s)
    else:
        h = np.broadcast_to(np.asarray(bandwidth, dtype=np.float64), (s.shape[1],)).copy()
    return kde_from_parts(s, h)


def fit_factorised(dims) -> DensityModel:
    """Product of independent Gaussian (continuous) and Bernoulli (binary) factors."""
    if isinstance(dims, ModelInfo):
        if dims.dims is None:
            raise ValueError("fit_factorised needs a moments ModelInfo")
        dims = dims.dims
    dims = tuple(dims)
    binary = np.array([isinstance(d, BinaryDim) for d in dims])
    means = np.array([0.0 if b else d.mean for d, b in zip(dims, binary)])
    stds = np.array([1.0 if b else d.std for d, b in zip(dims, binary)])
    probs = np.array([d.p if b else 0.5 for d, b in zip(dims, binary)])
    if np.any(stds <= 0):
        raise ValueError("stds must be strictly positive")
    return DensityModel(
        kind="factorised", means=_ro(means), stds=_ro(stds), probs=_ro(probs), binary=_ro(binary, bool)
    )


def fit_density(info: ModelInfo) -> DensityModel:
    """KDE for sample information, factorised product for moments."""
    return fit_kde(info.samples) if info.kind == "samples" else fit_factorised(info.dims)


def _factorised_terms(model: DensityModel, x: np.ndarray) -> np.ndarray:
    """Per-dimension log factors, shape (m, d)."""
    b = model.binary
    out = np.empty_like(x)
    z = (x[:, ~b] - model.means[~b]) / model.stds[~b]
    out[:, ~b] = -0.5 * z * z - np.log(model.stds[~b]) - _HALF_LOG_2PI
    if np.any(b):
        xb = x[:, b]
        if np.any((xb != 0) & (xb != 1)):
            raise ValueError("binary dimensions only accept 0 or 1")
        p = model.probs[b]
        with np.errstate(divide="ignore"):
            lp = np.where(xb == 1, np.log(p), np.log1p(-p))
        out[:, b] = np.maximum(lp, LOG_ZERO)
    return out


def log_density(model: DensityModel, x) -> np.ndarray | float:
    """Natural-log density at one point (returns float) or at each row of a matrix.

    Zero density is reported as ``LOG_ZERO`` rather than ``-inf``.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    if x2.shape[1] != model.dim:
        raise ValueError(f"expected dimension {model.dim}, got {x2.shape[1]}")
    if model.kind == "kde":
        out = kernels.kde_logpdf(x2, model.support, model.bandwidth)
    else:
        out = _factorised_terms(model, x2).sum(axis=1)
    out = np.maximum(out, LOG_ZERO)
    return float(out[0]) if single else out


def sample(model: DensityModel, rng: np.random.Generator, count: int) -> np.ndarray:
    """Draw ``count`` i.i.d. rows from ``model`` using the caller's generator."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if model.kind == "kde":
        idx = rng.integers(0, len(model.support), size=count)
        return model.support[idx] + rng.standard_normal((count, model.dim)) * model.bandwidth
    out = rng.standard_normal((count, model.dim)) * model.stds + model.means
    b = model.binary
    if np.any(b):
        out[:, b] = (rng.random((count, int(b.sum()))) < model.probs[b]).astype(np.float64)
    return out
