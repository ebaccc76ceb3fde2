"""Shared data types, the expert-model abstraction and evaluation metrics."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Literal, Sequence

import numpy as np
from scipy.stats import rankdata

if TYPE_CHECKING:
    from .density import ModelInfo

TARGET_COLUMN = "__target__"
SIMPLEX_TOL = 1e-9

OutputKind = Literal["regression", "classification"]


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with optional targets.

    Rows are instances. A 1-D ``features`` argument is read as a single
    feature column. Non-finite entries are rejected.
    """

    features: np.ndarray
    targets: np.ndarray | None = None

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[1] < 1:
            raise ValueError(f"features must be a 2-D matrix with d >= 1, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain non-finite values")
        object.__setattr__(self, "features", _frozen(x))
        if self.targets is not None:
            y = np.array(self.targets, dtype=np.float64)
            if y.ndim != 1 or len(y) != len(x):
                raise ValueError(
                    f"targets must be a vector of length {len(x)}, got shape {y.shape}"
                )
            if not np.all(np.isfinite(y)):
                raise ValueError("targets contain non-finite values")
            object.__setattr__(self, "targets", _frozen(y))

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "Dataset":
        y = None if self.targets is None else self.targets[index]
        return Dataset(self.features[index], y)


def read_dataset_csv(path, feature_names: Sequence[str] | None = None) -> tuple[Dataset, list[str]]:
    """Read a dataset CSV; the ``__target__`` column, if present, becomes the targets.

    Returns the dataset and the feature column names in file order.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file (a header row is required)") from None
        rows = [r for r in reader if r]
    names = [h for h in header if h != TARGET_COLUMN]
    if feature_names is not None and list(feature_names) != names:
        raise ValueError(f"{path}: expected feature columns {list(feature_names)}, got {names}")
    cols = [i for i, h in enumerate(header) if h != TARGET_COLUMN]
    tcol = header.index(TARGET_COLUMN) if TARGET_COLUMN in header else None
    try:
        data = np.array([[float(r[i]) for i in cols] for r in rows], dtype=np.float64)
        targets = None if tcol is None else np.array([float(r[tcol]) for r in rows])
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: malformed row ({exc})") from None
    data = data.reshape(len(rows), len(cols))
    return Dataset(data, targets), names


def write_dataset_csv(path, data: Dataset, feature_names: Sequence[str] | None = None) -> None:
    names = list(feature_names) if feature_names else [f"x{k}" for k in range(data.dim)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ([TARGET_COLUMN] if data.targets is not None else []))
        for i, row in enumerate(data.features):
            vals = [repr(float(v)) for v in row]
            if data.targets is not None:
                vals.append(repr(float(data.targets[i])))
            w.writerow(vals)


@dataclass(frozen=True)
class ExpertModel:
    """A pre-trained predictor treated as a black box.

    ``predictor`` maps an (m, d) feature matrix to an (m,) vector of
    regression outputs or an (m, K) matrix of class probabilities.
    ``param_count`` is only needed by the BIC baseline.
    """

    identity: str
    predictor: Callable[[np.ndarray], np.ndarray]
    output_kind: OutputKind = "regression"
    n_classes: int | None = None
    input_dim: int | None = None
    param_count: int | None = None

    def __post_init__(self):
        if self.output_kind not in ("regression", "classification"):
            raise ValueError(f"unknown output kind {self.output_kind!r}")
        if self.output_kind == "classification" and (self.n_classes or 0) < 2:
            raise ValueError("classification models need n_classes >= 2")

    def predict(self, x) -> np.ndarray:
        """Predictions for a batch; also accepts a single feature vector."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        out = np.asarray(self.predictor(np.atleast_2d(x)), dtype=np.float64)
        if self.output_kind == "classification":
            out = out.reshape(-1, self.n_classes)
            if np.any(out < 0) or np.any(np.abs(out.sum(axis=1) - 1.0) > SIMPLEX_TOL):
                raise ValueError(f"model {self.identity!r} produced an off-simplex prediction")
        else:
            out = out.reshape(-1)
        return out[0] if single else out

    __call__ = predict


@dataclass(frozen=True)
class ModelBundle:
    """N >= 2 expert models paired with the information describing their domains."""

    models: tuple[ExpertModel, ...]
    infos: tuple["ModelInfo", ...]
    allow_single: bool = field(default=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "infos", tuple(self.infos))
        if len(self.models) != len(self.infos):
            raise ValueError("every model needs exactly one info entry")
        if len(self.models) < (1 if self.allow_single else 2):
            raise ValueError("a bundle needs at least two models")
        kinds = {(m.output_kind, m.n_classes) for m in self.models}
        if len(kinds) != 1:
            raise ValueError(f"models disagree on output kind: {sorted(map(str, kinds))}")
        dims = {info.dim for info in self.infos} | {
            m.input_dim for m in self.models if m.input_dim is not None
        }
        if len(dims) != 1:
            raise ValueError(f"models disagree on input dimension: {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.models)

    @property
    def dim(self) -> int:
        return self.infos[0].dim

    @property
    def output_kind(self) -> OutputKind:
        return self.models[0].output_kind

    @property
    def n_classes(self) -> int | None:
        return self.models[0].n_classes

    def predict_all(self, x) -> np.ndarray:
        """Stack every model's predictions: (N, m) for regression, (N, m, K) otherwise."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.stack([m.predict(x) for m in self.models])


def _paired(predictions, truths) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    t = np.asarray(truths, dtype=np.float64).reshape(-1)
    if len(p) != len(t):
        raise ValueError(f"length mismatch: {len(p)} predictions vs {len(t)} truths")
    if len(p) == 0:
        raise ValueError("empty input")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(t))):
        raise ValueError("non-finite entries")
    return p, t


def rmse(predictions, truths) -> float:
    p, t = _paired(predictions, truths)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def relative_rmse(predictions, truths) -> float:
    """RMSE divided by the root-mean-square of the truths."""
    p, t = _paired(predictions, truths)
    scale = np.sqrt(np.mean(t**2))
    if scale == 0:
        raise ValueError("relative RMSE undefined for all-zero truths")
    return float(np.sqrt(np.mean((p - t) ** 2)) / scale)


def binary_auroc(scores, positive) -> float:
    """Mann-Whitney AUROC with midranks for ties."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positive, dtype=bool)
    n_pos = int(pos.sum())
    n_neg = len(pos) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs at least one positive and one negative instance")
    ranks = rankdata(s)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auroc_ovr(scores, labels) -> float:
    """Unweighted mean over classes of the one-vs-rest AUROC of each score column."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    if s.ndim != 2 or len(s) != len(y):
        raise ValueError(f"scores {s.shape} do not match {len(y)} labels")
    if not np.all(np.isfinite(s)):
        raise ValueError("non-finite scores")
    n_classes = s.shape[1]
    missing = sorted(set(range(n_classes)) - set(y.tolist()))
    if missing:
        raise ValueError(f"classes absent from labels: {missing}")
    return float(np.mean([binary_auroc(s[:, k], y == k) for k in range(n_classes)]))
