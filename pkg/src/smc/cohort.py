"""Densities from published demographic summaries, and cohort subsampling.

A pooled cohort simulated from several population models is filtered so
that each instance survives only if its own generating model is the most
likely one for its covariates.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import Dataset
from .density import BinaryDim, ContinuousDim, DensityModel, fit_factorised

ORIGIN_COLUMN = "__origin__"

Cell = ContinuousDim | BinaryDim | None


@dataclass(frozen=True)
class DemographicsTable:
    """Per-model summary statistics.

    ``covariates`` is a sequence of ``(name, "continuous" | "binary")``;
    ``rows`` maps model id to ``{covariate name: cell}`` where a cell is a
    :class:`ContinuousDim`, a :class:`BinaryDim` or ``None`` when missing.
    """

    covariates: tuple[tuple[str, str], ...]
    rows: Mapping[str, Mapping[str, Cell]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(tuple(c) for c in self.covariates))
        rows = {mid: dict(cells) for mid, cells in self.rows.items()}
        for mid, cells in rows.items():
            for name, ctype in self.covariates:
                cell = cells.setdefault(name, None)
                want = ContinuousDim if ctype == "continuous" else BinaryDim
                if ctype not in ("continuous", "binary"):
                    raise ValueError(f"covariate {name!r}: unknown type {ctype!r}")
                if cell is not None and not isinstance(cell, want):
                    raise ValueError(f"model {mid!r}, covariate {name!r}: expected {ctype} cell")
            extra = set(cells) - {n for n, _ in self.covariates}
            if extra:
                raise ValueError(f"model {mid!r}: unknown covariates {sorted(extra)}")
        object.__setattr__(self, "rows", rows)

    @property
    def model_ids(self) -> list[str]:
        return list(self.rows)

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.covariates]

    def has_missing(self) -> bool:
        return any(c is None for cells in self.rows.values() for c in cells.values())

    def to_json(self) -> dict:
        models = {}
        for mid, cells in self.rows.items():
            out = {}
            for name, _ in self.covariates:
                c = cells[name]
                if c is None:
                    out[name] = None
                elif isinstance(c, ContinuousDim):
                    out[name] = {"mean": c.mean, "std": c.std}
                else:
                    out[name] = {"p": c.p}
            models[mid] = out
        return {
            "covariates": [{"name": n, "type": t} for n, t in self.covariates],
            "models": models,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DemographicsTable":
        try:
            covs = [(c["name"], c["type"]) for c in obj["covariates"]]
            types = dict(covs)
            rows = {}
            for mid, cells in obj["models"].items():
                row = {}
                for name, raw in cells.items():
                    if name not in types:
                        raise ValueError(f"model {mid!r}: unknown covariate {name!r}")
                    row[name] = _parse_cell(raw, types[name])
                rows[mid] = row
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed demographics table: {exc!r}") from None
        return cls(tuple(covs), rows)


def _parse_cell(raw, ctype: str) -> Cell:
    if raw is None:
        return None
    if ctype == "continuous":
        if isinstance(raw, (list, tuple)):
            return ContinuousDim(float(raw[0]), float(raw[1]))
        return ContinuousDim(float(raw["mean"]), float(raw["std"]))
    if isinstance(raw, (int, float)):
        return BinaryDim(float(raw))
    return BinaryDim(float(raw["p"]))


def load_demographics(path) -> DemographicsTable:
    with open(path) as fh:
        return DemographicsTable.from_json(json.load(fh))


def impute_missing(table: DemographicsTable) -> DemographicsTable:
    """Fill missing cells with the across-model average of that covariate.

    Continuous cells average both the means and the stds; binary cells
    average the probabilities.
    """
    rows = {mid: dict(cells) for mid, cells in table.rows.items()}
    for name, ctype in table.covariates:
        present = [cells[name] for cells in rows.values() if cells[name] is not None]
        if not present:
            raise ValueError(f"covariate {name!r} is missing for every model")
        if len(present) == len(rows):
            continue
        if ctype == "continuous":
            fill: Cell = ContinuousDim(
                float(np.mean([c.mean for c in present])), float(np.mean([c.std for c in present]))
            )
        else:
            fill = BinaryDim(float(np.mean([c.p for c in present])))
        for cells in rows.values():
            if cells[name] is None:
                cells[name] = fill
    return DemographicsTable(table.covariates, rows)


def build_cohort_densities(table: DemographicsTable) -> list[DensityModel]:
    """One factorised Gaussian/Bernoulli density per model row, covariates in table order."""
    if table.has_missing():
        raise ValueError("impute missing cells before building densities")
    return [fit_factorised([cells[n] for n in table.names]) for cells in table.rows.values()]


@dataclass(frozen=True)
class PooledCohort:
    instances: Dataset
    origin: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=int)
        if o.shape != (len(self.instances),):
            raise ValueError("one origin index per instance is required")
        if np.any(o < 0):
            raise ValueError("origin indices must be non-negative")
        o.setflags(write=False)
        object.__setattr__(self, "origin", o)

    def __len__(self) -> int:
        return len(self.instances)


def most_likely_model(densities: Sequence[DensityModel], x: np.ndarray) -> np.ndarray:
    """Index of the highest log-likelihood density per row (lowest index on ties)."""
    ll = np.column_stack([d.log_density(np.atleast_2d(x)) for d in densities])
    return ll.argmax(axis=1)


def rejection_subsample(cohort: PooledCohort, densities: Sequence[DensityModel]) -> PooledCohort:
    """Keep instances whose most likely model is the one that generated them."""
    if np.any(cohort.origin >= len(densities)):
        raise ValueError("origin index out of range for the given densities")
    if any(d.dim != cohort.instances.dim for d in densities):
        raise ValueError("density dimension does not match cohort covariates")
    if len(cohort) == 0:
        return cohort
    keep = most_likely_model(densities, cohort.instances.features) == cohort.origin
    return PooledCohort(cohort.instances.subset(keep), cohort.origin[keep])


def read_cohort_csv(path, model_ids: Sequence[str] | None = None) -> tuple[PooledCohort, list[str]]:
    """Cohort CSV: covariate columns plus ``__origin__`` (model index or model id)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    if ORIGIN_COLUMN not in header:
        raise ValueError(f"{path}: missing {ORIGIN_COLUMN} column")
    ocol = header.index(ORIGIN_COLUMN)
    names = [h for i, h in enumerate(header) if i != ocol]
    lookup = {m: i for i, m in enumerate(model_ids or [])}
    feats, origin = [], []
    for lineno, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(r)}")
        try:
            feats.append([float(v) for i, v in enumerate(r) if i != ocol])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
        o = r[ocol]
        if o in lookup:
            origin.append(lookup[o])
        else:
            try:
                origin.append(int(o))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: unknown origin {o!r}") from None
    x = np.array(feats, dtype=np.float64).reshape(len(rows), len(names))
    return PooledCohort(Dataset(x), np.array(origin, dtype=int)), names


def write_cohort_csv(path, cohort: PooledCohort, names: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(names) + [ORIGIN_COLUMN])
        for row, o in zip(cohort.instances.features, cohort.origin):
            w.writerow([repr(float(v)) for v in row] + [int(o)])


def _c(mean, std) -> ContinuousDim:
    return ContinuousDim(float(mean), float(std))


# Published population demographics of six vancomycin PopPK models
# (age, BMI, body weight, fraction male, creatinine clearance).
VANCOMYCIN_DEMOGRAPHICS = DemographicsTable(
    covariates=(("age", "continuous"), ("bmi", "continuous"), ("weight", "continuous"),
                ("sex", "binary"), ("crcl", "continuous")),
    rows={
        "adane2015": {"age": _c(43.0, 7.5), "bmi": _c(49.5, 5.2), "weight": _c(147.9, 13.1),
                      "sex": BinaryDim(0.61), "crcl": _c(124.8, 14.0)},
        "mangin2014": {"age": _c(63, 23), "bmi": _c(28, 7), "weight": _c(82, 21),
                       "sex": BinaryDim(0.87), "crcl": _c(138, 50)},
        "medellin2016": {"age": _c(74.3, 14), "bmi": _c(27.5, 5), "weight": _c(72, 15),
                         "sex": BinaryDim(0.45), "crcl": _c(90.5, 52)},
        "revilla2010": {"age": _c(61.1, 16.3), "bmi": _c(26.2, 4.1), "weight": _c(73.0, 13.3),
                        "sex": BinaryDim(0.66), "crcl": _c(86.1, 55.1)},
        "roberts2011": {"age": _c(58.1, 14.8), "bmi": _c(25.9, 5.4), "weight": _c(74.8, 15.8),
                        "sex": BinaryDim(0.62), "crcl": _c(90.7, 60.4)},
        "thomson2009": {"age": _c(66, 20), "bmi": None, "weight": _c(72, 30),
                        "sex": BinaryDim(0.63), "crcl": _c(98, 51.0)},
    },
)
