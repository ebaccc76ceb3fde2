"""``smc`` command line: fit, predict, bench, subsample, balance, export-scenario.

Exit codes: 0 success, 2 user or configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .cohort import (
    build_cohort_densities,
    impute_missing,
    DemographicsTable,
    read_cohort_csv,
    rejection_subsample,
    write_cohort_csv,
)
from .core import Dataset, ModelBundle, read_dataset_csv, write_dataset_csv
from .density import ModelInfo, save_model_info
from .ensembles import combine
from .experiments import (
    BENCH_SETTINGS,
    BENCH_STRATEGIES,
    SCENARIOS,
    ExperimentReport,
    make_digits_scenario,
    make_regression_scenario,
    mlp_expert,
    run_benchmark,
)
from .nn import load_mlp, mlp_to_json
from .pipeline import InsufficientInformation, PipelineSettings, fit_smc
from .representation import (
    RepresentationConfig,
    TrainingDivergence,
    balance_losses,
    write_trace_csv,
)
from .weights import LatentDensitySet, confidence_flag

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
CHECKPOINT_FORMAT = "smc-checkpoint/1"
PREDICT_CHUNK = 256


class ConfigError(Exception):
    """User-facing input problem; maps to exit code 2."""


def _read_json(path) -> object:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: malformed JSON: {exc.msg}") from None


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


@dataclass
class ModelEntry:
    identity: str
    checkpoint: Path
    info: Path


@dataclass
class PipelineConfig:
    """Everything ``fit`` and ``predict`` need, with paths resolved against the config file."""

    models: list[ModelEntry]
    test: Path
    settings: PipelineSettings = field(default_factory=PipelineSettings)
    strategies: list[str] = field(default_factory=lambda: ["smc"])
    output_dir: Path = Path(".")
    seed: int = 0

    @classmethod
    def load(cls, path, overrides: argparse.Namespace | None = None) -> "PipelineConfig":
        path = Path(path)
        raw = _read_json(path)
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        base = path.parent
        unknown = set(raw) - {"models", "test", "representation", "weights", "strategies",
                              "output_dir", "seed"}
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
        if "seed" not in raw and getattr(overrides, "seed", None) is None:
            raise ConfigError(f"{path}: a seed is required")
        try:
            models = [
                ModelEntry(str(m["id"]), base / m["checkpoint"], base / m["info"])
                for m in raw["models"]
            ]
            test = base / raw["test"]
            rep = dict(raw.get("representation", {}))
            wcfg = dict(raw.get("weights", {}))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"{path}: missing or malformed field {exc}") from None
        seed = int(raw.get("seed", 0))
        if overrides is not None:
            seed = overrides.seed if getattr(overrides, "seed", None) is not None else seed
            for flag, key in _REP_FLAGS.items():
                value = getattr(overrides, flag, None)
                if value is not None:
                    rep[key] = value
            for flag, key in _WEIGHT_FLAGS.items():
                value = getattr(overrides, flag, None)
                if value is not None:
                    wcfg[key] = value
            if getattr(overrides, "test", None):
                test = Path(overrides.test)
        rep["seed"] = seed
        bad = set(wcfg) - {"gamma", "n_samples", "tau_percentile", "use_info_samples"}
        if bad:
            raise ConfigError(f"{path}: unknown weight keys {sorted(bad)}")
        try:
            settings = PipelineSettings(
                representation=RepresentationConfig.from_json(rep),
                n_latent_samples=int(wcfg.get("n_samples", 500)),
                gamma=float(wcfg.get("gamma", 1e-9)),
                use_info_samples=bool(wcfg.get("use_info_samples", True)),
                tau_percentile=float(wcfg.get("tau_percentile", 1.0)),
            )
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        out = raw.get("output_dir")
        out_dir = Path(os.environ.get("SMC_OUTPUT_DIR", ".")) if out is None else base / out
        if overrides is not None and getattr(overrides, "output_dir", None):
            out_dir = Path(overrides.output_dir)
        return cls(models, test, settings, list(raw.get("strategies", ["smc"])), out_dir, seed)

    def bundle(self) -> ModelBundle:
        models, infos = [], []
        for entry in self.models:
            for p in (entry.checkpoint, entry.info):
                if not p.is_file():
                    raise ConfigError(f"model {entry.identity!r}: file not found: {p}")
            try:
                net = load_mlp(entry.checkpoint)
            except (ValueError, KeyError, json.JSONDecodeError) as exc:
                raise ConfigError(f"{entry.checkpoint}: {exc}") from None
            kind = "classification" if net.layers[-1].activation == "softmax" else "regression"
            models.append(mlp_expert(entry.identity, net, kind))
            try:
                infos.append(ModelInfo.from_json(_read_json(entry.info)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ConfigError(f"{entry.info}: {exc}") from None
        try:
            return ModelBundle(models, infos)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def test_data(self) -> Dataset:
        if not self.test.is_file():
            raise ConfigError(f"test data file not found: {self.test}")
        return read_dataset_csv(self.test)[0]


_REP_FLAGS = {
    "steps": "steps", "latent_dim": "latent_dim", "lambda_rec": "lambda_rec",
    "lambda_con": "lambda_con", "lambda_sep": "lambda_sep", "beta": "beta",
    "beta_floor": "beta_floor", "samples_per_model": "samples_per_model",
    "batch_size": "batch_size", "lr": "lr",
}
_WEIGHT_FLAGS = {"gamma": "gamma", "n_samples": "n_samples", "tau_percentile": "tau_percentile"}


def _add_overrides(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("config overrides")
    g.add_argument("--seed", type=int)
    g.add_argument("--test", help="test-set CSV used to train the representation")
    g.add_argument("--output-dir", help="defaults to the config value, then $SMC_OUTPUT_DIR")
    for flag in ("steps", "latent_dim", "samples_per_model", "batch_size", "n_samples"):
        g.add_argument("--" + flag.replace("_", "-"), dest=flag, type=int)
    for flag in ("lambda_rec", "lambda_con", "lambda_sep", "beta", "beta_floor", "lr", "gamma",
                 "tau_percentile"):
        g.add_argument("--" + flag.replace("_", "-"), dest=flag, type=float)


def _model_ids(cfg: PipelineConfig) -> list[str]:
    return [m.identity for m in cfg.models]


def cmd_fit(args) -> int:
    cfg = PipelineConfig.load(args.config, args)
    bundle = cfg.bundle()
    test = cfg.test_data()
    if test.dim != bundle.dim:
        raise ConfigError(f"test data has {test.dim} columns, models expect {bundle.dim}")
    engine = fit_smc(bundle, test, cfg.settings)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    trace_path = cfg.output_dir / "loss_trace.csv"
    write_trace_csv(trace_path, engine.latent_map.trace)
    ckpt = {
        "format": CHECKPOINT_FORMAT,
        "models": _model_ids(cfg),
        "input_dim": bundle.dim,
        "gamma": cfg.settings.gamma,
        "settings": cfg.settings.to_json(),
        "engine": engine.to_json(),
    }
    ckpt_path = Path(args.checkpoint) if args.checkpoint else cfg.output_dir / "checkpoint.json"
    _write_json(ckpt_path, ckpt)
    print(f"checkpoint: {ckpt_path}")
    print(f"loss trace: {trace_path}")
    return EXIT_OK


def load_checkpoint(path) -> tuple[dict, LatentDensitySet]:
    obj = _read_json(path)
    if not isinstance(obj, dict) or obj.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: not an smc checkpoint")
    try:
        return obj, LatentDensitySet.from_json(obj["engine"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: corrupt checkpoint ({exc})") from None


def _read_predict_input(path) -> tuple[list[str], np.ndarray]:
    """Feature matrix plus row ids (an ``id`` column if present, else 0-based row numbers)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty file (a header row is required)") from None
        rows = [r for r in reader if r]
    skip = {"id", "__target__"}
    cols = [i for i, h in enumerate(header) if h not in skip]
    id_col = header.index("id") if "id" in header else None
    try:
        x = np.array([[float(r[i]) for i in cols] for r in rows], dtype=np.float64)
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"{path}: malformed row ({exc})") from None
    ids = [r[id_col] if id_col is not None else str(k) for k, r in enumerate(rows)]
    return ids, x.reshape(len(rows), len(cols))


def _predict_chunk(bundle: ModelBundle, engine: LatentDensitySet, x: np.ndarray, gamma: float):
    w, conf = engine.weights(x, gamma)
    out = combine(bundle, bundle.predict_all(x), w)
    return out.reshape(len(x), -1), w, conf


def cmd_predict(args) -> int:
    cfg = PipelineConfig.load(args.config, args)
    meta, engine = load_checkpoint(args.checkpoint)
    bundle = cfg.bundle()
    if meta.get("models") != _model_ids(cfg) or meta.get("input_dim") != bundle.dim:
        raise ConfigError("checkpoint does not match the configured models")
    ids, x = _read_predict_input(args.input)
    if len(x) and x.shape[1] != bundle.dim:
        raise ConfigError(f"{args.input}: {x.shape[1]} feature columns, models expect {bundle.dim}")
    gamma = float(meta.get("gamma", cfg.settings.gamma))
    # Fixed-size chunks keep results independent of the thread count.
    chunks = [x[i:i + PREDICT_CHUNK] for i in range(0, len(x), PREDICT_CHUNK)]
    threads = max(1, args.threads)
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda c: _predict_chunk(bundle, engine, c, gamma), chunks))
    else:
        parts = [_predict_chunk(bundle, engine, c, gamma) for c in chunks]
    n = len(bundle)
    if bundle.output_kind == "classification":
        pred_cols = [f"p_{k}" for k in range(bundle.n_classes)]
    else:
        pred_cols = ["prediction"]
    out_path = Path(args.output) if args.output else cfg.output_dir / "predictions.csv"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + pred_cols + [f"w_{j + 1}" for j in range(n)] + ["confidence", "flag"])
        k = 0
        for pred, weights, conf in parts:
            for r in range(len(pred)):
                w.writerow([ids[k]] + [repr(float(v)) for v in pred[r]]
                           + [repr(float(v)) for v in weights[r]]
                           + [repr(float(conf[r])), confidence_flag(float(conf[r]), engine.tau)])
                k += 1
    print(f"predictions: {out_path} ({len(ids)} rows)")
    return EXIT_OK


def _parse_info_counts(text: str | None) -> list[int | None]:
    if not text:
        return [None]
    out: list[int | None] = []
    for tok in text.split(","):
        tok = tok.strip()
        if tok in ("full", "all"):
            out.append(None)
        else:
            try:
                out.append(int(tok))
            except ValueError:
                raise ConfigError(f"bad info count {tok!r}") from None
    return out


def cmd_bench(args) -> int:
    if args.scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {args.scenario!r}; choose from {', '.join(SCENARIOS)}")
    strategies = args.strategies.split(",") if args.strategies else None
    if strategies:
        bad = [s for s in strategies if s not in BENCH_STRATEGIES]
        if bad:
            raise ConfigError(f"unknown strategies {bad}; choose from {', '.join(BENCH_STRATEGIES)}")
    settings = BENCH_SETTINGS
    if args.config:
        raw = _read_json(args.config)
        try:
            settings = PipelineSettings.from_json(raw)
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(f"{args.config}: {exc}") from None
    if args.steps is not None:
        settings = replace(settings, representation=replace(settings.representation, steps=args.steps))
    counts = _parse_info_counts(args.info_counts)
    if args.scenario != "digits" and args.info_counts:
        raise ConfigError("--info-counts only applies to the digits scenario")
    report = ExperimentReport()
    for k in range(args.seeds):
        seed = args.seed + k
        try:
            part = run_benchmark(args.scenario, strategies, seed, settings, counts, args.corpus)
        except InsufficientInformation as exc:
            raise ConfigError(str(exc)) from None
        report.extend(part)
        print(f"seed {seed}: {len(part.rows)} rows", file=sys.stderr)
    out = Path(args.out or os.environ.get("SMC_OUTPUT_DIR", "."))
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "report.csv")
    report.write_json(out / "report.json")
    report.write_plot_csv(out / "plot.csv")
    report.write_timings(out / "timings.csv")
    labels = sorted({(r.info_count, r.strategy, r.metric) for r in report.rows})
    for count, strategy, metric in labels:
        print(f"{count:>5} {strategy:<18} {metric:<28} "
              f"{report.seed_mean(strategy, metric, count):.4f}")
    print(f"report: {out / 'report.csv'}")
    return EXIT_OK


def cmd_subsample(args) -> int:
    raw = _read_json(args.demographics)
    try:
        table = DemographicsTable.from_json(raw)
    except ValueError as exc:
        raise ConfigError(f"{args.demographics}: {exc}") from None
    if table.has_missing():
        table = impute_missing(table)
    densities = build_cohort_densities(table)
    try:
        cohort, names = read_cohort_csv(args.cohort, table.model_ids)
    except (ValueError, OSError) as exc:
        raise ConfigError(str(exc)) from None
    if names != table.names:
        raise ConfigError(f"{args.cohort}: covariate columns {names} do not match {table.names}")
    try:
        kept = rejection_subsample(cohort, densities)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out) if args.out else Path(os.environ.get("SMC_OUTPUT_DIR", ".")) / "subsampled.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_cohort_csv(out, kept, names)
    for j, mid in enumerate(table.model_ids):
        print(f"{mid}: kept {int(np.sum(kept.origin == j))} of {int(np.sum(cohort.origin == j))}")
    return EXIT_OK


def cmd_balance(args) -> int:
    cfg = PipelineConfig.load(args.config, args)
    bundle = cfg.bundle()
    test = cfg.test_data()
    report = balance_losses(bundle, test, cfg.settings.representation, args.threshold,
                            return_report=True)
    rep = replace(cfg.settings.representation, weights=report.weights)
    out = Path(args.out) if args.out else cfg.output_dir / "balanced_representation.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, rep.to_json())
    print(f"reconstruction-only L_rec: {report.reference_rec:.6g}")
    for lam, value in report.ladder_rec.items():
        print(f"lambda {lam:g}: L_rec {value:.6g}")
    print(f"chosen lambda_con = lambda_sep = {report.weights.con:g}; written to {out}")
    return EXIT_OK


def cmd_export_scenario(args) -> int:
    """Write a benchmark scenario as files that ``fit``/``predict`` consume."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.scenario == "digits":
        sc = make_digits_scenario(args.seed, args.corpus)
        bundle = sc.bundle(args.info_count)
        nets = list(sc.experts)
        test, validation = sc.test, sc.validation
        names = [f"px{k}" for k in range(64)]
    elif args.scenario in SCENARIOS:
        sc = make_regression_scenario(args.scenario.split("-", 1)[1], args.seed)
        bundle = sc.bundle
        nets = list(bundle.models)
        test, validation = sc.test, sc.validation
        names = ["x"]
    else:
        raise ConfigError(f"unknown scenario {args.scenario!r}; choose from {', '.join(SCENARIOS)}")
    entries = []
    for model, info in zip(nets, bundle.infos):
        net = getattr(model.predictor, "net", None)
        if net is None:
            raise ConfigError(f"model {model.identity!r} cannot be exported")
        _write_json(out / f"{model.identity}.model.json", mlp_to_json(net))
        save_model_info(out / f"{model.identity}.info.json", info)
        entries.append({"id": model.identity, "checkpoint": f"{model.identity}.model.json",
                        "info": f"{model.identity}.info.json"})
    write_dataset_csv(out / "test.csv", test, names)
    write_dataset_csv(out / "validation.csv", validation, names)
    config = {"models": entries, "test": "test.csv", "seed": args.seed, "output_dir": "run",
              "representation": replace(BENCH_SETTINGS.representation, seed=args.seed).to_json(),
              "weights": {"gamma": 1e-9, "n_samples": 500, "tau_percentile": 1.0}}
    _write_json(out / "config.json", config)
    print(f"config: {out / 'config.json'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smc", description="Instance-wise model combination from learnt domain densities."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="train the representation and latent densities")
    p.add_argument("config", help="pipeline config JSON")
    p.add_argument("--checkpoint", help="checkpoint path (default OUTPUT_DIR/checkpoint.json)")
    _add_overrides(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="weights, predictions and confidence for new points")
    p.add_argument("config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="CSV of feature rows (optional id column)")
    p.add_argument("--output", help="default OUTPUT_DIR/predictions.csv")
    p.add_argument("--threads", type=int, default=1, help="parallel prediction workers")
    _add_overrides(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench", help="run a benchmark scenario over several seeds")
    p.add_argument("--scenario", required=True, help=", ".join(SCENARIOS))
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--strategies", help="comma list from " + ", ".join(BENCH_STRATEGIES))
    p.add_argument("--info-counts", help="digits only: comma list of counts or 'full'")
    p.add_argument("--config", help="pipeline settings JSON (default: library defaults with 4 samples per model per step)")
    p.add_argument("--steps", type=int, help="representation training steps")
    p.add_argument("--corpus", help="digits CSV (defaults to the bundled copy)")
    p.add_argument("--out", help="output directory (default $SMC_OUTPUT_DIR or .)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("subsample", help="rejection-filter a pooled cohort")
    p.add_argument("--demographics", required=True, help="demographics table JSON")
    p.add_argument("--cohort", required=True, help="cohort CSV with an __origin__ column")
    p.add_argument("--out", help="filtered cohort CSV")
    p.set_defaults(func=cmd_subsample)

    p = sub.add_parser("balance", help="pick connection/separation weights")
    p.add_argument("config")
    p.add_argument("--threshold", type=float, default=0.025)
    p.add_argument("--out", help="balanced representation config JSON")
    _add_overrides(p)
    p.set_defaults(func=cmd_balance)

    p = sub.add_parser("export-scenario", help="write a benchmark scenario as fit/predict inputs")
    p.add_argument("--scenario", required=True, help=", ".join(SCENARIOS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--info-count", type=int, help="digits only: samples per model (default all)")
    p.add_argument("--corpus")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_scenario)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"smc: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDivergence, FloatingPointError) as exc:
        print(f"smc: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, FileNotFoundError, InsufficientInformation) as exc:
        print(f"smc: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
