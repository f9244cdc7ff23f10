"""Command-line pipeline: generate, train, evaluate, predict, ablate.

Every command reads a JSON run configuration (strictly validated: unknown
keys are rejected), applies any flag overrides, and echoes the effective
configuration into its output directory so results can be reproduced
exactly.  Artifacts are written atomically; exit status is nonzero exactly
when a command fails.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from dataclasses import dataclass, replace
from datetime import timedelta

import numpy as np

from . import persistence
from .data import (
    GeneratorConfig,
    MultivariateSeries,
    RegimeSpec,
    generate,
    load_csv,
    save_csv,
)
from .evaluation import (
    NearestNeighborBaseline,
    RidgeBaseline,
    compare,
    evaluate_rolling,
)
from .model import (
    VARIANTS,
    ExpertClassifier,
    Forecaster,
    ModelConfig,
    count_parameters,
)
from .training import TrainConfig, train, write_loss_trace

__all__ = ["main", "RunConfig", "CliError"]

DATA_ROOT_ENV = "MULTIFUTURE_DATA_ROOT"

_ABLATION_VARIANTS = ("full", "non_separated", "shared_encoder", "one_loss",
                      "tconv_decoder")
_SCALABILITY_FUTURES = (1, 3, 12)


class CliError(ValueError):
    """User-facing configuration or invocation error."""


@dataclass(frozen=True)
class PathsSection:
    data_dir: str | None = None
    checkpoint_dir: str = "runs/train"
    report_dir: str = "runs/report"


@dataclass(frozen=True)
class SplitSection:
    train_hours: int = 552          # 23 days
    warmup_hours: int | None = None  # defaults to the model's n_p


@dataclass(frozen=True)
class DataSection:
    merchants: int = 4
    merchant: str = "merchant_0000"
    scope: str = "merchant"  # or "category": sample windows across all merchants

    def __post_init__(self):
        if self.scope not in ("merchant", "category"):
            raise CliError(f"data.scope must be merchant|category, got {self.scope!r}")
        if self.merchants < 1:
            raise CliError("data.merchants must be >= 1")


def _build_section(cls, payload, section):
    if not isinstance(payload, dict):
        raise CliError(f"section {section!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise CliError(f"unknown keys in {section!r}: {unknown}")
    try:
        return cls(**payload)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid {section!r} section: {exc}") from exc


def _build_generator(payload) -> GeneratorConfig:
    payload = dict(payload)
    regimes = payload.pop("regimes", None)
    if regimes is not None:
        specs = []
        for i, entry in enumerate(regimes):
            specs.append(_build_section(RegimeSpec, entry, f"generator.regimes[{i}]"))
        payload["regimes"] = tuple(specs)
    if "base_levels" in payload:
        payload["base_levels"] = tuple(payload["base_levels"])
    return _build_section(GeneratorConfig, payload, "generator")


@dataclass
class RunConfig:
    """The validated contents of a run-configuration file."""

    model: ModelConfig
    train: TrainConfig
    generator: GeneratorConfig
    paths: PathsSection
    split: SplitSection
    data: DataSection

    _SECTIONS = ("model", "train", "generator", "paths", "split", "data")

    @classmethod
    def from_payload(cls, payload: dict) -> "RunConfig":
        if not isinstance(payload, dict):
            raise CliError("run configuration must be a JSON object")
        unknown = sorted(set(payload) - set(cls._SECTIONS))
        if unknown:
            raise CliError(f"unknown configuration sections: {unknown}")
        return cls(
            model=_build_section(ModelConfig, payload.get("model", {}), "model"),
            train=_build_section(TrainConfig, payload.get("train", {}), "train"),
            generator=_build_generator(payload.get("generator", {})),
            paths=_build_section(PathsSection, payload.get("paths", {}), "paths"),
            split=_build_section(SplitSection, payload.get("split", {}), "split"),
            data=_build_section(DataSection, payload.get("data", {}), "data"),
        )

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        try:
            with open(path) as fh:
                payload = json.load(fh)
        except FileNotFoundError:
            raise CliError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise CliError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_payload(payload)

    def to_payload(self) -> dict:
        payload = dataclasses.asdict(self)
        payload["generator"]["regimes"] = [
            dataclasses.asdict(r) for r in self.generator.regimes
        ]
        payload["generator"]["base_levels"] = list(self.generator.base_levels)
        return payload

    def data_dir(self) -> str:
        if self.paths.data_dir:
            return self.paths.data_dir
        return os.environ.get(DATA_ROOT_ENV, "data")

    def warmup_hours(self) -> int:
        if self.split.warmup_hours is not None:
            return self.split.warmup_hours
        return self.model.n_p


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    model = config.model
    trainc = config.train
    gen = config.generator
    if getattr(args, "futures", None) is not None:
        model = replace(model, f=args.futures)
    if getattr(args, "variant", None) is not None:
        model = replace(model, variant=args.variant)
    if getattr(args, "seed", None) is not None:
        if args.command == "generate":
            gen = replace(gen, seed=args.seed)
        else:
            trainc = replace(trainc, seed=args.seed)
    if model.variant == "one_loss":
        trainc = replace(trainc, gamma=0.0)
    return RunConfig(model, trainc, gen, config.paths, config.split, config.data)


# -- output helpers -----------------------------------------------------------


def _write_text(path: str, text: str) -> None:
    persistence._write_atomic(path, text.encode())


def _echo_config(config: RunConfig, out_dir: str) -> None:
    _write_text(os.path.join(out_dir, "effective_config.json"),
                json.dumps(config.to_payload(), indent=2) + "\n")


def _say(message: str) -> None:
    print(message, file=sys.stderr)


# -- data loading --------------------------------------------------------------


def _merchant_path(data_dir: str, merchant: str) -> str:
    return os.path.join(data_dir, f"{merchant}.csv")


def _load_training_series(config: RunConfig):
    data_dir = config.data_dir()
    if config.data.scope == "category":
        manifest_path = os.path.join(data_dir, "dataset_manifest.json")
        try:
            with open(manifest_path) as fh:
                manifest = json.load(fh)
        except FileNotFoundError:
            raise CliError(
                f"category scope needs {manifest_path} (run `generate` first)"
            ) from None
        return [
            load_csv(os.path.join(data_dir, entry["file"]), entry["merchant_id"])
            for entry in manifest["files"]
        ]
    path = _merchant_path(data_dir, config.data.merchant)
    if not os.path.exists(path):
        raise CliError(f"no data for {config.data.merchant!r} at {path}")
    return load_csv(path, config.data.merchant)


def _train_test_split(series: MultivariateSeries, config: RunConfig):
    boundary = series.start_timestamp + timedelta(hours=config.split.train_hours)
    from .data import split_by_date

    return split_by_date(series, boundary, warmup_hours=config.warmup_hours())


# -- commands -------------------------------------------------------------------


def cmd_generate(config: RunConfig, out_dir: str) -> int:
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for index in range(config.data.merchants):
        merchant_id = f"merchant_{index:04d}"
        seed = config.generator.seed + index
        gcfg = replace(config.generator, seed=seed, merchant_id=merchant_id)
        series = generate(gcfg)
        filename = f"{merchant_id}.csv"
        save_csv(series, os.path.join(out_dir, filename))
        entries.append({"merchant_id": merchant_id, "file": filename, "seed": seed})
        _say(f"wrote {filename} ({len(series)} hours)")
    manifest = {"files": entries,
                "generator": config.to_payload()["generator"]}
    _write_text(os.path.join(out_dir, "dataset_manifest.json"),
                json.dumps(manifest, indent=2) + "\n")
    _echo_config(config, out_dir)
    print(out_dir)
    return 0


def cmd_train(config: RunConfig, out_dir: str) -> int:
    os.makedirs(out_dir, exist_ok=True)
    series = _load_training_series(config)
    if isinstance(series, list):
        split = [_train_test_split(s, config)[0] for s in series]
    else:
        split = _train_test_split(series, config)[0]

    def progress(record):
        if record.iteration % 200 == 0:
            _say(f"iter {record.iteration}: loss {record.total_loss:.4f}")

    start = time.perf_counter()
    model, trace = train(split, config.model, config.train, progress=progress)
    wall = time.perf_counter() - start

    checkpoint_dir = os.path.join(out_dir, "checkpoint")
    persistence.save(model, checkpoint_dir, training_seed=config.train.seed)
    write_loss_trace(trace, os.path.join(out_dir, "loss_trace.csv"))
    counts = count_parameters(model)
    summary = {
        "model_id": model.model_id,
        "variant": config.model.variant,
        "seed": config.train.seed,
        "iterations": len(trace),
        "final_loss": trace[-1].total_loss if trace else None,
        "first_loss": trace[0].total_loss if trace else None,
        "parameter_count": {"total": counts.total, "encoder": counts.encoder,
                            "decoder": counts.decoder},
        "wall_time_s": wall,
    }
    _write_text(os.path.join(out_dir, "run_summary.json"),
                json.dumps(summary, indent=2) + "\n")
    _echo_config(config, out_dir)
    _say(f"trained {model.model_id} in {wall:.1f}s "
         f"({counts.total} parameters)")
    print(checkpoint_dir)
    return 0


def _predictions_csv(report, predictions, feature_names) -> str:
    lines = []
    f = report.f
    header = ["window", "hour"]
    for name in feature_names:
        header.append(f"{name}_truth")
        header.extend(f"{name}_future_{j + 1}" for j in range(f))
    lines.append(",".join(header))
    for record, (truth, futures) in zip(report.per_window, predictions):
        for k in range(report.n_h):
            row = [str(record.window_index), str(record.start_hour + k)]
            for j_feat in range(truth.shape[0]):
                row.append(f"{truth[j_feat, k]:.17g}")
                row.extend(f"{futures.futures[j, j_feat, k]:.17g}"
                           for j in range(f))
            lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def cmd_evaluate(config: RunConfig, checkpoint: str | None, baseline: str | None,
                 out_dir: str) -> int:
    os.makedirs(out_dir, exist_ok=True)
    series = _load_training_series(config)
    if isinstance(series, list):
        raise CliError("evaluate runs on a single merchant; set data.scope=merchant")
    train_split, test_split = _train_test_split(series, config)
    n_p, n_h = config.model.n_p, config.model.n_h

    if baseline == "nn":
        predictor = NearestNeighborBaseline(train_split, n_p, n_h)
    elif baseline == "ridge":
        predictor = RidgeBaseline(train_split, n_p, n_h)
    elif baseline is not None:
        raise CliError(f"unknown baseline {baseline!r}; expected nn|ridge")
    else:
        if checkpoint is None:
            raise CliError("evaluate needs --checkpoint or --baseline")
        predictor = persistence.load(checkpoint)
        if not isinstance(predictor, Forecaster):
            raise CliError("checkpoint does not hold a forecaster")
        if (predictor.config.n_p, predictor.config.n_h) != (n_p, n_h):
            raise CliError(
                f"checkpoint horizons ({predictor.config.n_p}, "
                f"{predictor.config.n_h}) do not match config ({n_p}, {n_h})")

    report, predictions = evaluate_rolling(
        predictor, test_split, n_p, n_h,
        epsilon=config.train.znorm_epsilon, collect_predictions=True)
    _write_text(os.path.join(out_dir, "report.json"), report.to_json() + "\n")
    _write_text(os.path.join(out_dir, "report.csv"), report.to_csv())
    _write_text(os.path.join(out_dir, "predictions.csv"),
                _predictions_csv(report, predictions, test_split.feature_names))
    _echo_config(config, out_dir)
    _say(f"{report.model_id}: oracle_rmse {report.oracle_rmse:.4f} "
         f"oracle_nrmse {report.oracle_nrmse:.4f} over {report.n_windows} windows")
    print(os.path.join(out_dir, "report.json"))
    return 0


def cmd_predict(checkpoint: str, input_csv: str, expert: str | None,
                out_dir: str) -> int:
    os.makedirs(out_dir, exist_ok=True)
    model = persistence.load(checkpoint)
    if not isinstance(model, Forecaster):
        raise CliError("checkpoint does not hold a forecaster")
    series = load_csv(input_csv)
    n_p, n_h = model.config.n_p, model.config.n_h
    if len(series) < n_p:
        raise CliError(
            f"input has {len(series)} hours; need at least n_p = {n_p}")
    window = series.values[-n_p:]
    futures = model.predict_futures(window)

    lines = ["hour,feature,future,value,shape,scale_mul,scale_add"]
    for j in range(futures.f):
        for j_feat, name in enumerate(series.feature_names):
            for k in range(n_h):
                lines.append(
                    f"{k + 1},{name},{j + 1},"
                    f"{futures.futures[j, j_feat, k]:.17g},"
                    f"{futures.shape_preds[j, j_feat, k]:.17g},"
                    f"{futures.scale_mul[j, j_feat]:.17g},"
                    f"{futures.scale_add[j, j_feat]:.17g}")
    _write_text(os.path.join(out_dir, "futures.csv"), "\n".join(lines) + "\n")

    act_lines = []
    if futures.activations is not None:
        n_s = futures.activations.shape[2]
        header = ["future", "feature", "top_1", "top_2", "top_3"]
        header.extend(f"r_{k}" for k in range(n_s))
        act_lines.append(",".join(header))
        for j in range(futures.f):
            for j_feat, name in enumerate(series.feature_names):
                r = futures.activations[j, j_feat]
                top = np.argsort(-r)[:3]
                top = list(top) + [top[-1]] * (3 - len(top))
                row = [str(j + 1), name, *(str(int(t)) for t in top)]
                row.extend(f"{v:.17g}" for v in r)
                act_lines.append(",".join(row))
    else:
        act_lines.append("future,feature")  # tconv decoder: no template mixture
    _write_text(os.path.join(out_dir, "activations.csv"),
                "\n".join(act_lines) + "\n")

    if expert is not None:
        classifier = persistence.load(expert)
        if not isinstance(classifier, ExpertClassifier):
            raise CliError("expert checkpoint does not hold an expert classifier")
        probs = classifier.predict_proba(window)
        prob_lines = ["future,probability"]
        prob_lines.extend(f"{j + 1},{p:.17g}" for j, p in enumerate(probs))
        _write_text(os.path.join(out_dir, "expert_probabilities.csv"),
                    "\n".join(prob_lines) + "\n")

    run_info = {
        "checkpoint": checkpoint, "input": input_csv,
        "model_id": model.model_id, "n_p": n_p, "n_h": n_h,
        "futures": futures.f, "expert": expert,
    }
    _write_text(os.path.join(out_dir, "effective_config.json"),
                json.dumps(run_info, indent=2) + "\n")
    print(os.path.join(out_dir, "futures.csv"))
    return 0


def cmd_ablate(config: RunConfig, scalability: bool, out_dir: str) -> int:
    os.makedirs(out_dir, exist_ok=True)
    series = _load_training_series(config)
    if isinstance(series, list):
        raise CliError("ablate runs on a single merchant; set data.scope=merchant")
    train_split, test_split = _train_test_split(series, config)

    if scalability:
        rows = ["scheme,f,params_total,params_encoder,params_decoder,sec_per_iter"]
        for scheme in ("full", "model_ensemble"):
            for f in _SCALABILITY_FUTURES:
                model_cfg = replace(config.model, variant=scheme, f=f)
                start = time.perf_counter()
                model, trace = train(train_split, model_cfg, config.train)
                wall = time.perf_counter() - start
                counts = count_parameters(model)
                per_iter = wall / max(len(trace), 1)
                rows.append(f"{scheme},{f},{counts.total},{counts.encoder},"
                            f"{counts.decoder},{per_iter:.6f}")
                _say(f"{scheme} f={f}: {counts.total} params, "
                     f"{per_iter * 1e3:.1f} ms/iter")
        _write_text(os.path.join(out_dir, "scalability.csv"),
                    "\n".join(rows) + "\n")
        _echo_config(config, out_dir)
        print(os.path.join(out_dir, "scalability.csv"))
        return 0

    reports = []
    for variant in _ABLATION_VARIANTS:
        model_cfg = replace(config.model, variant=variant)
        train_cfg = config.train
        if variant == "one_loss":
            train_cfg = replace(train_cfg, gamma=0.0)
        model, _ = train(train_split, model_cfg, train_cfg)
        report = evaluate_rolling(model, test_split, model_cfg.n_p, model_cfg.n_h,
                                  epsilon=train_cfg.znorm_epsilon)
        report.model_id = variant
        reports.append(report)
        _say(f"{variant}: oracle_rmse {report.oracle_rmse:.4f} "
             f"oracle_nrmse {report.oracle_nrmse:.4f}")
    table = compare(reports)
    _write_text(os.path.join(out_dir, "comparison.csv"), table.to_csv())
    _write_text(os.path.join(out_dir, "comparison.txt"), table.to_text())
    _echo_config(config, out_dir)
    print(os.path.join(out_dir, "comparison.csv"))
    return 0


# -- argument parsing ------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multifuture",
        description="Multi-future transaction-series forecasting pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write synthetic merchant CSVs")
    gen.add_argument("--config", required=True)
    gen.add_argument("--seed", type=int, help="override the generator seed")
    gen.add_argument("--out", help="output directory (default: data dir)")

    tr = sub.add_parser("train", help="train a forecaster")
    tr.add_argument("--config", required=True)
    tr.add_argument("--seed", type=int, help="override the training seed")
    tr.add_argument("--futures", type=int, help="override the number of futures")
    tr.add_argument("--variant", choices=list(VARIANTS))
    tr.add_argument("--out", help="output directory (default: paths.checkpoint_dir)")

    ev = sub.add_parser("evaluate", help="rolling evaluation on the test split")
    ev.add_argument("--config", required=True)
    ev.add_argument("--checkpoint")
    ev.add_argument("--baseline", choices=["nn", "ridge"])
    ev.add_argument("--out", help="output directory (default: paths.report_dir)")

    pr = sub.add_parser("predict", help="predict futures from a CSV history")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--input", required=True, help="series CSV with >= n_p hours")
    pr.add_argument("--expert", help="expert-classifier checkpoint directory")
    pr.add_argument("--out", default="runs/predict")

    ab = sub.add_parser("ablate", help="train and compare the ablation variants")
    ab.add_argument("--config", required=True)
    ab.add_argument("--seed", type=int, help="override the training seed")
    ab.add_argument("--scalability", action="store_true",
                    help="sweep f over 1/3/12 for full vs model_ensemble")
    ab.add_argument("--out", help="output directory (default: paths.report_dir)")

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "predict":
            return cmd_predict(args.checkpoint, args.input, args.expert, args.out)
        config = _apply_overrides(RunConfig.from_file(args.config), args)
        if args.command == "generate":
            return cmd_generate(config, args.out or config.data_dir())
        if args.command == "train":
            return cmd_train(config, args.out or config.paths.checkpoint_dir)
        if args.command == "evaluate":
            return cmd_evaluate(config, args.checkpoint, args.baseline,
                                args.out or config.paths.report_dir)
        if args.command == "ablate":
            return cmd_ablate(config, args.scalability,
                              args.out or config.paths.report_dir)
        raise CliError(f"unknown command {args.command!r}")
    except (CliError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
