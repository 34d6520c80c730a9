"""Batch command-line surface wiring the pipeline together.

Subcommands: synth, features, train, predict, evaluate, significance,
sweep. Options come from a JSON config file with flat dotted keys plus
command-line flags; flags win. All outputs land under the --out directory
and are written atomically (write-then-rename). Reports never depend on the
thread count.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import FeatureSubsetError, StreamQoEError
from .evaluation import (
    EvalConfig,
    gen_content_splits,
    ranksum_significance,
    run_cross_dataset,
    run_experiment1,
    run_experiment2,
    train_fraction_sweep,
    write_report_csv,
    write_report_json,
)
from .features import (
    FEATURE_NAMES,
    extract_dataset,
    normalize_subset,
    read_feature_csv,
    standardize_apply,
    standardize_fit,
    write_feature_csv,
)
from .metrics import METRICS
from .pooling import HysteresisParams, PoolingConfig, VQParams
from .regress import (
    DEFAULT_GRIDS,
    REGRESSOR_KINDS,
    fit_model,
    grid_search_cv,
    load_model,
    model_digest,
    predict,
    save_model,
)
from .synth import SynthConfig, write_dataset

METRIC_CHOICES = (*METRICS.keys(), "csv")

CONFIG_DEFAULTS = {
    "manifest": None,
    "feature_table": None,
    "test_feature_table": None,
    "metric": "psnr",
    "csv_higher_is_better": True,
    "width": None,
    "height": None,
    "m_variant": "full",
    "pooling.method": "mean",
    "pooling.hysteresis.tau_s": 2.0,
    "pooling.hysteresis.alpha": 0.8,
    "pooling.vq.w_low": 0.75,
    "pooling.vq.kmeans_restarts": 10,
    "pooling.vq.seed": 0,
    "regressor": "ridge",
    "features": "vqa,r1,r2,m,i",
    "experiment": "1",
    "trials": 1000,
    "train_fraction": 0.8,
    "fractions": "0.2,0.4,0.6,0.8",
    "cv_folds": 10,
    "cv_metric": "mse",
    "repetitions": None,
    "seed": 0,
    "threads": None,
    "out": "out",
    "alpha": 0.01,
    "model": None,
    "reports": None,
    "labels": None,
    "synth.n_contents": 10,
    "synth.n_patterns": 6,
    "synth.width": 64,
    "synth.height": 64,
    "synth.fps": 5.0,
    "synth.frames_min": 60,
    "synth.frames_max": 120,
    "synth.stalls_min": 0,
    "synth.stalls_max": 2,
    "synth.stall_duration_min": 0.5,
    "synth.stall_duration_max": 4.0,
    "synth.bitrate_ladder": "100,175,250",
    "synth.mos_noise_sigma": 0.0,
    "synth.mos_lo": 0.0,
    "synth.mos_hi": 100.0,
}

OPEN_PREFIXES = ("grid.", "baselines.")


def atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


class RunConfig:
    """Flat dotted-key configuration resolved from defaults, an optional JSON
    config file, and explicitly supplied command-line flags (in that order)."""

    def __init__(self, values: dict):
        self.values = values

    @classmethod
    def resolve(cls, config_path: str | None, flag_values: dict) -> "RunConfig":
        values = dict(CONFIG_DEFAULTS)
        if config_path:
            with open(config_path, encoding="utf-8") as fh:
                file_values = json.load(fh)
            for key, val in file_values.items():
                if key not in CONFIG_DEFAULTS and not key.startswith(OPEN_PREFIXES):
                    raise StreamQoEError(f"unknown config key {key!r}")
                values[key] = val
        for key, val in flag_values.items():
            if val is not None:
                values[key] = val
        return cls(values)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    # --- typed views ---------------------------------------------------------

    def out_dir(self) -> Path:
        return Path(self.values["out"])

    def threads(self) -> int:
        if self.values["threads"] is not None:
            return int(self.values["threads"])
        env = os.environ.get("STREAMQOE_THREADS")
        if env:
            return int(env)
        return os.cpu_count() or 1

    def pooling_config(self) -> PoolingConfig:
        v = self.values
        return PoolingConfig(
            method=v["pooling.method"],
            hysteresis=HysteresisParams(
                tau_s=float(v["pooling.hysteresis.tau_s"]),
                alpha=float(v["pooling.hysteresis.alpha"]),
            ),
            vq=VQParams(
                w_low=float(v["pooling.vq.w_low"]),
                kmeans_restarts=int(v["pooling.vq.kmeans_restarts"]),
                seed=int(v["pooling.vq.seed"]),
            ),
        )

    def feature_subset(self) -> tuple[str, ...]:
        raw = self.values["features"]
        names = raw if isinstance(raw, (list, tuple)) else raw.split(",")
        return normalize_subset([n.strip() for n in names if n.strip()])

    def grid_override(self, kind: str) -> dict | None:
        prefix = f"grid.{kind}."
        grid = {}
        for key, val in self.values.items():
            if key.startswith(prefix):
                grid[key[len(prefix):]] = val if isinstance(val, list) else [val]
        return grid or None

    def baseline_grid(self, kind: str) -> dict:
        prefix = f"baselines.{kind}."
        return {
            key[len(prefix):]: (val if isinstance(val, list) else [val])
            for key, val in self.values.items()
            if key.startswith(prefix)
        }

    def eval_config(self) -> EvalConfig:
        kind = self.values["regressor"]
        return EvalConfig(
            regressor=kind,
            feature_subset=self.feature_subset(),
            grid=self.grid_override(kind) if kind != "br" else None,
            cv_folds=int(self.values["cv_folds"]),
            cv_metric=self.values["cv_metric"],
            seed=int(self.values["seed"]),
            n_jobs=self.threads(),
        )

    def synth_config(self) -> SynthConfig:
        v = self.values
        ladder = v["synth.bitrate_ladder"]
        if isinstance(ladder, str):
            ladder = tuple(float(x) for x in ladder.split(","))
        else:
            ladder = tuple(float(x) for x in ladder)
        return SynthConfig(
            n_contents=int(v["synth.n_contents"]),
            n_patterns=int(v["synth.n_patterns"]),
            width=int(v["synth.width"]),
            height=int(v["synth.height"]),
            fps=float(v["synth.fps"]),
            frames_range=(int(v["synth.frames_min"]), int(v["synth.frames_max"])),
            stall_count_range=(int(v["synth.stalls_min"]), int(v["synth.stalls_max"])),
            stall_duration_range=(
                float(v["synth.stall_duration_min"]),
                float(v["synth.stall_duration_max"]),
            ),
            bitrate_ladder=ladder,
            mos_noise_sigma=float(v["synth.mos_noise_sigma"]),
            mos_scale=(float(v["synth.mos_lo"]), float(v["synth.mos_hi"])),
            seed=int(v["seed"]),
        )

    def load_dataset(self, table_key: str = "feature_table"):
        table = self.values[table_key]
        metric = self.values["metric"]
        if metric in METRICS:
            higher = METRICS[metric][1]
        else:
            higher = bool(self.values["csv_higher_is_better"])
        if table:
            return read_feature_csv(
                table,
                vqa_higher_is_better=higher,
                m_variant=self.values["m_variant"],
            )
        manifest = self.values["manifest"]
        if not manifest:
            raise StreamQoEError("need --feature-table or --manifest for this command")
        return extract_dataset(
            manifest,
            metric=metric,
            pooling=self.pooling_config(),
            width=self.values["width"],
            height=self.values["height"],
            m_variant=self.values["m_variant"],
            csv_higher_is_better=bool(self.values["csv_higher_is_better"]),
            name=Path(manifest).stem,
        )


# --- commands ------------------------------------------------------------------


def cmd_synth(cfg: RunConfig) -> int:
    manifest = write_dataset(
        cfg.synth_config(),
        cfg.out_dir(),
        metric=cfg["metric"],
        pooling=cfg.pooling_config(),
    )
    print(f"wrote {manifest}")
    return 0


def cmd_features(cfg: RunConfig) -> int:
    dataset = cfg.load_dataset()
    out = cfg.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    path = out / "features.csv"
    tmp = out / f".features.csv.tmp{os.getpid()}"
    write_feature_csv(tmp, dataset)
    os.replace(tmp, path)
    print(f"wrote {path} ({len(dataset.samples)} sessions)")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    dataset = cfg.load_dataset()
    subset = cfg.feature_subset()
    kind = cfg["regressor"]
    if kind == "br":
        raise StreamQoEError("the br pathway has nothing to train")
    X, y = dataset.feature_matrix(subset)
    grid = cfg.grid_override(kind) or DEFAULT_GRIDS[kind]
    hp = grid_search_cv(
        X, y, kind, grid, k=int(cfg["cv_folds"]), seed=int(cfg["seed"]),
        select=cfg["cv_metric"],
    )
    std = standardize_fit(X)
    model = fit_model(
        kind, standardize_apply(std, X), y, hp,
        seed=int(cfg["seed"]), standardizer=std, feature_mask=subset,
    )
    out = cfg.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    path = out / "model.json"
    tmp = out / f".model.json.tmp{os.getpid()}"
    save_model(model, tmp)
    os.replace(tmp, path)
    print(f"wrote {path} (kind={kind}, hyperparams={hp}, digest={model_digest(model)[:12]})")
    return 0


def cmd_predict(cfg: RunConfig) -> int:
    if not cfg["model"]:
        raise StreamQoEError("predict needs --model")
    model = load_model(cfg["model"])
    unknown = [f for f in model.feature_mask if f not in FEATURE_NAMES]
    if unknown:
        raise FeatureSubsetError(f"model uses unknown features {unknown}")
    dataset = cfg.load_dataset()
    X, _ = dataset.feature_matrix(tuple(model.feature_mask))
    preds = predict(model, X)
    lines = ["content_id,pattern_id,prediction"]
    for sample, value in zip(dataset.samples, preds):
        lines.append(f"{sample.content_id},{sample.pattern_id},{float(value)!r}")
    path = cfg.out_dir() / "predictions.csv"
    atomic_write_text(path, "\n".join(lines) + "\n")
    print(f"wrote {path}")
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    dataset = cfg.load_dataset()
    eval_cfg = cfg.eval_config()
    experiment = str(cfg["experiment"])
    out = cfg.out_dir()
    if experiment == "1":
        splits = gen_content_splits(
            dataset.contents(), float(cfg["train_fraction"]), int(cfg["trials"]),
            int(cfg["seed"]),
        )
        report = run_experiment1(dataset, splits, eval_cfg)
        stem = "report_exp1"
    elif experiment == "2":
        report = run_experiment2(dataset, eval_cfg)
        stem = "report_exp2"
    elif experiment == "cross":
        if not cfg["test_feature_table"]:
            raise StreamQoEError("cross-dataset evaluation needs --test-feature-table")
        test_ds = cfg.load_dataset("test_feature_table")
        reps = cfg["repetitions"]
        report = run_cross_dataset(
            dataset, test_ds, eval_cfg,
            repetitions=int(reps) if reps is not None else None,
        )
        stem = "report_cross"
    else:
        raise StreamQoEError(f"unknown experiment {experiment!r}")
    write_report_json(report, out / f"{stem}.json")
    write_report_csv(report, out / f"{stem}.csv")
    print(
        f"experiment {experiment}: median SROCC {report.median_srocc:.4f}, "
        f"median LCC {report.median_lcc:.4f} "
        f"({report.n_trials} trials, {report.n_failed} failed) -> {out / (stem + '.json')}"
    )
    return 0


def cmd_significance(cfg: RunConfig) -> int:
    if not cfg["reports"]:
        raise StreamQoEError("significance needs --reports a.json,b.json,...")
    raw = cfg["reports"]
    paths = raw if isinstance(raw, list) else [p.strip() for p in raw.split(",") if p.strip()]
    if cfg["labels"]:
        raw_labels = cfg["labels"]
        labels = (
            raw_labels if isinstance(raw_labels, list)
            else [s.strip() for s in raw_labels.split(",")]
        )
        if len(labels) != len(paths):
            raise StreamQoEError("need exactly one label per report")
    else:
        labels = [Path(p).stem for p in paths]
    dists = {}
    for label, p in zip(labels, paths):
        with open(p, encoding="utf-8") as fh:
            data = json.load(fh)
        dists[label] = [t["srocc"] for t in data["trials"]]
    matrix = ranksum_significance(dists, alpha=float(cfg["alpha"]))
    out = cfg.out_dir()
    atomic_write_text(
        out / "significance.json", json.dumps(matrix.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    lines = ["," + ",".join(matrix.labels)]
    for label, row in zip(matrix.labels, matrix.verdicts):
        lines.append(label + "," + ",".join(row))
    atomic_write_text(out / "significance.csv", "\n".join(lines) + "\n")
    print(f"wrote {out / 'significance.json'}")
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    dataset = cfg.load_dataset()
    raw = cfg["fractions"]
    fractions = (
        [float(f) for f in raw] if isinstance(raw, list)
        else [float(f) for f in str(raw).split(",") if f.strip()]
    )
    curves = train_fraction_sweep(
        dataset, fractions, int(cfg["seed"]), cfg.eval_config(),
        n_trials=int(cfg["trials"]),
    )
    out = cfg.out_dir()
    payload = {
        "fractions": [f for f, _ in curves],
        "median_srocc": [r.median_srocc for _, r in curves],
        "median_lcc": [r.median_lcc for _, r in curves],
        "reports": [r.to_dict() for _, r in curves],
    }
    atomic_write_text(out / "sweep.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
    lines = ["# fraction median_srocc median_lcc"]
    for fraction, report in curves:
        lines.append(f"{fraction} {report.median_srocc!r} {report.median_lcc!r}")
    atomic_write_text(out / "sweep.dat", "\n".join(lines) + "\n")
    print(f"wrote {out / 'sweep.json'}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "features": cmd_features,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "significance": cmd_significance,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamqoe",
        description="Streaming-video QoE feature extraction, training and evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file with flat dotted keys")
        p.add_argument("--manifest", dest="manifest")
        p.add_argument("--feature-table", dest="feature_table")
        p.add_argument("--test-feature-table", dest="test_feature_table")
        p.add_argument("--metric", choices=METRIC_CHOICES, dest="metric")
        p.add_argument("--pooling", choices=("mean", "hysteresis", "vq"),
                       dest="pooling.method")
        p.add_argument("--regressor", choices=(*REGRESSOR_KINDS, "br"), dest="regressor")
        p.add_argument("--features", dest="features",
                       help="comma-separated subset of vqa,r1,r2,m,i")
        p.add_argument("--experiment", choices=("1", "2", "cross"), dest="experiment")
        p.add_argument("--trials", type=int, dest="trials")
        p.add_argument("--train-fraction", type=float, dest="train_fraction")
        p.add_argument("--fractions", dest="fractions")
        p.add_argument("--cv-folds", type=int, dest="cv_folds")
        p.add_argument("--repetitions", type=int, dest="repetitions")
        p.add_argument("--seed", type=int, dest="seed")
        p.add_argument("--threads", type=int, dest="threads")
        p.add_argument("--out", dest="out")
        p.add_argument("--width", type=int, dest="width")
        p.add_argument("--height", type=int, dest="height")
        p.add_argument("--m-variant", choices=("full", "stall"), dest="m_variant")
        p.add_argument("--model", dest="model")
        p.add_argument("--reports", dest="reports")
        p.add_argument("--labels", dest="labels")
        p.add_argument("--alpha", type=float, dest="alpha")

    for name in COMMANDS:
        add_common(sub.add_parser(name))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    flag_values = {
        key: value for key, value in vars(args).items()
        if key not in ("command", "config")
    }
    try:
        cfg = RunConfig.resolve(args.config, flag_values)
        return COMMANDS[args.command](cfg)
    except StreamQoEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
