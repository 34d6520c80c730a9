#!/usr/bin/env python3
"""Run the headline synthetic-benchmark experiments in one go.

Builds a seeded synthetic dataset, scores it with all four native metrics,
and reproduces the qualitative result tables: before-regression vs
regression per metric, feature-subset ablation, pooling comparison,
leave-one-pattern-out, train-fraction sweep and the pairwise significance
matrix. Everything lands under --out as JSON/CSV.
"""

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from streamqoe.evaluation import (
    EvalConfig,
    gen_content_splits,
    ranksum_significance,
    run_experiment1,
    run_experiment2,
    train_fraction_sweep,
)
from streamqoe.pooling import PoolingConfig
from streamqoe.synth import SynthConfig, gen_dataset_multi

METRICS = ("psnr", "ssim", "msssim", "gmsd")
REGRESSORS = ("ridge", "lasso", "svr", "et", "rf", "gb")
SUBSETS = {
    "1:vqa": ("vqa",),
    "2:m": ("m",),
    "3:i": ("i",),
    "4:r1+r2": ("r1", "r2"),
    "5:vqa+m": ("vqa", "m"),
    "6:vqa+i": ("vqa", "i"),
    "12:all": ("vqa", "r1", "r2", "m", "i"),
}

# small single-point grids keep the full crossing tractable on a laptop
FAST_GRIDS = {
    "ridge": None,  # default CV grid, closed form is cheap
    "lasso": None,
    "svr": {"C": [10.0], "gamma": [0.5], "epsilon": [0.1]},
    "et": {"trees": [50], "max_features": ["all"], "min_leaf": [1]},
    "rf": {"trees": [50], "max_features": ["all"], "min_leaf": [1]},
    "gb": {"estimators": [50], "learning_rate": [0.1], "max_depth": [2]},
}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="out/trends")
    parser.add_argument("--seed", type=int, default=20250810)
    parser.add_argument("--trials", type=int, default=200)
    parser.add_argument("--threads", type=int, default=2)
    parser.add_argument("--quick", action="store_true",
                        help="64x64 frames and fewer trials (psnr/ssim/gmsd only)")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.quick:
        metrics = ("psnr", "ssim", "gmsd")
        cfg = SynthConfig(n_contents=8, n_patterns=4, width=64, height=64,
                          frames_range=(30, 50), mos_noise_sigma=3.0, seed=args.seed)
        trials = min(args.trials, 50)
    else:
        metrics = METRICS
        cfg = SynthConfig(n_contents=10, n_patterns=6, width=176, height=176,
                          frames_range=(40, 60), mos_noise_sigma=3.0, seed=args.seed)
        trials = args.trials

    t0 = time.time()
    print(f"building synthetic dataset ({cfg.n_contents}x{cfg.n_patterns}, "
          f"{cfg.width}x{cfg.height}) ...", flush=True)
    datasets = gen_dataset_multi(cfg, metrics, PoolingConfig())
    print(f"  done in {time.time() - t0:.0f}s", flush=True)

    contents = datasets[metrics[0]].contents()
    splits = gen_content_splits(contents, 0.8, trials, seed=args.seed)

    def run(ds, regressor, subset=("vqa", "r1", "r2", "m", "i"), **kw):
        cfgr = EvalConfig(
            regressor=regressor, feature_subset=subset,
            grid=FAST_GRIDS.get(regressor), seed=args.seed,
            n_jobs=args.threads, compute_lcc=False, **kw,
        )
        return run_experiment1(ds, splits, cfgr)

    # Table: BR vs regressors, per metric
    table = {}
    sig_input = {}
    for metric in metrics:
        ds = datasets[metric]
        row = {"br": run(ds, "br", subset=("vqa",)).median_srocc}
        for regressor in REGRESSORS:
            report = run(ds, regressor)
            row[regressor] = report.median_srocc
            if metric == metrics[1 % len(metrics)]:
                sig_input[regressor] = [t.srocc for t in report.trials]
        table[metric] = row
        print(f"{metric:8s} " + "  ".join(f"{k}={v:.3f}" for k, v in row.items()),
              flush=True)
    (out / "regression_vs_br.json").write_text(json.dumps(table, indent=2) + "\n")

    # feature-subset ablation on the second metric
    ablation = {}
    ds = datasets[metrics[1 % len(metrics)]]
    for label, subset in SUBSETS.items():
        ablation[label] = run(ds, "et", subset=subset).median_srocc
    (out / "subset_ablation.json").write_text(json.dumps(ablation, indent=2) + "\n")
    print("subset ablation:", {k: round(v, 3) for k, v in ablation.items()}, flush=True)

    # pooling comparison on one metric (mean vs hysteresis vs vq)
    pooling_rows = {}
    for method in ("mean", "hysteresis", "vq"):
        dsp = gen_dataset_multi(cfg, (metrics[1 % len(metrics)],),
                                PoolingConfig(method=method))[metrics[1 % len(metrics)]]
        pooling_rows[method] = run(dsp, "et").median_srocc
    (out / "pooling_comparison.json").write_text(json.dumps(pooling_rows, indent=2) + "\n")
    print("pooling comparison:", {k: round(v, 3) for k, v in pooling_rows.items()}, flush=True)

    # leave-one-pattern-out
    exp2 = run_experiment2(
        datasets[metrics[1 % len(metrics)]],
        EvalConfig(regressor="ridge", seed=args.seed, compute_lcc=False),
    )
    (out / "leave_one_pattern_out.json").write_text(
        json.dumps(exp2.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    print(f"leave-one-pattern-out pooled SROCC: {exp2.extras['pooled_srocc']:.3f}",
          flush=True)

    # train-fraction sweep (noise-free linear oracle)
    lin_cfg = dataclasses.replace(
        cfg, mos_noise_sigma=0.0,
        mos_coeffs=(40.0, 18.0, 4.0, 12.0, 8.0, 0.0), mos_scale=(-100.0, 200.0),
    )
    from streamqoe.synth import with_oracle_mos

    lin_ds = with_oracle_mos(datasets[metrics[0]], lin_cfg)
    curves = train_fraction_sweep(
        lin_ds, [0.2, 0.4, 0.6, 0.8], seed=args.seed,
        cfg=EvalConfig(regressor="ridge", seed=args.seed, n_jobs=args.threads,
                       compute_lcc=False),
        n_trials=trials,
    )
    lines = ["# fraction median_srocc"]
    for fraction, report in curves:
        lines.append(f"{fraction} {report.median_srocc!r}")
    (out / "sweep.dat").write_text("\n".join(lines) + "\n")
    print("sweep medians:", [round(r.median_srocc, 3) for _, r in curves], flush=True)

    # significance across regressors on the per-trial distributions
    matrix = ranksum_significance(sig_input, alpha=0.01)
    (out / "significance.json").write_text(
        json.dumps(matrix.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    print(f"wrote results to {out} ({time.time() - t0:.0f}s total)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
