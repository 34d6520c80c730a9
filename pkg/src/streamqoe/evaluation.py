"""Correlation statistics, split generation and the evaluation protocols.

Experiment 1 tests content independence with repeated random content
splits; experiment 2 holds each playout pattern out in turn; cross-dataset
evaluation trains on one dataset and tests on another. Rank correlation is
reported directly, linear correlation after a monotone logistic mapping.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .errors import DegenerateSplitError, FeatureSubsetError, StreamQoEError
from .features import FEATURE_NAMES, Dataset, QoESample, normalize_subset, standardize_apply, standardize_fit
from .regress import (
    DEFAULT_GRIDS,
    STOCHASTIC_KINDS,
    _derive_seed,
    expand_grid,
    feature_importances,
    fit_model,
    grid_search_cv,
    model_digest,
    predict,
)

# the canonical feature-subset numbering used in ablation reports
SUBSET_IDS = {
    ("vqa",): 1,
    ("m",): 2,
    ("i",): 3,
    ("r1", "r2"): 4,
    ("vqa", "m"): 5,
    ("vqa", "i"): 6,
    ("vqa", "r2", "m"): 7,
    ("r1", "r2", "m"): 8,
    ("r1", "r2", "m", "i"): 9,
    ("vqa", "r1", "r2", "i"): 10,
    ("vqa", "r1", "r2", "m"): 11,
    ("vqa", "r1", "r2", "m", "i"): 12,
}


def average_ranks(x) -> np.ndarray:
    """Ranks starting at 1; tied values share the average of their ranks."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(n)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size != b.size:
        raise ValueError("vectors must have equal length")
    da = a - a.mean()
    db = b - b.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        return float("nan")
    return float(da @ db) / denom


def srocc(a, b) -> float:
    """Spearman rank correlation: Pearson correlation of average ranks.
    NaN when either input is constant (undefined, excluded from medians)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size != b.size or a.size < 3:
        raise ValueError("need two equal-length vectors with >= 3 entries")
    if np.ptp(a) == 0.0 or np.ptp(b) == 0.0:
        return float("nan")
    return pearson(average_ranks(a), average_ranks(b))


def _logistic(beta, x):
    b1, b2, b3, b4 = beta
    z = np.clip(-(x - b3) / abs(b4), -500.0, 500.0)
    return b2 + (b1 - b2) / (1.0 + np.exp(z))


def fit_logistic(pred, mos, seed: int = 0, max_iter: int = 2000) -> np.ndarray:
    """Fit the monotone 4-parameter logistic minimizing SSE with a simplex
    search from three starts: an orientation-aware default, a near-affine
    start matching the least-squares line, and a seeded perturbation."""
    pred = np.asarray(pred, dtype=np.float64)
    mos = np.asarray(mos, dtype=np.float64)
    spread = float(pred.std())
    base = np.array(
        [mos.max(), mos.min(), float(np.median(pred)), max(spread / 4.0, 1e-6)]
    )
    if pearson(pred, mos) < 0:
        base[[0, 1]] = base[[1, 0]]

    slope, intercept = np.polyfit(pred, mos, 1)
    width = 100.0 * (spread + 1e-12)
    center = float(pred.mean())
    mid = intercept + slope * center
    affine = np.array([mid + 2.0 * slope * width, mid - 2.0 * slope * width, center, width])

    rng = np.random.default_rng(seed)
    jitter = base * (1.0 + 0.1 * rng.standard_normal(4))
    jitter[3] = abs(jitter[3]) + 1e-9

    def sse(beta):
        r = _logistic(beta, pred) - mos
        return float(r @ r)

    best = None
    best_sse = np.inf
    for start in (base, affine, jitter):
        res = minimize(
            sse, start, method="Nelder-Mead",
            options={"maxiter": max_iter, "xatol": 1e-7, "fatol": 1e-9},
        )
        cand, cand_sse = res.x, float(res.fun)
        if sse(start) < cand_sse:  # keep the raw start if the polish regressed
            cand, cand_sse = start, sse(start)
        if cand_sse < best_sse:
            best_sse = cand_sse
            best = cand
    return np.asarray(best)


def lcc_after_logistic(pred, mos, seed: int = 0) -> float:
    """Pearson correlation after mapping predictions through the fitted
    logistic. NaN for constant predictions."""
    pred = np.asarray(pred, dtype=np.float64)
    mos = np.asarray(mos, dtype=np.float64)
    if pred.size != mos.size or pred.size < 5:
        raise ValueError("need two equal-length vectors with >= 5 entries")
    if np.ptp(pred) == 0.0:
        return float("nan")
    beta = fit_logistic(pred, mos, seed=seed)
    return pearson(_logistic(beta, pred), mos)


# --- splits -------------------------------------------------------------------


@dataclass(frozen=True)
class SplitMatrix:
    trials: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...]
    seed: int
    train_fraction: float


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def gen_content_splits(
    contents, train_fraction: float, n_trials: int, seed: int
) -> SplitMatrix:
    """Seeded random train/test splits of the content ids. Train count is the
    nearest integer to fraction * n, with at least one content per side."""
    contents = sorted(contents)
    n = len(contents)
    if not 0.0 < train_fraction < 1.0:
        raise DegenerateSplitError("train_fraction must lie strictly in (0, 1)")
    if n < 2:
        raise DegenerateSplitError("need at least 2 contents to split")
    n_train = min(n - 1, max(1, _round_half_up(train_fraction * n)))
    trials = []
    for t in range(n_trials):
        rng = np.random.default_rng(np.random.SeedSequence([seed, t]))
        perm = rng.permutation(n)
        train = tuple(sorted(contents[k] for k in perm[:n_train]))
        test = tuple(sorted(contents[k] for k in perm[n_train:]))
        trials.append((train, test))
    return SplitMatrix(trials=tuple(trials), seed=seed, train_fraction=train_fraction)


# --- experiment harness --------------------------------------------------------


@dataclass
class EvalConfig:
    regressor: str = "ridge"  # one of the trainable kinds, or "br"
    feature_subset: tuple[str, ...] = FEATURE_NAMES
    grid: dict | None = None
    cv_folds: int = 10
    cv_metric: str = "mse"
    seed: int = 0
    n_jobs: int = 1
    record_model_digest: bool = False
    record_importances: bool = False
    compute_lcc: bool = True  # the logistic fit dominates small-trial runtime

    def __post_init__(self):
        self.feature_subset = normalize_subset(self.feature_subset)

    def resolved_grid(self) -> dict | None:
        if self.regressor == "br":
            return None
        return self.grid if self.grid is not None else DEFAULT_GRIDS[self.regressor]

    def echo(self, **extra) -> dict:
        # thread count deliberately left out: it must not affect the report
        out = {
            "regressor": self.regressor,
            "feature_subset": list(self.feature_subset),
            "subset_id": SUBSET_IDS.get(self.feature_subset),
            "grid": self.resolved_grid(),
            "cv_folds": self.cv_folds,
            "cv_metric": self.cv_metric,
            "seed": self.seed,
        }
        out.update(extra)
        return out


@dataclass
class TrialRecord:
    index: int
    srocc: float
    lcc: float
    failed: bool = False
    error: str | None = None
    model_digest: str | None = None
    importances: list[float] | None = None


@dataclass
class EvalReport:
    experiment: str
    config: dict
    trials: list[TrialRecord]
    median_srocc: float
    median_lcc: float
    n_failed: int
    extras: dict = field(default_factory=dict)

    @property
    def n_trials(self) -> int:
        return len(self.trials)

    def srocc_values(self) -> np.ndarray:
        return np.array([t.srocc for t in self.trials])

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "config": self.config,
            "n_trials": self.n_trials,
            "n_failed": self.n_failed,
            "median_srocc": self.median_srocc,
            "median_lcc": self.median_lcc,
            "trials": [
                {
                    "index": t.index,
                    "srocc": t.srocc,
                    "lcc": t.lcc,
                    "failed": t.failed,
                    "error": t.error,
                    "model_digest": t.model_digest,
                    "importances": t.importances,
                }
                for t in self.trials
            ],
            "extras": self.extras,
        }


def _nan_median(values) -> float:
    arr = np.asarray(values, dtype=np.float64)
    finite = arr[np.isfinite(arr)]
    return float(np.median(finite)) if finite.size else float("nan")


def _safe_srocc(pred, mos) -> float:
    # undersized test sets are degenerate trials, not hard failures
    return srocc(pred, mos) if len(pred) >= 3 else float("nan")


def _safe_lcc(pred, mos, seed, enabled: bool = True) -> float:
    if not enabled:
        return float("nan")
    if len(pred) < 5 or np.ptp(np.asarray(pred, dtype=np.float64)) == 0.0:
        return float("nan")
    return lcc_after_logistic(pred, mos, seed=seed)


def br_prediction(samples: list[QoESample], higher_is_better: bool) -> np.ndarray:
    """Before-regression pathway: the pooled quality feature itself, sign
    flipped for distortion metrics so higher always means better."""
    vqa = np.array([s.features.vqa for s in samples])
    return vqa if higher_is_better else -vqa


def br_correlation(dataset: Dataset) -> dict:
    """Whole-dataset correlation of the pooled metric against MOS."""
    preds = br_prediction(dataset.samples, dataset.vqa_higher_is_better)
    mos = np.array([s.mos for s in dataset.samples])
    return {"srocc": srocc(preds, mos), "lcc": lcc_after_logistic(preds, mos)}


def _fit_and_predict(dataset, train_samples, test_samples, cfg, trial_seed):
    """Shared per-trial core: CV on the training rows, fit, predict test."""
    subset = cfg.feature_subset
    X_tr, y_tr = dataset.feature_matrix(subset, train_samples)
    X_te, _ = dataset.feature_matrix(subset, test_samples)
    if cfg.regressor == "br":
        if "vqa" not in subset:
            raise FeatureSubsetError("the before-regression pathway needs vqa")
        preds = br_prediction(test_samples, dataset.vqa_higher_is_better)
        return preds, None
    grid = cfg.resolved_grid()
    combos = expand_grid(grid)
    if len(combos) == 1:
        hp = combos[0]
    else:
        # desk-scale training sets can undercut the configured fold count
        k = min(cfg.cv_folds, len(y_tr))
        hp = grid_search_cv(
            X_tr, y_tr, cfg.regressor, grid,
            k=k, seed=_derive_seed(trial_seed, 1), select=cfg.cv_metric,
        )
    std = standardize_fit(X_tr)
    model = fit_model(
        cfg.regressor,
        standardize_apply(std, X_tr),
        y_tr,
        hp,
        seed=_derive_seed(trial_seed, 2),
        standardizer=std,
        feature_mask=subset,
    )
    return predict(model, X_te), model


def _run_trial(dataset, cfg, index, train_ids, test_ids) -> TrialRecord:
    trial_seed = _derive_seed(cfg.seed, index)
    train_samples = dataset.subset_by_content(train_ids)
    test_samples = dataset.subset_by_content(test_ids)
    try:
        preds, model = _fit_and_predict(dataset, train_samples, test_samples, cfg, trial_seed)
        y_te = np.array([s.mos for s in test_samples])
        rec = TrialRecord(
            index=index,
            srocc=_safe_srocc(preds, y_te),
            lcc=_safe_lcc(preds, y_te, seed=_derive_seed(trial_seed, 3), enabled=cfg.compute_lcc),
        )
        if model is not None and cfg.record_model_digest:
            rec.model_digest = model_digest(model)
        if model is not None and cfg.record_importances and model.kind in ("rf", "et", "gb"):
            rec.importances = feature_importances(model).tolist()
        return rec
    except (StreamQoEError, ValueError, np.linalg.LinAlgError) as exc:
        return TrialRecord(
            index=index, srocc=float("nan"), lcc=float("nan"),
            failed=True, error=str(exc),
        )


def _parallel_map(fn, items, n_jobs):
    if n_jobs == 1:
        return [fn(*args) for args in items]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs)(delayed(fn)(*args) for args in items)


def run_experiment1(dataset: Dataset, splits: SplitMatrix, cfg: EvalConfig) -> EvalReport:
    """Repeated random content splits: per trial, grid search on the training
    contents, train, predict the held-out contents, record correlations."""
    if len(dataset.contents()) < 2:
        raise DegenerateSplitError("experiment 1 needs at least 2 contents")
    items = [
        (dataset, cfg, idx, train_ids, test_ids)
        for idx, (train_ids, test_ids) in enumerate(splits.trials)
    ]
    trials = _parallel_map(_run_trial, items, cfg.n_jobs)
    trials.sort(key=lambda t: t.index)
    extras = {
        "train_fraction": splits.train_fraction,
        "split_seed": splits.seed,
        "n_contents": len(dataset.contents()),
    }
    if cfg.record_importances:
        vecs = [t.importances for t in trials if t.importances is not None]
        if vecs:
            extras["median_importances"] = np.median(np.array(vecs), axis=0).tolist()
    return EvalReport(
        experiment="1",
        config=cfg.echo(dataset=dataset.name),
        trials=trials,
        median_srocc=_nan_median([t.srocc for t in trials]),
        median_lcc=_nan_median([t.lcc for t in trials]),
        n_failed=sum(t.failed for t in trials),
        extras=extras,
    )


def run_experiment2(dataset: Dataset, cfg: EvalConfig) -> EvalReport:
    """Leave-one-pattern-out: each fold trains on every other pattern (all
    contents) and tests on all sessions of the held-out pattern. Correlations
    are reported per fold and pooled across folds."""
    patterns = dataset.patterns()
    if len(patterns) < 2:
        raise DegenerateSplitError("experiment 2 needs at least 2 patterns")
    by_pattern = {p: [s for s in dataset.samples if s.pattern_id == p] for p in patterns}
    for p, rows in by_pattern.items():
        if not rows:
            raise DegenerateSplitError(f"pattern {p} has no samples")

    trials = []
    pooled_pred: list[float] = []
    pooled_mos: list[float] = []
    fold_sizes = {}
    for index, held in enumerate(patterns):
        test_samples = by_pattern[held]
        train_samples = [s for s in dataset.samples if s.pattern_id != held]
        fold_sizes[held] = len(test_samples)
        trial_seed = _derive_seed(cfg.seed, index)
        try:
            preds, model = _fit_and_predict(
                dataset, train_samples, test_samples, cfg, trial_seed
            )
            y_te = np.array([s.mos for s in test_samples])
            pooled_pred.extend(preds.tolist())
            pooled_mos.extend(y_te.tolist())
            rec = TrialRecord(
                index=index,
                srocc=_safe_srocc(preds, y_te),
                lcc=_safe_lcc(preds, y_te, seed=_derive_seed(trial_seed, 3), enabled=cfg.compute_lcc),
            )
            if model is not None and cfg.record_model_digest:
                rec.model_digest = model_digest(model)
            trials.append(rec)
        except (StreamQoEError, ValueError, np.linalg.LinAlgError) as exc:
            trials.append(
                TrialRecord(
                    index=index, srocc=float("nan"), lcc=float("nan"),
                    failed=True, error=str(exc),
                )
            )
    extras = {
        "folds": patterns,
        "fold_test_counts": fold_sizes,
        "pooled_count": len(pooled_pred),
        "pooled_srocc": _safe_srocc(pooled_pred, pooled_mos),
        "pooled_lcc": _safe_lcc(pooled_pred, pooled_mos, seed=_derive_seed(cfg.seed, 10),
                                enabled=cfg.compute_lcc),
    }
    return EvalReport(
        experiment="2",
        config=cfg.echo(dataset=dataset.name),
        trials=trials,
        median_srocc=_nan_median([t.srocc for t in trials]),
        median_lcc=_nan_median([t.lcc for t in trials]),
        n_failed=sum(t.failed for t in trials),
        extras=extras,
    )


def run_cross_dataset(
    train_ds: Dataset,
    test_ds: Dataset,
    cfg: EvalConfig,
    repetitions: int | None = None,
) -> EvalReport:
    """Train on one dataset, test on the other. Hyperparameters come from CV
    on the full training set; stochastic regressors are refit over several
    repetitions (default 50) and medians reported."""
    subset = cfg.feature_subset
    if "m" in subset and train_ds.m_variant != test_ds.m_variant:
        raise FeatureSubsetError(
            f"memory-feature variants differ: train={train_ds.m_variant!r} "
            f"test={test_ds.m_variant!r}"
        )
    if repetitions is None:
        repetitions = 50 if cfg.regressor in STOCHASTIC_KINDS else 1
    X_tr, y_tr = train_ds.feature_matrix(subset)
    X_te, y_te = test_ds.feature_matrix(subset)

    if cfg.regressor == "br":
        preds = br_prediction(test_ds.samples, test_ds.vqa_higher_is_better)
        rec = TrialRecord(
            index=0, srocc=_safe_srocc(preds, y_te),
            lcc=_safe_lcc(preds, y_te, seed=cfg.seed, enabled=cfg.compute_lcc),
        )
        trials = [rec]
        hp = None
    else:
        grid = cfg.resolved_grid()
        combos = expand_grid(grid)
        if len(combos) == 1:
            hp = combos[0]
        else:
            hp = grid_search_cv(
                X_tr, y_tr, cfg.regressor, grid,
                k=cfg.cv_folds, seed=_derive_seed(cfg.seed, 1), select=cfg.cv_metric,
            )
        trials = []
        for rep in range(repetitions):
            std = standardize_fit(X_tr)
            model = fit_model(
                cfg.regressor,
                standardize_apply(std, X_tr),
                y_tr,
                hp,
                seed=_derive_seed(cfg.seed, 2, rep),
                standardizer=std,
                feature_mask=subset,
            )
            preds = predict(model, X_te)
            rec = TrialRecord(
                index=rep,
                srocc=_safe_srocc(preds, y_te),
                lcc=_safe_lcc(preds, y_te, seed=_derive_seed(cfg.seed, 3, rep), enabled=cfg.compute_lcc),
            )
            if cfg.record_model_digest:
                rec.model_digest = model_digest(model)
            trials.append(rec)
    return EvalReport(
        experiment="cross",
        config=cfg.echo(train_dataset=train_ds.name, test_dataset=test_ds.name),
        trials=trials,
        median_srocc=_nan_median([t.srocc for t in trials]),
        median_lcc=_nan_median([t.lcc for t in trials]),
        n_failed=sum(t.failed for t in trials),
        extras={"repetitions": repetitions, "selected_hyperparams": hp},
    )


# --- significance ---------------------------------------------------------------


def ranksum_z(a, b) -> tuple[float, float]:
    """Two-sided Wilcoxon rank-sum via the normal approximation with tie
    correction. Returns (z, p); z > 0 when sample a ranks higher."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n1, n2 = a.size, b.size
    combined = np.concatenate([a, b])
    n = n1 + n2
    ranks = average_ranks(combined)
    r1 = float(ranks[:n1].sum())
    mu = n1 * (n + 1) / 2.0
    _, counts = np.unique(combined, return_counts=True)
    tie_term = float(((counts**3 - counts)).sum()) / (n * (n - 1)) if n > 1 else 0.0
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return 0.0, 1.0
    z = (r1 - mu) / math.sqrt(var)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return z, p


@dataclass
class SignificanceMatrix:
    labels: list[str]
    verdicts: list[list[str]]  # '1' row better, '0' row worse, '-' indistinguishable
    pvalues: list[list[float]]
    alpha: float

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "labels": self.labels,
            "verdicts": self.verdicts,
            "pvalues": self.pvalues,
        }


def ranksum_significance(trial_sroccs: dict[str, object], alpha: float = 0.01) -> SignificanceMatrix:
    """Pairwise rank-sum verdicts over per-trial correlation distributions."""
    labels = list(trial_sroccs)
    vectors = {}
    length = None
    for label in labels:
        v = np.asarray(trial_sroccs[label], dtype=np.float64)
        v = v[np.isfinite(v)]
        if v.size < 10:
            raise ValueError(f"{label}: need at least 10 finite trials")
        if length is not None and v.size != length:
            raise ValueError("trial vectors must have equal length")
        length = v.size
        vectors[label] = v
    verdicts = [["-"] * len(labels) for _ in labels]
    pvalues = [[1.0] * len(labels) for _ in labels]
    for i, row in enumerate(labels):
        for j, col in enumerate(labels):
            if i == j:
                continue
            z, p = ranksum_z(vectors[row], vectors[col])
            pvalues[i][j] = p
            if p < alpha:
                verdicts[i][j] = "1" if z > 0 else "0"
    return SignificanceMatrix(labels=labels, verdicts=verdicts, pvalues=pvalues, alpha=alpha)


# --- sweeps ---------------------------------------------------------------------


def train_fraction_sweep(
    dataset: Dataset,
    fractions,
    seed: int,
    cfg: EvalConfig,
    n_trials: int = 1000,
) -> list[tuple[float, EvalReport]]:
    """Experiment 1 repeated for each train fraction; one report per point."""
    curves = []
    for fi, fraction in enumerate(fractions):
        if not 0.0 < fraction < 1.0:
            raise DegenerateSplitError(f"fraction {fraction} outside (0, 1)")
        splits = gen_content_splits(
            dataset.contents(), fraction, n_trials, _derive_seed(seed, fi)
        )
        curves.append((float(fraction), run_experiment1(dataset, splits, cfg)))
    return curves


# --- report files ----------------------------------------------------------------


def write_report_json(report: EvalReport, path: str | Path) -> None:
    from .cli import atomic_write_text  # lazy: cli owns the atomic-write helper

    atomic_write_text(Path(path), json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def write_report_csv(report: EvalReport, path: str | Path) -> None:
    from .cli import atomic_write_text

    lines = ["trial,srocc,lcc,failed"]
    for t in report.trials:
        lines.append(f"{t.index},{t.srocc!r},{t.lcc!r},{int(t.failed)}")
    atomic_write_text(Path(path), "\n".join(lines) + "\n")
