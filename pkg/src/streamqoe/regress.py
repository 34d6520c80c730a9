"""From-scratch regression engines, CV grid search and model persistence.

All trainers expect feature matrices that were standardized upstream; the
fitted standardizer travels with the model so prediction on raw features is
self-contained. Every trainer is deterministic under a fixed seed.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConvergenceError,
    ModelFormatError,
    NumericError,
    UnsupportedModelError,
)
from .features import Standardizer, standardize_apply, standardize_fit

MODEL_FORMAT_VERSION = 1

REGRESSOR_KINDS = ("ridge", "lasso", "svr", "rf", "et", "gb")
TREE_KINDS = ("rf", "et", "gb")
STOCHASTIC_KINDS = ("rf", "et")

DEFAULT_GRIDS = {
    "ridge": {"lam": [1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3]},
    "lasso": {"lam": [1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3]},
    "svr": {"C": [1.0, 10.0, 100.0], "gamma": [0.01, 0.1, 1.0], "epsilon": [0.1, 1.0]},
    "rf": {"trees": [100, 500], "max_features": ["all", "sqrt"], "min_leaf": [1, 3]},
    "et": {"trees": [100, 500], "max_features": ["all", "sqrt"], "min_leaf": [1, 3]},
    "gb": {"estimators": [100, 300], "learning_rate": [0.05, 0.1], "max_depth": [2, 3]},
}


@dataclass
class TrainedModel:
    kind: str
    hyperparams: dict
    state: dict
    standardizer: Standardizer
    feature_mask: tuple[str, ...]
    seed: int = 0


def _identity_standardizer(n_features: int) -> Standardizer:
    return Standardizer(mean=np.zeros(n_features), scale=np.ones(n_features))


def _check_xy(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise ValueError("y must be 1-D with one entry per row of X")
    if X.shape[0] < 2:
        raise ValueError("need at least 2 training rows")
    return X, y


def _finish(kind, hyperparams, state, X, standardizer, feature_mask, seed) -> TrainedModel:
    d = X.shape[1]
    if standardizer is None:
        standardizer = _identity_standardizer(d)
    if feature_mask is None:
        feature_mask = tuple(f"x{j}" for j in range(d))
    return TrainedModel(
        kind=kind,
        hyperparams=dict(hyperparams),
        state=state,
        standardizer=standardizer,
        feature_mask=tuple(feature_mask),
        seed=seed,
    )


def _derive_seed(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


# --- linear models ----------------------------------------------------------


def train_ridge(X, y, lam: float, standardizer=None, feature_mask=None) -> TrainedModel:
    """Least squares with an L2 penalty on the weights (intercept free),
    solved in closed form from the normal equations of the centered system."""
    X, y = _check_xy(X, y)
    if lam < 0:
        raise ValueError("lam must be >= 0")
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    yc = y - y_mean
    A = Xc.T @ Xc + lam * np.eye(X.shape[1])
    try:
        w = np.linalg.solve(A, Xc.T @ yc)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"normal equations singular (lam={lam})") from exc
    b = float(y_mean - x_mean @ w)
    state = {"w": w, "b": b}
    return _finish("ridge", {"lam": lam}, state, X, standardizer, feature_mask, 0)


def lasso_objective(X, y, w, b, lam: float) -> float:
    r = y - X @ w - b
    return float(0.5 * (r @ r) / X.shape[0] + lam * np.abs(w).sum())


def lasso_coordinate_descent(
    X, y, lam: float, max_sweeps: int = 10000, tol: float = 1e-6
) -> tuple[np.ndarray, float, list[float]]:
    """Cyclic coordinate descent with soft thresholding on the objective
    (1/2n)||y - Xw - b||^2 + lam * ||w||_1. Returns (w, b, objective history);
    one history entry per completed sweep."""
    X, y = _check_xy(X, y)
    n, d = X.shape
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    yc = y - y_mean
    col_sq = (Xc**2).sum(axis=0) / n
    w = np.zeros(d)
    resid = yc.copy()
    history: list[float] = []
    for _ in range(max_sweeps):
        max_delta = 0.0
        for j in range(d):
            if col_sq[j] == 0.0:
                continue
            old = w[j]
            rho = (Xc[:, j] @ resid) / n + col_sq[j] * old
            new = math.copysign(max(abs(rho) - lam, 0.0), rho) / col_sq[j]
            if new != old:
                resid -= (new - old) * Xc[:, j]
                w[j] = new
                max_delta = max(max_delta, abs(new - old))
        b = float(y_mean - x_mean @ w)
        history.append(lasso_objective(X, y, w, b, lam))
        if max_delta < tol:
            return w, b, history
    raise ConvergenceError(
        f"lasso did not converge within {max_sweeps} sweeps (lam={lam})"
    )


def train_lasso(X, y, lam: float, standardizer=None, feature_mask=None) -> TrainedModel:
    if lam < 0:
        raise ValueError("lam must be >= 0")
    w, b, _ = lasso_coordinate_descent(X, y, lam)
    state = {"w": w, "b": b}
    return _finish("lasso", {"lam": lam}, state, np.asarray(X, float), standardizer, feature_mask, 0)


# --- support vector regression ----------------------------------------------


def rbf_kernel(A, B, gamma: float) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    sq = (
        (A**2).sum(axis=1)[:, None]
        + (B**2).sum(axis=1)[None, :]
        - 2.0 * (A @ B.T)
    )
    return np.exp(-gamma * np.maximum(sq, 0.0))


def svr_dual_objective(K, y, beta, epsilon: float) -> float:
    """Dual objective (to minimize): 1/2 b'Kb + eps*||b||_1 - y'b."""
    beta = np.asarray(beta, dtype=np.float64)
    return float(0.5 * beta @ (K @ beta) + epsilon * np.abs(beta).sum() - y @ beta)


def _bias_bounds(F, beta, C, epsilon, atol):
    # feasible interval for the bias from the optimality case table
    upper = np.where(beta > atol, F - epsilon, np.where(beta > -C + atol, F + epsilon, np.inf))
    lower = np.where(beta < -atol, F + epsilon, np.where(beta < C - atol, F - epsilon, -np.inf))
    return lower, upper


def train_svr(
    X,
    y,
    C: float,
    gamma: float,
    epsilon: float,
    tol: float = 1e-3,
    max_iter: int = 100000,
    standardizer=None,
    feature_mask=None,
) -> TrainedModel:
    """Epsilon-insensitive SVR with an RBF kernel, trained by sequential
    exact optimization of the maximally violating coefficient pair."""
    X, y = _check_xy(X, y)
    if C <= 0 or gamma <= 0 or epsilon < 0:
        raise ValueError("need C > 0, gamma > 0, epsilon >= 0")
    n = X.shape[0]
    K = rbf_kernel(X, X, gamma)
    beta = np.zeros(n)
    u = np.zeros(n)  # K @ beta, maintained incrementally
    atol = 1e-12 * max(1.0, C)

    for _ in range(max_iter):
        F = y - u
        lower, upper = _bias_bounds(F, beta, C, epsilon, atol)
        i = int(np.argmax(lower))
        j = int(np.argmin(upper))
        if lower[i] - upper[j] <= tol:
            break

        a, bb = beta[i], beta[j]
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        c0 = (u[i] - y[i]) - (u[j] - y[j])
        t_lo = max(-C - a, bb - C)
        t_hi = min(C - a, bb + C)

        def phi(t):
            return (
                0.5 * eta * t * t
                + c0 * t
                + epsilon * (abs(a + t) + abs(bb - t))
            )

        candidates = {t_lo, t_hi}
        for brk in (-a, bb):
            if t_lo < brk < t_hi:
                candidates.add(brk)
        if eta > 1e-14:
            pieces = sorted(candidates)
            for lo, hi in zip(pieces[:-1], pieces[1:]):
                mid = 0.5 * (lo + hi)
                s1 = epsilon * (1.0 if a + mid >= 0 else -1.0)
                s2 = epsilon * (-1.0 if bb - mid >= 0 else 1.0)
                t_star = -(c0 + s1 + s2) / eta
                candidates.add(min(max(t_star, lo), hi))
        t_best = min(candidates, key=lambda t: (phi(t), t))
        if phi(0.0) - phi(t_best) <= 0.0 or t_best == 0.0:
            raise ConvergenceError(
                "pair optimization stalled before reaching the KKT tolerance"
            )
        beta[i] = a + t_best
        beta[j] = bb - t_best
        u += (beta[i] - a) * K[:, i] + (beta[j] - bb) * K[:, j]
    else:
        raise ConvergenceError(f"SVR did not converge within {max_iter} pair updates")

    F = y - u
    lower, upper = _bias_bounds(F, beta, C, epsilon, atol)
    b_low = float(lower.max())
    b_up = float(upper.min())
    if math.isfinite(b_low) and math.isfinite(b_up):
        bias = 0.5 * (b_low + b_up)
    elif math.isfinite(b_low):
        bias = b_low
    elif math.isfinite(b_up):
        bias = b_up
    else:
        bias = float(F.mean())

    support = np.abs(beta) > atol
    state = {
        "support_X": X[support],
        "coef": beta[support],
        "bias": bias,
        "gamma": gamma,
        "dual_objective": svr_dual_objective(K, y, beta, epsilon),
        "n_support": int(support.sum()),
    }
    hp = {"C": C, "gamma": gamma, "epsilon": epsilon}
    return _finish("svr", hp, state, X, standardizer, feature_mask, 0)


# --- tree ensembles ----------------------------------------------------------


def _resolve_max_features(max_features, d: int) -> int:
    if max_features in (None, "all"):
        return d
    if max_features == "sqrt":
        return min(d, math.ceil(math.sqrt(d)))
    k = int(max_features)
    if k < 1:
        raise ValueError("max_features must be >= 1")
    return min(d, k)


def _best_split_scan(xcol, y_node, min_leaf):
    """Best variance-reduction split of one feature via a sorted prefix scan.
    Returns (reduction, threshold) or None."""
    order = np.argsort(xcol, kind="mergesort")
    xs = xcol[order]
    ys = y_node[order]
    n = xs.size
    csum = np.cumsum(ys)
    csq = np.cumsum(ys**2)
    total, total_sq = csum[-1], csq[-1]
    idx = np.arange(1, n)  # split after position idx-1 -> left size idx
    valid = (xs[1:] != xs[:-1]) & (idx >= min_leaf) & (n - idx >= min_leaf)
    if not valid.any():
        return None
    left_n = idx[valid]
    left_sum = csum[:-1][valid]
    left_sq = csq[:-1][valid]
    right_n = n - left_n
    sse = (
        left_sq
        - left_sum**2 / left_n
        + (total_sq - left_sq)
        - (total - left_sum) ** 2 / right_n
    )
    parent_sse = total_sq - total**2 / n
    k = int(np.argmin(sse))
    reduction = float(parent_sse - sse[k])
    pos = left_n[k]
    threshold = float(0.5 * (xs[pos - 1] + xs[pos]))
    return reduction, threshold


def _random_split(xcol, y_node, rng, min_leaf):
    lo, hi = float(xcol.min()), float(xcol.max())
    if lo == hi:
        return None
    threshold = float(rng.uniform(lo, hi))
    left = xcol <= threshold
    n_left = int(left.sum())
    if n_left < min_leaf or xcol.size - n_left < min_leaf:
        return None
    total = y_node.sum()
    total_sq = (y_node**2).sum()
    ls = y_node[left].sum()
    lq = (y_node[left] ** 2).sum()
    sse = lq - ls**2 / n_left + (total_sq - lq) - (total - ls) ** 2 / (y_node.size - n_left)
    parent_sse = total_sq - total**2 / y_node.size
    return float(parent_sse - sse), threshold


def _build_tree(
    X, y, rng, k_features, min_leaf, max_depth, random_threshold, importance, depth=0
):
    n, d = X.shape
    if (
        n < 2 * min_leaf
        or (max_depth is not None and depth >= max_depth)
        or np.all(y == y[0])
    ):
        return {"v": float(y.mean())}
    if k_features < d:
        feats = np.sort(rng.choice(d, size=k_features, replace=False))
    else:
        feats = np.arange(d)
    best = None
    for f in feats:
        if random_threshold:
            found = _random_split(X[:, f], y, rng, min_leaf)
        else:
            found = _best_split_scan(X[:, f], y, min_leaf)
        if found is None:
            continue
        reduction, threshold = found
        if best is None or reduction > best[0]:
            best = (reduction, int(f), threshold)
    if best is None or best[0] <= 0.0:
        return {"v": float(y.mean())}
    reduction, f, threshold = best
    importance[f] += reduction
    mask = X[:, f] <= threshold
    return {
        "f": f,
        "t": threshold,
        "l": _build_tree(
            X[mask], y[mask], rng, k_features, min_leaf, max_depth, random_threshold,
            importance, depth + 1,
        ),
        "r": _build_tree(
            X[~mask], y[~mask], rng, k_features, min_leaf, max_depth, random_threshold,
            importance, depth + 1,
        ),
    }


def _tree_predict(node, X) -> np.ndarray:
    out = np.empty(X.shape[0])
    for i, row in enumerate(X):
        cur = node
        while "v" not in cur:
            cur = cur["l"] if row[cur["f"]] <= cur["t"] else cur["r"]
        out[i] = cur["v"]
    return out


def train_forest(
    X, y, params: dict, variant: str, seed: int = 0, standardizer=None, feature_mask=None
) -> TrainedModel:
    """Bagged variance-reduction trees. variant "rf" bootstraps rows and scans
    for the best threshold; variant "et" uses the full rows and one uniformly
    random threshold per candidate feature."""
    X, y = _check_xy(X, y)
    if variant not in ("rf", "et"):
        raise ValueError("variant must be 'rf' or 'et'")
    n_trees = int(params.get("trees", 100))
    min_leaf = int(params.get("min_leaf", 1))
    max_depth = params.get("max_depth")
    bootstrap = bool(params.get("bootstrap", variant == "rf"))
    k_features = _resolve_max_features(params.get("max_features", "all"), X.shape[1])
    if n_trees < 1 or min_leaf < 1:
        raise ValueError("trees and min_leaf must be >= 1")

    root_rng = np.random.default_rng(np.random.SeedSequence(seed))
    tree_seeds = root_rng.integers(0, 2**63 - 1, size=n_trees)
    importance = np.zeros(X.shape[1])
    trees = []
    n = X.shape[0]
    for ts in tree_seeds:
        rng = np.random.default_rng(int(ts))
        if bootstrap:
            rows = rng.integers(0, n, size=n)
            Xb, yb = X[rows], y[rows]
        else:
            Xb, yb = X, y
        trees.append(
            _build_tree(
                Xb, yb, rng, k_features, min_leaf, max_depth,
                random_threshold=(variant == "et"), importance=importance,
            )
        )
    state = {"trees": trees, "importance": importance}
    hp = {
        "trees": n_trees,
        "max_features": params.get("max_features", "all"),
        "min_leaf": min_leaf,
        "max_depth": max_depth,
        "bootstrap": bootstrap,
    }
    return _finish(variant, hp, state, X, standardizer, feature_mask, seed)


def train_gb(
    X, y, params: dict, seed: int = 0, standardizer=None, feature_mask=None
) -> TrainedModel:
    """Stagewise least-squares boosting of deterministic regression trees.

    Ensemble output is clamped to the training target range so predictions
    share the same bounds contract as the bagged forests."""
    X, y = _check_xy(X, y)
    n_estimators = int(params.get("estimators", 100))
    lr = float(params.get("learning_rate", 0.1))
    max_depth = params.get("max_depth", 3)
    min_leaf = int(params.get("min_leaf", 1))
    if n_estimators < 1 or lr <= 0:
        raise ValueError("estimators must be >= 1 and learning_rate > 0")

    base = float(y.mean())
    pred = np.full(y.shape[0], base)
    importance = np.zeros(X.shape[1])
    trees = []
    for _ in range(n_estimators):
        residual = y - pred
        tree = _build_tree(
            X, residual, np.random.default_rng(0), X.shape[1], min_leaf, max_depth,
            random_threshold=False, importance=importance,
        )
        trees.append(tree)
        pred = pred + lr * _tree_predict(tree, X)
    state = {
        "base": base,
        "lr": lr,
        "trees": trees,
        "importance": importance,
        "y_range": [float(y.min()), float(y.max())],
    }
    hp = {
        "estimators": n_estimators,
        "learning_rate": lr,
        "max_depth": max_depth,
        "min_leaf": min_leaf,
    }
    return _finish("gb", hp, state, X, standardizer, feature_mask, seed)


# --- shared surface -----------------------------------------------------------


def fit_model(
    kind: str,
    X,
    y,
    hyperparams: dict,
    seed: int = 0,
    standardizer=None,
    feature_mask=None,
) -> TrainedModel:
    """Dispatch to the kind-specific trainer. X must already be standardized."""
    hp = dict(hyperparams)
    if kind == "ridge":
        return train_ridge(X, y, hp["lam"], standardizer, feature_mask)
    if kind == "lasso":
        return train_lasso(X, y, hp["lam"], standardizer, feature_mask)
    if kind == "svr":
        return train_svr(
            X, y, hp["C"], hp["gamma"], hp["epsilon"],
            standardizer=standardizer, feature_mask=feature_mask,
        )
    if kind in ("rf", "et"):
        return train_forest(X, y, hp, kind, seed, standardizer, feature_mask)
    if kind == "gb":
        return train_gb(X, y, hp, seed, standardizer, feature_mask)
    raise ValueError(f"unknown regressor kind {kind!r}")


def predict(model: TrainedModel, X) -> np.ndarray:
    """Apply the model's standardizer, then its learned function."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    if X.shape[0] == 0:
        return np.zeros(0)
    if X.shape[1] != model.standardizer.n_features:
        raise ValueError(
            f"expected {model.standardizer.n_features} feature columns, got {X.shape[1]}"
        )
    Xs = standardize_apply(model.standardizer, X)
    if model.kind in ("ridge", "lasso"):
        return Xs @ model.state["w"] + model.state["b"]
    if model.kind == "svr":
        k = rbf_kernel(Xs, model.state["support_X"], model.state["gamma"])
        return k @ model.state["coef"] + model.state["bias"]
    if model.kind in ("rf", "et"):
        preds = np.zeros(Xs.shape[0])
        for tree in model.state["trees"]:
            preds += _tree_predict(tree, Xs)
        return preds / len(model.state["trees"])
    if model.kind == "gb":
        preds = np.full(Xs.shape[0], model.state["base"])
        for tree in model.state["trees"]:
            preds += model.state["lr"] * _tree_predict(tree, Xs)
        lo, hi = model.state["y_range"]
        return np.clip(preds, lo, hi)
    raise ValueError(f"unknown regressor kind {model.kind!r}")


def expand_grid(grid: dict) -> list[dict]:
    """All grid points in first-key-major order; insertion order is the
    tie-break order for CV selection."""
    if not grid:
        raise ValueError("empty hyperparameter grid")
    keys = list(grid)
    combos = []
    for values in itertools.product(*(grid[k] for k in keys)):
        combos.append(dict(zip(keys, values)))
    return combos


def grid_search_cv(
    X, y, kind: str, grid: dict | None = None, k: int = 10, seed: int = 0,
    select: str = "mse",
) -> dict:
    """Pick the grid point with the lowest mean validation error over k
    seeded, shuffled folds. The standardizer is refit inside each fold on the
    fold-training rows only; ties keep the earlier grid point."""
    X, y = _check_xy(X, y)
    n = X.shape[0]
    if not 2 <= k <= n:
        raise ValueError(f"fold count k={k} must satisfy 2 <= k <= {n}")
    if select not in ("mse", "mae"):
        raise ValueError("select must be 'mse' or 'mae'")
    grid = grid if grid is not None else DEFAULT_GRIDS[kind]
    combos = expand_grid(grid)

    perm = np.random.default_rng(np.random.SeedSequence([seed])).permutation(n)
    folds = np.array_split(perm, k)

    best_hp = None
    best_err = np.inf
    for gi, hp in enumerate(combos):
        errs = []
        for fi, fold in enumerate(folds):
            train_rows = np.setdiff1d(perm, fold)
            std = standardize_fit(X[train_rows])
            model = fit_model(
                kind,
                standardize_apply(std, X[train_rows]),
                y[train_rows],
                hp,
                seed=_derive_seed(seed, fi, gi),
                standardizer=std,
            )
            pred = predict(model, X[fold])
            diff = pred - y[fold]
            errs.append(float(np.mean(diff**2 if select == "mse" else np.abs(diff))))
        mean_err = float(np.mean(errs))
        if mean_err < best_err:
            best_err = mean_err
            best_hp = hp
    return dict(best_hp)


def feature_importances(model: TrainedModel) -> np.ndarray:
    """Total variance-reduction per feature across all trees, normalized to
    sum 1 and aligned with the model's feature mask."""
    if model.kind not in TREE_KINDS:
        raise UnsupportedModelError(
            f"feature importances need a tree ensemble, not {model.kind!r}"
        )
    imp = np.asarray(model.state["importance"], dtype=np.float64).copy()
    total = imp.sum()
    if total <= 0:
        return np.full(imp.shape[0], 1.0 / imp.shape[0])
    return imp / total


# --- persistence --------------------------------------------------------------


def _state_to_jsonable(state: dict) -> dict:
    out = {}
    for key, value in state.items():
        if isinstance(value, np.ndarray):
            out[key] = {"__array__": value.tolist()}
        else:
            out[key] = value
    return out


def _state_from_jsonable(state: dict) -> dict:
    out = {}
    for key, value in state.items():
        if isinstance(value, dict) and "__array__" in value:
            out[key] = np.asarray(value["__array__"], dtype=np.float64)
        else:
            out[key] = value
    return out


def model_to_dict(model: TrainedModel) -> dict:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": model.kind,
        "hyperparams": model.hyperparams,
        "seed": model.seed,
        "feature_mask": list(model.feature_mask),
        "standardizer": {
            "mean": model.standardizer.mean.tolist(),
            "scale": model.standardizer.scale.tolist(),
        },
        "state": _state_to_jsonable(model.state),
    }


def model_from_dict(data: dict) -> TrainedModel:
    version = data.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"model format version {version!r} unsupported "
            f"(expected {MODEL_FORMAT_VERSION})"
        )
    try:
        return TrainedModel(
            kind=data["kind"],
            hyperparams=dict(data["hyperparams"]),
            state=_state_from_jsonable(data["state"]),
            standardizer=Standardizer(
                mean=np.asarray(data["standardizer"]["mean"], dtype=np.float64),
                scale=np.asarray(data["standardizer"]["scale"], dtype=np.float64),
            ),
            feature_mask=tuple(data["feature_mask"]),
            seed=int(data["seed"]),
        )
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"corrupt model payload: {exc}") from exc


def save_model(model: TrainedModel, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, sort_keys=True)
        fh.write("\n")


def load_model(path: str | Path) -> TrainedModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


def model_digest(model: TrainedModel) -> str:
    payload = json.dumps(model_to_dict(model), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()
