"""Classical comparison models: one-step, historical average, VAR, random forest.

All baselines consume the same chronological split and target bins as the
neural models and emit PredictionSet objects, so the metrics layer does not
care who produced a prediction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DataError
from .flowdata import DatasetSplit, FlowMatrix, WindowSet
from .metrics import PredictionSet


def _segment_targets(split: DatasetSplit, segment: str, min_bin: int = 1) -> np.ndarray:
    ranges = {"train": split.train_range, "val": split.val_range, "test": split.test_range}
    if segment not in ranges:
        raise ConfigurationError(f"unknown segment {segment!r}")
    lo, hi = ranges[segment]
    return np.arange(max(lo, min_bin), hi, dtype=np.int64)


def one_step(flow: FlowMatrix, split: DatasetSplit, segment: str = "test") -> PredictionSet:
    """Previous interval's observation as the forecast."""
    targets = _segment_targets(split, segment)
    vals = flow.values.astype(np.float64)
    return PredictionSet(
        target_bins=targets,
        observed=vals[targets],
        predicted=vals[targets - 1],
        producer="OneStep",
        horizon_minutes=flow.interval_minutes,
    )


def _slot_keys(flow: FlowMatrix, bins: np.ndarray):
    """(weekday, slot-of-day) for each bin index."""
    per_day = 24 * 60 // flow.interval_minutes
    keys = []
    for k in bins:
        ts = flow.bin_start(int(k))
        slot = (ts.hour * 60 + ts.minute) // flow.interval_minutes
        keys.append((ts.weekday(), slot))
    return keys, per_day


def historical_average(flow: FlowMatrix, split: DatasetSplit, segment: str = "test") -> PredictionSet:
    """Train-segment mean over matching (weekday, time-of-day) slots.

    Fallbacks when a slot has no training sample: same time-of-day across
    all train days, then the station's overall train mean.
    """
    lo, hi = split.train_range
    if hi <= lo:
        raise DataError("empty training segment")
    vals = flow.values.astype(np.float64)
    train_bins = np.arange(lo, hi, dtype=np.int64)
    train_keys, _ = _slot_keys(flow, train_bins)

    by_slot = {}
    by_tod = {}
    for key, k in zip(train_keys, train_bins):
        by_slot.setdefault(key, []).append(k)
        by_tod.setdefault(key[1], []).append(k)
    station_mean = vals[lo:hi].mean(axis=0)

    targets = _segment_targets(split, segment, min_bin=0)
    target_keys, _ = _slot_keys(flow, targets)
    predicted = np.empty((len(targets), flow.n_stations))
    fallbacks = {"weekday_slot": 0, "time_of_day": 0, "station_mean": 0}
    for row, key in enumerate(target_keys):
        if key in by_slot:
            predicted[row] = vals[by_slot[key]].mean(axis=0)
            fallbacks["weekday_slot"] += 1
        elif key[1] in by_tod:
            predicted[row] = vals[by_tod[key[1]]].mean(axis=0)
            fallbacks["time_of_day"] += 1
        else:
            predicted[row] = station_mean
            fallbacks["station_mean"] += 1
    pred = PredictionSet(
        target_bins=targets,
        observed=vals[targets],
        predicted=predicted,
        producer="HA",
        horizon_minutes=flow.interval_minutes,
    )
    pred.fallbacks = fallbacks
    return pred


@dataclass
class VarModel:
    order: int
    intercept: np.ndarray  # (N,)
    coefs: np.ndarray  # (p, N, N); coefs[j] multiplies y_{t-1-j}
    ridge: float


def var_fit(flow: FlowMatrix, split: DatasetSplit, p: int = 4, ridge: float = 1e-3) -> VarModel:
    """Per-equation ridge least squares of y_t on an intercept and p lags."""
    if p < 1:
        raise ConfigurationError("VAR order must be >= 1")
    lo, hi = split.train_range
    if hi - lo < p + 1:
        raise DataError(f"need more than {p} training bins for VAR({p})")
    vals = flow.values.astype(np.float64)
    targets = np.arange(lo + p, hi)
    N = flow.n_stations
    Z = np.empty((len(targets), 1 + p * N))
    Z[:, 0] = 1.0
    for j in range(p):
        Z[:, 1 + j * N : 1 + (j + 1) * N] = vals[targets - 1 - j]
    Y = vals[targets]
    if ridge > 0:
        penalty = np.full(1 + p * N, ridge)
        penalty[0] = 0.0  # intercept unpenalized
        coef = np.linalg.solve(Z.T @ Z + np.diag(penalty), Z.T @ Y)
    else:
        coef, *_ = np.linalg.lstsq(Z, Y, rcond=None)
    return VarModel(
        order=p,
        intercept=coef[0].copy(),
        coefs=np.stack([coef[1 + j * N : 1 + (j + 1) * N].T for j in range(p)]),
        ridge=ridge,
    )


def var_predict(model: VarModel, flow: FlowMatrix, split: DatasetSplit, segment: str = "test") -> PredictionSet:
    """One-step-ahead forecasts from observed lags, clamped at zero."""
    targets = _segment_targets(split, segment, min_bin=model.order)
    vals = flow.values.astype(np.float64)
    predicted = np.tile(model.intercept, (len(targets), 1))
    for j in range(model.order):
        predicted += vals[targets - 1 - j] @ model.coefs[j].T
    predicted = np.maximum(predicted, 0.0)
    return PredictionSet(
        target_bins=targets,
        observed=vals[targets],
        predicted=predicted,
        producer="VAR",
        horizon_minutes=flow.interval_minutes,
    )


# --- random forest ---------------------------------------------------------


@dataclass
class _Node:
    feature: int = -1  # -1 marks a leaf
    threshold: float = 0.0
    left: Optional["_Node"] = None
    right: Optional["_Node"] = None
    value: Optional[np.ndarray] = None  # leaf mean target vector


@dataclass
class RFConfig:
    n_trees: int = 100
    max_depth: int = 12
    min_leaf: int = 5
    max_features: Optional[int] = None  # default ceil(sqrt(d))
    seed: int = 0


@dataclass
class ForestModel:
    trees: list
    config: RFConfig
    n_features: int
    n_outputs: int


def _sse(total: np.ndarray, total_sq: float, count: int) -> float:
    # sum over outputs of within-node squared deviation from the mean
    return total_sq - float(total @ total) / count


def _build_tree(X, Y, idx, depth, rng, cfg, m):
    node_Y = Y[idx]
    total = node_Y.sum(axis=0)
    total_sq = float((node_Y * node_Y).sum())
    count = len(idx)
    sse_here = _sse(total, total_sq, count)
    if depth >= cfg.max_depth or count < 2 * cfg.min_leaf or sse_here <= 1e-12:
        return _Node(value=total / count)

    best = None  # (score, feature, threshold, sorted order, split position)
    features = rng.choice(X.shape[1], size=m, replace=False)
    for feat in features:
        order = idx[np.argsort(X[idx, feat], kind="stable")]
        xs = X[order, feat]
        ys = Y[order]
        csum = np.cumsum(ys, axis=0)
        csq = np.cumsum((ys * ys).sum(axis=1))
        # candidate split after position s (1-based count on the left)
        for s in range(cfg.min_leaf, count - cfg.min_leaf + 1):
            if xs[s - 1] == xs[s]:
                continue
            left_tot, left_sq = csum[s - 1], csq[s - 1]
            right_tot = total - left_tot
            right_sq = total_sq - left_sq
            score = _sse(left_tot, float(left_sq), s) + _sse(right_tot, float(right_sq), count - s)
            if best is None or score < best[0]:
                best = (score, int(feat), 0.5 * (xs[s - 1] + xs[s]), order, s)
    if best is None or best[0] >= sse_here - 1e-12:
        return _Node(value=total / count)
    _, feat, threshold, order, s = best
    left = _build_tree(X, Y, order[:s], depth + 1, rng, cfg, m)
    right = _build_tree(X, Y, order[s:], depth + 1, rng, cfg, m)
    return _Node(feature=feat, threshold=threshold, left=left, right=right)


def _tree_predict(node: _Node, x: np.ndarray) -> np.ndarray:
    while node.feature >= 0:
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node.value


def rf_fit(windows: WindowSet, config: Optional[RFConfig] = None) -> ForestModel:
    """CART regression forest on flattened windows.

    Splits minimize the total variance (summed over all outputs); leaves
    predict the mean target vector of their training samples.  Each tree
    gets a bootstrap resample and a seed derived from the master seed, so
    fits are deterministic.
    """
    cfg = config or RFConfig()
    if len(windows) == 0:
        raise DataError("no training windows for the forest")
    X = windows.X.reshape(len(windows), -1)
    Y = np.asarray(windows.y, dtype=np.float64)
    d = X.shape[1]
    m = cfg.max_features or int(np.ceil(np.sqrt(d)))
    m = min(m, d)
    master = np.random.default_rng(cfg.seed)
    tree_seeds = master.integers(2**63, size=cfg.n_trees)
    trees = []
    for seed in tree_seeds:
        rng = np.random.default_rng(int(seed))
        boot = rng.integers(len(windows), size=len(windows))
        trees.append(_build_tree(X, Y, np.asarray(boot), 0, rng, cfg, m))
    return ForestModel(trees=trees, config=cfg, n_features=d, n_outputs=Y.shape[1])


def rf_predict(model: ForestModel, windows: WindowSet) -> np.ndarray:
    """Forest prediction: mean over trees, reduced in fixed tree order."""
    X = windows.X.reshape(len(windows), -1)
    if X.shape[1] != model.n_features:
        raise ConfigurationError("window feature width does not match the fitted forest")
    out = np.zeros((len(windows), model.n_outputs))
    for tree in model.trees:
        for row in range(X.shape[0]):
            out[row] += _tree_predict(tree, X[row])
    return out / len(model.trees)


def rf_prediction_set(model: ForestModel, windows: WindowSet, horizon_minutes: int) -> PredictionSet:
    return PredictionSet(
        target_bins=windows.target_bins,
        observed=windows.y,
        predicted=rf_predict(model, windows),
        producer="RF",
        horizon_minutes=horizon_minutes,
    )
