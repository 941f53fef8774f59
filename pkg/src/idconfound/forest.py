"""Self-contained random-forest binary classifier.

Each tree is grown on a bootstrap resample; every split picks the best
Gini-impurity split among a random subset of features, with candidate
thresholds at midpoints between consecutive distinct sorted values, and
growth continues until nodes are pure or reach the minimum node size.
Class-1 probability for a row is the fraction of trees voting class 1, so
scores take at most tree_count + 1 distinct values and tied scores are
common by construction.

Everything about a fit is a pure function of (data, hyperparameters, seed):
feature subsets and bootstrap draws come from a splitmix64 stream keyed per
tree, and equal-quality splits resolve to the lowest feature index, then the
lowest threshold.  The tree-growing and prediction kernels are compiled with
numba (nogil) because the permutation engine calls them hundreds of
thousands of times per test.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .rng import Seed

_U64 = np.uint64

MODEL_FORMAT_VERSION = 1


class ForestError(ValueError):
    """Invalid input to fit or predict."""


@dataclass(frozen=True)
class ForestParams:
    """Hyperparameters; defaults mirror the classic defaults for binary
    classification (many trees, sqrt feature subsampling, grow to purity,
    bootstrap the training-set size with replacement)."""

    tree_count: int = 500
    features_per_split: int | None = None
    min_node_size: int = 1
    bootstrap: bool = True

    def __post_init__(self) -> None:
        if self.tree_count < 1:
            raise ForestError(f"tree_count must be >= 1, got {self.tree_count}")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ForestError("features_per_split must be >= 1 when given")
        if self.min_node_size < 1:
            raise ForestError("min_node_size must be >= 1")

    def resolve_mtry(self, n_features: int) -> int:
        if self.features_per_split is not None:
            return min(self.features_per_split, n_features)
        return max(1, int(math.floor(math.sqrt(n_features))))


@dataclass(frozen=True, eq=False)
class ForestModel:
    """Fitted forest: flat per-tree node arrays walked by the predictor.

    `split_feature[t, k] == -1` marks node k of tree t as a leaf whose vote
    is `leaf_class[t, k]`; internal nodes route on
    `x[split_feature] < threshold`.
    """

    split_feature: np.ndarray
    threshold: np.ndarray
    left_child: np.ndarray
    right_child: np.ndarray
    leaf_class: np.ndarray
    node_counts: np.ndarray
    n_features: int
    params: ForestParams
    oob_accuracy: float | None


@njit(cache=True, nogil=True, inline="always")
def _mix64(state):
    # splitmix64: one 64-bit draw per call, wrapping uint64 arithmetic
    state = state + _U64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    z = z ^ (z >> _U64(31))
    return state, z


@njit(cache=True, nogil=True, inline="always")
def _argsort_insertion(vals, order, size):
    for k in range(size):
        order[k] = k
    for k in range(1, size):
        o = order[k]
        v = vals[o]
        j = k - 1
        while j >= 0 and vals[order[j]] > v:
            order[j + 1] = order[j]
            j -= 1
        order[j + 1] = o


@njit(cache=True, nogil=True)
def _grow_tree(
    X, y, mtry, min_node_size, use_bootstrap, seed,
    feature, threshold, left, right, leaf, inbag,
):
    # Bootstrap replicates are collapsed into per-row weights: class counts,
    # Gini costs, and distinct-value thresholds are identical to operating
    # on the replicated sample, but node scans and sorts only touch the
    # ~63% of rows that are unique in the resample.
    n, n_features = X.shape
    state = _U64(seed)
    if use_bootstrap:
        for i in range(n):
            state, z = _mix64(state)
            inbag[np.int64(z % _U64(n))] += 1
    else:
        for i in range(n):
            inbag[i] += 1
    n_unique = 0
    for i in range(n):
        if inbag[i] > 0:
            n_unique += 1
    idx = np.empty(n_unique, dtype=np.int32)
    w = np.empty(n_unique, dtype=np.int32)
    k = 0
    for i in range(n):
        if inbag[i] > 0:
            idx[k] = i
            w[k] = inbag[i]
            k += 1

    fpool = np.empty(n_features, dtype=np.int32)
    for i in range(n_features):
        fpool[i] = i
    buf_idx = np.empty(n_unique, dtype=np.int32)
    buf_w = np.empty(n_unique, dtype=np.int32)
    vals = np.empty(n_unique, dtype=np.float64)
    ybuf = np.empty(n_unique, dtype=np.int32)
    wbuf = np.empty(n_unique, dtype=np.int32)
    order_small = np.empty(n_unique, dtype=np.int64)
    stack = np.empty((2 * n_unique + 2, 3), dtype=np.int32)

    top = 0
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n_unique
    n_nodes = 1
    while top >= 0:
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        top -= 1
        span = end - start
        size = 0
        n1 = 0
        for i in range(span):
            weight = w[start + i]
            wbuf[i] = weight
            size += weight
            if y[idx[start + i]] == 1:
                ybuf[i] = weight
                n1 += weight
            else:
                ybuf[i] = 0
        n0 = size - n1
        if n1 == 0 or n0 == 0 or size <= min_node_size:
            feature[node] = -1
            leaf[node] = 1 if 2 * n1 > size else 0
            continue

        # draw mtry distinct candidate features (partial Fisher-Yates)
        for k in range(mtry):
            state, z = _mix64(state)
            j = k + np.int64(z % _U64(n_features - k))
            tmp = fpool[k]
            fpool[k] = fpool[j]
            fpool[j] = tmp

        best_cost = np.inf
        best_f = -1
        best_t = 0.0
        for k in range(mtry):
            f = fpool[k]
            for i in range(span):
                vals[i] = X[idx[start + i], f]
            if span <= 48:
                _argsort_insertion(vals, order_small, span)
                order = order_small[:span]
            else:
                order = np.argsort(vals[:span])
            nl = 0
            nl1 = 0
            for pos in range(span - 1):
                o = order[pos]
                nl += wbuf[o]
                nl1 += ybuf[o]
                v0 = vals[o]
                v1 = vals[order[pos + 1]]
                if v0 == v1:
                    continue
                nr = size - nl
                nr1 = n1 - nl1
                gini_l = 1.0 - ((nl - nl1) ** 2 + nl1 ** 2) / (nl * nl)
                gini_r = 1.0 - ((nr - nr1) ** 2 + nr1 ** 2) / (nr * nr)
                cost = (nl * gini_l + nr * gini_r) / size
                t = 0.5 * (v0 + v1)
                if cost < best_cost or (
                    cost == best_cost and (f < best_f or (f == best_f and t < best_t))
                ):
                    best_cost = cost
                    best_f = f
                    best_t = t

        if best_f < 0:
            # all candidate features constant on this node
            feature[node] = -1
            leaf[node] = 1 if 2 * n1 > size else 0
            continue

        nl_span = 0
        for i in range(start, end):
            if X[idx[i], best_f] < best_t:
                buf_idx[nl_span] = idx[i]
                buf_w[nl_span] = w[i]
                nl_span += 1
        nr_span = nl_span
        for i in range(start, end):
            if not (X[idx[i], best_f] < best_t):
                buf_idx[nr_span] = idx[i]
                buf_w[nr_span] = w[i]
                nr_span += 1
        for i in range(span):
            idx[start + i] = buf_idx[i]
            w[start + i] = buf_w[i]

        feature[node] = best_f
        threshold[node] = best_t
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        top += 1
        stack[top, 0] = lc
        stack[top, 1] = start
        stack[top, 2] = start + nl_span
        top += 1
        stack[top, 0] = rc
        stack[top, 1] = start + nl_span
        stack[top, 2] = end
    return n_nodes


@njit(cache=True, nogil=True)
def _grow_forest(X, y, n_trees, mtry, min_node_size, use_bootstrap, tree_seeds):
    n = X.shape[0]
    max_nodes = 2 * n + 2
    feature = np.full((n_trees, max_nodes), -1, dtype=np.int32)
    threshold = np.zeros((n_trees, max_nodes), dtype=np.float64)
    left = np.zeros((n_trees, max_nodes), dtype=np.int32)
    right = np.zeros((n_trees, max_nodes), dtype=np.int32)
    leaf = np.zeros((n_trees, max_nodes), dtype=np.int8)
    inbag = np.zeros((n_trees, n), dtype=np.int32)
    node_counts = np.empty(n_trees, dtype=np.int32)
    for t in range(n_trees):
        node_counts[t] = _grow_tree(
            X, y, mtry, min_node_size, use_bootstrap, tree_seeds[t],
            feature[t], threshold[t], left[t], right[t], leaf[t], inbag[t],
        )
    return feature, threshold, left, right, leaf, inbag, node_counts


@njit(cache=True, nogil=True)
def _predict_votes(feature, threshold, left, right, leaf, X):
    n_trees = feature.shape[0]
    m = X.shape[0]
    votes = np.zeros(m, dtype=np.float64)
    for t in range(n_trees):
        for i in range(m):
            node = 0
            while feature[t, node] >= 0:
                if X[i, feature[t, node]] < threshold[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            votes[i] += leaf[t, node]
    return votes / n_trees


@njit(cache=True, nogil=True)
def _oob_votes(feature, threshold, left, right, leaf, inbag, X):
    n_trees = feature.shape[0]
    m = X.shape[0]
    ones = np.zeros(m, dtype=np.int64)
    total = np.zeros(m, dtype=np.int64)
    for t in range(n_trees):
        for i in range(m):
            if inbag[t, i] != 0:
                continue
            node = 0
            while feature[t, node] >= 0:
                if X[i, feature[t, node]] < threshold[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            ones[i] += leaf[t, node]
            total[i] += 1
    return ones, total


def _check_matrix(features: np.ndarray, what: str) -> np.ndarray:
    features = np.ascontiguousarray(np.asarray(features, dtype=np.float64))
    if features.ndim != 2:
        raise ForestError(f"{what} must be a 2-D matrix, got shape {features.shape}")
    if not np.isfinite(features).all():
        raise ForestError(f"{what} contains non-finite values")
    return features


def fit_forest(
    features: np.ndarray,
    labels: np.ndarray,
    params: ForestParams | None = None,
    seed: Seed = Seed(0),
) -> ForestModel:
    """Fit a forest; identical (data, params, seed) gives identical trees."""
    params = params or ForestParams()
    X = _check_matrix(features, "training features")
    y = np.asarray(labels)
    if y.shape != (X.shape[0],):
        raise ForestError(f"labels shape {y.shape} does not match {X.shape[0]} rows")
    if X.shape[0] < 2:
        raise ForestError("need at least 2 training rows")
    if not np.isin(y, (0, 1)).all():
        raise ForestError("labels must be 0 or 1")
    y = y.astype(np.int8)
    if (y == 1).all() or (y == 0).all():
        raise ForestError("training labels contain a single class")

    mtry = params.resolve_mtry(X.shape[1])
    tree_seeds = seed.spawn_integers(params.tree_count)
    feature, threshold, left, right, leaf, inbag, node_counts = _grow_forest(
        X, y, params.tree_count, mtry, params.min_node_size, params.bootstrap, tree_seeds
    )

    oob_accuracy: float | None = None
    if params.bootstrap:
        ones, total = _oob_votes(feature, threshold, left, right, leaf, inbag, X)
        covered = total > 0
        if covered.any():
            pred = (2 * ones[covered] > total[covered]).astype(np.int8)
            oob_accuracy = float(np.mean(pred == y[covered]))

    return ForestModel(
        split_feature=feature,
        threshold=threshold,
        left_child=left,
        right_child=right,
        leaf_class=leaf,
        node_counts=node_counts,
        n_features=X.shape[1],
        params=params,
        oob_accuracy=oob_accuracy,
    )


def predict_proba(model: ForestModel, features: np.ndarray) -> np.ndarray:
    """Class-1 probability per row: the fraction of trees voting class 1."""
    X = _check_matrix(features, "prediction features")
    if X.shape[1] != model.n_features:
        raise ForestError(
            f"model was fit on {model.n_features} features, got {X.shape[1]}"
        )
    return _predict_votes(
        model.split_feature,
        model.threshold,
        model.left_child,
        model.right_child,
        model.leaf_class,
        X,
    )


def save_model(model: ForestModel, path) -> None:
    """Dump the fitted forest to a versioned npz archive."""
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "n_features": model.n_features,
        "tree_count": model.params.tree_count,
        "features_per_split": model.params.features_per_split,
        "min_node_size": model.params.min_node_size,
        "bootstrap": model.params.bootstrap,
        "oob_accuracy": model.oob_accuracy,
    }
    np.savez_compressed(
        path,
        header=np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8),
        split_feature=model.split_feature,
        threshold=model.threshold,
        left_child=model.left_child,
        right_child=model.right_child,
        leaf_class=model.leaf_class,
        node_counts=model.node_counts,
    )


def load_model(path) -> ForestModel:
    with np.load(path) as archive:
        header = json.loads(bytes(archive["header"]).decode("utf-8"))
        if header["format_version"] != MODEL_FORMAT_VERSION:
            raise ForestError(
                f"unsupported model format version {header['format_version']}"
            )
        params = ForestParams(
            tree_count=header["tree_count"],
            features_per_split=header["features_per_split"],
            min_node_size=header["min_node_size"],
            bootstrap=header["bootstrap"],
        )
        return ForestModel(
            split_feature=archive["split_feature"],
            threshold=archive["threshold"],
            left_child=archive["left_child"],
            right_child=archive["right_child"],
            leaf_class=archive["leaf_class"],
            node_counts=archive["node_counts"],
            n_features=header["n_features"],
            params=params,
            oob_accuracy=header["oob_accuracy"],
        )
