"""Comparison regressors: least squares, CART tree, bagged random forest.

All three are multi-output. Trees keep one structure per fit with a leaf
vector holding the mean of every target; splits minimise the summed
per-target squared error. The split search and row routing live in
``battrul.kernels``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from battrul import kernels
from battrul.seeding import derive_seed, make_rng

RIDGE_LAMBDA = 1e-8
DEFAULT_MAX_DEPTH = 8
DEFAULT_MIN_SAMPLES_LEAF = 2
DEFAULT_N_TREES = 50
DEFAULT_FEATURE_FRACTION = 0.6


def _as_2d(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {a.shape}")
    return a


def _check_width(X, width):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != width:
        raise ValueError(f"expected {width} feature columns, got {X.shape[1]}")
    return X


@dataclass
class LinearModel:
    coef: np.ndarray          # d x p
    intercept: np.ndarray     # d
    ridge_used: bool = False
    normalizer: object = None
    labels: dict | None = None
    training: dict = field(default_factory=dict)

    @property
    def n_features(self):
        return self.coef.shape[1]

    def predict(self, X) -> np.ndarray:
        X = _check_width(X, self.n_features)
        return X @ self.coef.T + self.intercept


def linreg_fit(features, targets) -> LinearModel:
    """Ordinary least squares per target column via the normal equations.

    Falls back to ``G + 1e-8 I`` when the Gram matrix is numerically singular
    (e.g. a constant feature column).
    """
    X = _as_2d(features, "features")
    Y = _as_2d(targets, "targets")
    if X.shape[0] == 0:
        raise ValueError("cannot fit on zero rows")
    if Y.shape[0] != X.shape[0]:
        raise ValueError("features and targets differ in row count")
    A = np.column_stack([X, np.ones(X.shape[0])])
    G = A.T @ A
    rhs = A.T @ Y
    ridge = np.linalg.cond(G) > 1.0 / np.finfo(np.float64).eps
    if ridge:
        G = G + RIDGE_LAMBDA * np.eye(G.shape[0])
    sol = np.linalg.solve(G, rhs)
    return LinearModel(coef=sol[:-1].T.copy(), intercept=sol[-1].copy(), ridge_used=bool(ridge))


@dataclass
class TreeModel:
    """Flat array tree; ``feature[i] == -1`` marks a leaf. Rows with ``x <= threshold`` go left."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray          # nodes x d, mean target of the node's training rows
    n_samples: np.ndarray
    n_features: int
    max_depth: int | None = DEFAULT_MAX_DEPTH
    min_samples_leaf: int = DEFAULT_MIN_SAMPLES_LEAF
    normalizer: object = None
    labels: dict | None = None
    training: dict = field(default_factory=dict)

    @property
    def n_nodes(self):
        return self.feature.shape[0]

    @property
    def n_leaves(self):
        return int(np.sum(self.feature < 0))

    def depth(self) -> int:
        def rec(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(rec(self.left[i]), rec(self.right[i]))
        return rec(0)

    def apply(self, X) -> np.ndarray:
        X = np.ascontiguousarray(_check_width(X, self.n_features))
        return kernels.route_rows(X, self.feature, self.threshold, self.left, self.right)

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]


def tree_fit(features, targets, max_depth: int | None = DEFAULT_MAX_DEPTH,
             min_samples_leaf: int = DEFAULT_MIN_SAMPLES_LEAF, seed: int = 0,
             feature_fraction: float = 1.0) -> TreeModel:
    """Greedy CART regression tree.

    A node is split whenever its targets are not all equal, it is shallower
    than ``max_depth`` and some midpoint threshold leaves ``min_samples_leaf``
    rows on each side; the best candidate is taken even when it does not
    reduce the error. Ties go to the lowest feature index, then the lowest
    threshold. With ``feature_fraction < 1`` each split considers a fresh
    random subset of ``ceil(feature_fraction * p)`` features.
    """
    X = np.ascontiguousarray(_as_2d(features, "features"))
    Y = np.ascontiguousarray(_as_2d(targets, "targets"))
    n, p = X.shape
    if n == 0:
        raise ValueError("cannot fit on zero rows")
    if Y.shape[0] != n:
        raise ValueError("features and targets differ in row count")
    if min_samples_leaf < 1:
        raise ValueError("min_samples_leaf must be >= 1")
    if not 0 < feature_fraction <= 1:
        raise ValueError("feature_fraction must lie in (0, 1]")
    n_sub = max(1, math.ceil(feature_fraction * p))
    all_features = np.arange(p, dtype=np.int64)
    rng = make_rng(seed)

    feature, threshold, left, right, value, counts = [], [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(Y[idx].mean(axis=0))
        counts.append(len(idx))
        return len(feature) - 1

    root = new_node(np.arange(n))
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if max_depth is not None and depth >= max_depth:
            continue
        if len(idx) < 2 * min_samples_leaf:
            continue
        Ys = Y[idx]
        if np.all(Ys == Ys[0]):
            continue
        if n_sub < p:
            feats = np.sort(rng.choice(p, size=n_sub, replace=False)).astype(np.int64)
        else:
            feats = all_features
        f, t, _ = kernels.best_split(X[idx], Ys, feats, min_samples_leaf)
        if f < 0:
            continue
        go_left = X[idx, f] <= t
        li, ri = idx[go_left], idx[~go_left]
        if len(li) == 0 or len(ri) == 0:
            continue
        feature[node] = int(f)
        threshold[node] = float(t)
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # right pushed first so the left subtree is numbered first
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    return TreeModel(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=np.float64).reshape(len(feature), Y.shape[1]),
        n_samples=np.array(counts, dtype=np.int64),
        n_features=p,
        max_depth=max_depth,
        min_samples_leaf=min_samples_leaf,
    )


@dataclass
class ForestModel:
    trees: list
    seeds: list
    feature_fraction: float = DEFAULT_FEATURE_FRACTION
    bootstrap: bool = True
    normalizer: object = None
    labels: dict | None = None
    training: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.trees:
            raise ValueError("a forest needs at least one tree")

    @property
    def n_features(self):
        return self.trees[0].n_features

    def member_predictions(self, X) -> np.ndarray:
        return np.stack([t.predict(X) for t in self.trees])

    def predict(self, X) -> np.ndarray:
        return self.member_predictions(X).mean(axis=0)


def forest_fit(features, targets, n_trees: int = DEFAULT_N_TREES, max_depth: int | None = DEFAULT_MAX_DEPTH,
               feature_fraction: float = DEFAULT_FEATURE_FRACTION, seed: int = 0,
               min_samples_leaf: int = DEFAULT_MIN_SAMPLES_LEAF, bootstrap: bool = True) -> ForestModel:
    """Bagged trees. Tree ``i`` uses seed ``derive_seed(seed, i)`` for its bootstrap draw and feature subsets."""
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    X = np.ascontiguousarray(_as_2d(features, "features"))
    Y = np.ascontiguousarray(_as_2d(targets, "targets"))
    n = X.shape[0]
    trees, seeds = [], []
    for i in range(n_trees):
        s = derive_seed(seed, i)
        if bootstrap:
            rows = make_rng(s).integers(0, n, size=n)
            Xi, Yi = X[rows], Y[rows]
        else:
            Xi, Yi = X, Y
        trees.append(tree_fit(Xi, Yi, max_depth=max_depth, min_samples_leaf=min_samples_leaf,
                              seed=derive_seed(s, 1), feature_fraction=feature_fraction))
        seeds.append(s)
    return ForestModel(trees, seeds, feature_fraction, bootstrap)
