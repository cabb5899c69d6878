"""Gradient-boosted regression trees with gain-based feature importance.

Exact greedy CART on squared loss: every split threshold is a midpoint
between consecutive distinct feature values, and the recorded gain of a
split is the drop in sum of squared residuals it produces,

    gain = SSE(parent) - SSE(left) - SSE(right).

Summing the gains of one tree gives SSE(r) - SSE(r - h) where ``r`` is the
residual target the tree was fit to and ``h`` its unshrunk output.  With
learning rate ``eta`` the ensemble loss falls by (2*eta - eta**2) times that
amount per tree.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["BoostConfig", "Tree", "BoostedTrees", "GainReport", "fit_boosted_trees", "gain_importance"]


@dataclass(frozen=True)
class BoostConfig:
    n_trees: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_samples_leaf: int = 5

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")


@dataclass
class Tree:
    """Flat binary tree; ``feature == -1`` marks a leaf."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)
    gain: list[float] = field(default_factory=list)

    def _add(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(np.nan)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        self.gain.append(0.0)
        return len(self.feature) - 1

    @property
    def n_splits(self) -> int:
        return sum(f >= 0 for f in self.feature)

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(len(X))
        stack = [(0, np.arange(len(X)))]
        while stack:
            node, idx = stack.pop()
            f = self.feature[node]
            if f < 0:
                out[idx] = self.value[node]
                continue
            go_left = X[idx, f] <= self.threshold[node]
            stack.append((self.left[node], idx[go_left]))
            stack.append((self.right[node], idx[~go_left]))
        return out


@dataclass
class BoostedTrees:
    init: float
    trees: list[Tree]
    learning_rate: float
    n_features: int
    config: BoostConfig
    seed: int = 0

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        pred = np.full(len(X), self.init)
        for tree in self.trees:
            pred += self.learning_rate * tree.predict(X)
        return pred


@dataclass(frozen=True)
class GainReport:
    importance: np.ndarray
    normalized: np.ndarray


def _best_split(X, order, in_node, r, min_leaf):
    """Highest-gain (feature, threshold, gain) among candidates, or None.

    Scans features in index order and thresholds ascending; only a strictly
    larger gain replaces the incumbent.
    """
    n = int(in_node.sum())
    if n < 2 * min_leaf:
        return None
    best = None
    for f in range(X.shape[1]):
        idx = order[:, f]
        idx = idx[in_node[idx]]
        xs = X[idx, f]
        rs = r[idx]
        cs = np.cumsum(rs)
        total = cs[-1]
        i = np.arange(min_leaf - 1, n - min_leaf)
        i = i[xs[i] < xs[i + 1]]
        if len(i) == 0:
            continue
        nl = i + 1.0
        nr = n - nl
        sl = cs[i]
        gains = sl * sl / nl + (total - sl) ** 2 / nr - total * total / n
        k = int(np.argmax(gains))
        g = float(gains[k])
        if best is None or g > best[2]:
            best = (f, 0.5 * (xs[i[k]] + xs[i[k] + 1]), g)
    return best


def _fit_tree(X, order, r, max_depth, min_leaf) -> Tree:
    tree = Tree()
    root_idx = np.arange(len(r))
    tree._add(float(r.mean()))
    stack = [(0, root_idx, 0)]
    while stack:
        node, idx, depth = stack.pop()
        if depth >= max_depth or len(idx) < 2 * min_leaf:
            continue
        in_node = np.zeros(len(r), dtype=bool)
        in_node[idx] = True
        split = _best_split(X, order, in_node, r, min_leaf)
        if split is None or not split[2] > 0.0:
            continue
        f, thr, g = split
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        left = tree._add(float(r[li].mean()))
        right = tree._add(float(r[ri].mean()))
        tree.feature[node] = f
        tree.threshold[node] = thr
        tree.left[node] = left
        tree.right[node] = right
        tree.gain[node] = g
        stack.append((right, ri, depth + 1))
        stack.append((left, li, depth + 1))
    return tree


def fit_boosted_trees(X, y, config: BoostConfig | None = None, seed: int = 0) -> BoostedTrees:
    """Fit ``config.n_trees`` regression trees to successive residuals.

    ``seed`` is recorded for provenance only: the fit has no sampling, and
    exact gain ties resolve to the lowest feature index, then the lowest
    threshold.
    """
    config = config or BoostConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one row per target value")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("X and y must not contain missing values")
    if len(y) < 2 * config.min_samples_leaf:
        raise ValueError(f"need at least {2 * config.min_samples_leaf} rows")
    model = BoostedTrees(float(y.mean()), [], config.learning_rate, X.shape[1], config, seed)
    if np.ptp(y) == 0:
        return model
    order = np.argsort(X, axis=0, kind="stable")
    pred = np.full(len(y), model.init)
    for _ in range(config.n_trees):
        r = y - pred
        tree = _fit_tree(X, order, r, config.max_depth, config.min_samples_leaf)
        if tree.n_splits == 0:
            break
        model.trees.append(tree)
        pred = pred + config.learning_rate * tree.predict(X)
    return model


def gain_importance(model: BoostedTrees) -> GainReport:
    imp = np.zeros(model.n_features)
    for tree in model.trees:
        for f, g in zip(tree.feature, tree.gain):
            if f >= 0:
                imp[f] += g
    total = imp.sum()
    norm = imp / total if total > 0 else np.zeros_like(imp)
    return GainReport(imp, norm)
