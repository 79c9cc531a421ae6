"""Gradient-boosted decision trees for indicator cost classification.

Second-order boosting on the logistic loss: each round fits a regression
tree to the gradient/Hessian statistics of the current margin, growing
leaf-wise (best split globally among current leaves) up to ``max_leaves``
with a depth cap, using exact split search over all features. Safe and
unsafe observations live in separate buffers so training can cap the
safe:unsafe ratio on imbalanced data.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InsufficientDataError, ShapeError

try:  # optional fast path; the numpy traversal below is the reference
    from numba import njit as _njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False

    def _njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


# Guards against degenerate splits and division by a vanishing Hessian sum.
MIN_CHILD_HESSIAN = 1e-3
LEAF_REG = 1e-6
PRIOR_CLIP = 1e-6
CONVERGED_LEAF_TOL = 1e-12


@_njit(cache=True)
def _walk_trees(xr, n_rows, n_features, feature, threshold, left, right, value, roots, out):
    for i in range(n_rows):
        base = i * n_features
        total = 0.0
        for m in range(roots.size):
            node = roots[m]
            while left[node] != node:
                if xr[base + feature[node]] < threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            total += value[node]
        out[i] = total


@dataclass
class GbdtConfig:
    n_estimators: int = 400
    max_depth: int = 8
    max_leaves: int = 12
    learning_rate: float = 0.3
    min_samples_leaf: int = 5
    decision_threshold: float = 0.5

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if self.max_leaves < 2:
            raise ValueError("max_leaves must be >= 2")
        if not (0.0 < self.learning_rate <= 1.0):
            raise ValueError("learning_rate must be in (0, 1]")
        if not (0.0 < self.decision_threshold < 1.0):
            raise ValueError("decision_threshold must be in (0, 1)")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")


class Tree:
    """Array-encoded binary tree. Leaves self-loop (left == right == self)."""

    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def add_leaf(self, value: float = 0.0) -> int:
        node = len(self.feature)
        self.feature.append(0)
        self.threshold.append(np.inf)  # x < inf -> self-loop on the left child
        self.left.append(node)
        self.right.append(node)
        self.value.append(value)
        return node

    def make_split(self, node: int, feature: int, threshold: float, left: int, right: int):
        self.feature[node] = feature
        self.threshold[node] = threshold
        self.left[node] = left
        self.right[node] = right
        self.value[node] = 0.0

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def max_leaf_magnitude(self) -> float:
        leaves = [abs(v) for i, v in enumerate(self.value) if self.left[i] == i]
        return max(leaves) if leaves else 0.0

    def depth(self) -> int:
        best = 0
        stack = [(0, 0)]
        while stack:
            node, d = stack.pop()
            if self.left[node] == node:
                best = max(best, d)
            else:
                stack.append((self.left[node], d + 1))
                stack.append((self.right[node], d + 1))
        return best

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left,
            "right": self.right,
            "value": self.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        tree = cls()
        tree.feature = [int(v) for v in d["feature"]]
        tree.threshold = [float(v) for v in d["threshold"]]
        tree.left = [int(v) for v in d["left"]]
        tree.right = [int(v) for v in d["right"]]
        tree.value = [float(v) for v in d["value"]]
        return tree


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class GbdtModel:
    """Additive tree ensemble producing hard labels through a sigmoid threshold."""

    def __init__(self, n_features: int, base_score: float, shrinkage: float,
                 decision_threshold: float, trees: Optional[list[Tree]] = None):
        self.n_features = int(n_features)
        self.base_score = float(base_score)
        self.shrinkage = float(shrinkage)
        self.decision_threshold = float(decision_threshold)
        self.trees: list[Tree] = trees or []
        self._flat = None

    def _refresh_flat(self):
        feature, threshold, left, right, value, roots = [], [], [], [], [], []
        offset = 0
        depth = 1
        for tree in self.trees:
            roots.append(offset)
            feature.extend(tree.feature)
            threshold.extend(tree.threshold)
            left.extend(i + offset for i in tree.left)
            right.extend(i + offset for i in tree.right)
            value.extend(tree.value)
            depth = max(depth, tree.depth())
            offset += tree.n_nodes
        self._flat = (
            np.asarray(feature, dtype=np.int64),
            np.asarray(threshold, dtype=np.float64),
            np.asarray(left, dtype=np.int64),
            np.asarray(right, dtype=np.int64),
            np.asarray(value, dtype=np.float64),
            np.asarray(roots, dtype=np.int64),
            depth,
        )

    def predict_margin(self, x: np.ndarray) -> np.ndarray:
        """Raw additive score: base + shrinkage-weighted sum of leaf values."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.n_features:
            raise ShapeError(f"feature count {x.shape[1]} != {self.n_features}")
        if not self.trees:
            return np.full(len(x), self.base_score)
        if self._flat is None:
            self._refresh_flat()
        if _HAVE_NUMBA:
            feature, threshold, left, right, value, roots, _ = self._flat
            out = np.empty(len(x))
            _walk_trees(np.ascontiguousarray(x).ravel(), len(x), self.n_features,
                        feature, threshold, left, right, value, roots, out)
            return self.base_score + self.shrinkage * out
        return self._predict_margin_numpy(x)

    def _predict_margin_numpy(self, x: np.ndarray) -> np.ndarray:
        """Vectorized traversal kept as the reference for the jitted walk."""
        if self._flat is None:
            self._refresh_flat()
        feature, threshold, left, right, value, roots, depth = self._flat
        ptr = np.broadcast_to(roots, (len(x), len(roots))).copy()
        for _ in range(depth):
            vals = np.take_along_axis(x, feature[ptr], axis=1)
            ptr = np.where(vals < threshold[ptr], left[ptr], right[ptr])
        return self.base_score + self.shrinkage * value[ptr].sum(axis=1)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return _sigmoid(self.predict_margin(x))

    @property
    def margin_threshold(self) -> float:
        """Margin value equivalent to ``decision_threshold`` on the probability scale."""
        t = self.decision_threshold
        return float(np.log(t / (1.0 - t)))

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        """Hard labels for a batch of observations."""
        return (self.predict_margin(x) >= self.margin_threshold).astype(np.int64)

    def predict(self, obs: np.ndarray) -> int:
        """Hard indicator label in {0, 1} for a single observation."""
        obs = np.asarray(obs, dtype=np.float64)
        if obs.ndim != 1:
            raise ShapeError("predict expects a single observation vector")
        return int(self.predict_batch(obs[None, :])[0])

    # -- serialization: structured text, bit-exact round trip ----------------

    def save(self, path: str):
        payload = {
            "format": "safempc-gbdt",
            "version": 1,
            "n_features": self.n_features,
            "base_score": self.base_score,
            "shrinkage": self.shrinkage,
            "decision_threshold": self.decision_threshold,
            "trees": [t.to_dict() for t in self.trees],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path: str) -> "GbdtModel":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        if payload.get("format") != "safempc-gbdt" or payload.get("version") != 1:
            raise ValueError(f"{path}: not a version-1 gbdt checkpoint")
        return cls(
            payload["n_features"],
            payload["base_score"],
            payload["shrinkage"],
            payload["decision_threshold"],
            [Tree.from_dict(d) for d in payload["trees"]],
        )


def _best_split(x: np.ndarray, g: np.ndarray, h: np.ndarray, min_samples_leaf: int):
    """Exact best split of one node; returns (gain, feature, threshold, left_mask) or None.

    Ties resolve to the lowest feature index, then the lowest threshold.
    """
    n = len(x)
    if n < 2 * min_samples_leaf:
        return None
    order = np.argsort(x, axis=0, kind="stable")
    xs = np.take_along_axis(x, order, axis=0)
    gs = g[order]
    hs = h[order]
    gl = np.cumsum(gs, axis=0)[:-1]
    hl = np.cumsum(hs, axis=0)[:-1]
    g_tot = gl[-1] + gs[-1]
    h_tot = hl[-1] + hs[-1]
    gr = g_tot - gl
    hr = h_tot - hl
    counts = np.arange(1, n)[:, None]
    valid = (
        (xs[1:] > xs[:-1])
        & (counts >= min_samples_leaf)
        & ((n - counts) >= min_samples_leaf)
        & (hl >= MIN_CHILD_HESSIAN)
        & (hr >= MIN_CHILD_HESSIAN)
    )
    if not valid.any():
        return None
    parent = (g_tot * g_tot) / (h_tot + LEAF_REG)
    gain = 0.5 * ((gl * gl) / (hl + LEAF_REG) + (gr * gr) / (hr + LEAF_REG) - parent)
    gain = np.where(valid, gain, -np.inf)
    # feature-major argmax: lowest feature index wins ties, then lowest position
    flat = np.argmax(gain.T)
    feat, pos = divmod(int(flat), n - 1)
    best_gain = float(gain[pos, feat])
    if best_gain <= 0.0:
        return None
    threshold = 0.5 * (xs[pos, feat] + xs[pos + 1, feat])
    left_mask = x[:, feat] < threshold
    return best_gain, feat, float(threshold), left_mask


def _leaf_value(g_sum: float, h_sum: float) -> float:
    return -g_sum / (h_sum + LEAF_REG)


def _build_tree(x: np.ndarray, g: np.ndarray, h: np.ndarray, cfg: GbdtConfig) -> Tree:
    tree = Tree()
    root = tree.add_leaf()
    all_idx = np.arange(len(x))
    # frontier entries: (node_id, indices, depth, cached best split)
    frontier = {root: (all_idx, 0, _best_split(x, g, h, cfg.min_samples_leaf))}
    n_leaves = 1
    while n_leaves < cfg.max_leaves:
        best_node, best_key = None, None
        for node, (idx, depth, split) in frontier.items():
            if split is None or depth >= cfg.max_depth:
                continue
            key = (-split[0], node)
            if best_key is None or key < best_key:
                best_key, best_node = key, node
        if best_node is None:
            break
        idx, depth, (gain, feat, threshold, left_mask) = frontier.pop(best_node)
        left_idx = idx[left_mask]
        right_idx = idx[~left_mask]
        left_id = tree.add_leaf()
        right_id = tree.add_leaf()
        tree.make_split(best_node, feat, threshold, left_id, right_id)
        for child_id, child_idx in ((left_id, left_idx), (right_id, right_idx)):
            child_split = None
            if depth + 1 < cfg.max_depth:
                child_split = _best_split(
                    x[child_idx], g[child_idx], h[child_idx], cfg.min_samples_leaf
                )
            frontier[child_id] = (child_idx, depth + 1, child_split)
        n_leaves += 1
    for node, (idx, _depth, _split) in frontier.items():
        tree.value[node] = _leaf_value(float(g[idx].sum()), float(h[idx].sum()))
    return tree


def fit_gbdt(x: np.ndarray, y: np.ndarray, cfg: GbdtConfig) -> GbdtModel:
    """Boost ``cfg.n_estimators`` trees on (features, binary labels)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(x) == 0:
        raise InsufficientDataError("empty training set")
    if x.ndim != 2 or len(x) != len(y):
        raise ShapeError("x must be (n, features) aligned with y")
    prior = float(np.clip(y.mean(), PRIOR_CLIP, 1.0 - PRIOR_CLIP))
    base = float(np.log(prior / (1.0 - prior)))
    model = GbdtModel(x.shape[1], base, cfg.learning_rate, cfg.decision_threshold)
    margin = np.full(len(x), base)
    for _ in range(cfg.n_estimators):
        p = _sigmoid(margin)
        g = p - y
        h = p * (1.0 - p)
        tree = _build_tree(x, g, h, cfg)
        model.trees.append(tree)
        if tree.max_leaf_magnitude() < CONVERGED_LEAF_TOL:
            break
        margin = margin + cfg.learning_rate * _tree_raw_predict(tree, x)
    model._refresh_flat()
    return model


def _tree_raw_predict(tree: Tree, x: np.ndarray) -> np.ndarray:
    feature = np.asarray(tree.feature, dtype=np.int64)
    threshold = np.asarray(tree.threshold, dtype=np.float64)
    left = np.asarray(tree.left, dtype=np.int64)
    right = np.asarray(tree.right, dtype=np.int64)
    value = np.asarray(tree.value, dtype=np.float64)
    ptr = np.zeros(len(x), dtype=np.int64)
    for _ in range(max(tree.depth(), 1)):
        vals = x[np.arange(len(x)), feature[ptr]]
        ptr = np.where(vals < threshold[ptr], left[ptr], right[ptr])
    return value[ptr]


class DualBuffer:
    """Safe/unsafe observation stores with oldest-first eviction and a ratio cap."""

    def __init__(self, max_safe: Optional[int] = None, max_unsafe: Optional[int] = None,
                 max_safe_ratio: float = 3.0):
        if max_safe_ratio <= 0:
            raise ValueError("max_safe_ratio must be > 0")
        self.safe: deque = deque(maxlen=max_safe)
        self.unsafe: deque = deque(maxlen=max_unsafe)
        self.max_safe_ratio = max_safe_ratio

    def ingest(self, obs: np.ndarray, cost: int) -> "DualBuffer":
        if cost not in (0, 1):
            raise ValueError(f"cost must be 0 or 1, got {cost!r}")
        target = self.unsafe if cost else self.safe
        target.append(np.asarray(obs, dtype=np.float64))
        return self

    @property
    def n_safe(self) -> int:
        return len(self.safe)

    @property
    def n_unsafe(self) -> int:
        return len(self.unsafe)

    def __len__(self) -> int:
        return self.n_safe + self.n_unsafe

    def draw_training_set(self, seed: int):
        """All unsafe points plus a seeded safe subsample capped by the ratio."""
        if len(self) == 0:
            raise InsufficientDataError("both buffers are empty")
        safe = list(self.safe)
        unsafe = list(self.unsafe)
        if unsafe:
            cap = int(self.max_safe_ratio * len(unsafe))
            if len(safe) > cap:
                rng = np.random.default_rng(seed)
                keep = np.sort(rng.choice(len(safe), size=cap, replace=False))
                safe = [safe[i] for i in keep]
        rows = unsafe + safe
        labels = np.concatenate([np.ones(len(unsafe)), np.zeros(len(safe))])
        return np.stack(rows), labels


def fit_classifier(cfg: GbdtConfig, buffer: DualBuffer, seed: int) -> GbdtModel:
    """Fit the cost classifier from a dual buffer (ratio-capped draw, then boosting)."""
    x, y = buffer.draw_training_set(seed)
    return fit_gbdt(x, y, cfg)


def ingest(buffer: DualBuffer, obs: np.ndarray, cost: int) -> DualBuffer:
    """Append an observation to the sub-buffer matching its cost label."""
    return buffer.ingest(obs, cost)
