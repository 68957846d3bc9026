"""Good/bad projection classifier: bagged CART trees on metric features.

Trees use gini splits with sqrt(F) feature subsampling and store the
positive-class probability at every node, which makes tree-path feature
attribution (each split's probability delta credited to its feature) exact
and cheap. That attribution approximates Shapley-style explanations well
enough for ranking features by impact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParameterError, ValidationError

FOREST_FORMAT = "forest-v1"


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 200
    max_depth: int = 10
    min_leaf: int = 1
    seed: int = 0

    def to_dict(self):
        return {"n_trees": self.n_trees, "max_depth": self.max_depth,
                "min_leaf": self.min_leaf, "seed": self.seed}


# grid searched when cross-validating hyper-parameters
DEFAULT_FOREST_GRID = ({"n_trees": 100, "max_depth": 5},
                       {"n_trees": 100, "max_depth": 10},
                       {"n_trees": 200, "max_depth": 5},
                       {"n_trees": 200, "max_depth": 10})


@dataclass
class ForestModel:
    trees: list                 # nested dict nodes
    config: ForestConfig
    feature_names: list

    def to_json(self) -> str:
        return json.dumps({"format": FOREST_FORMAT, "config": self.config.to_dict(),
                           "feature_names": list(self.feature_names),
                           "trees": self.trees}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ForestModel":
        d = json.loads(text)
        if d.get("format") != FOREST_FORMAT:
            raise ValidationError(f"not a {FOREST_FORMAT} document")
        return cls(trees=d["trees"], config=ForestConfig(**d["config"]),
                   feature_names=d["feature_names"])


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return 1.0 - float(np.sum(p * p))


def _best_split(X, y, feature_ids, min_leaf):
    """Best (feature, threshold) by gini decrease; ties to the lower
    feature index then lower threshold. Returns None if nothing improves."""
    n = len(y)
    parent = _gini(np.bincount(y, minlength=2).astype(float))
    best = None   # (gain, feature, threshold)
    for f in sorted(int(f) for f in feature_ids):
        xs = X[:, f]
        order = np.argsort(xs, kind="stable")
        xs_sorted = xs[order]
        ys_sorted = y[order]
        ones = np.cumsum(ys_sorted)
        total_ones = ones[-1]
        # candidate split after position i (1-based count on the left)
        left_n = np.arange(1, n)
        boundary = xs_sorted[:-1] < xs_sorted[1:]
        valid = boundary & (left_n >= min_leaf) & (n - left_n >= min_leaf)
        if not np.any(valid):
            continue
        left_ones = ones[:-1]
        right_ones = total_ones - left_ones
        gl = 1.0 - ((left_ones / left_n) ** 2 + ((left_n - left_ones) / left_n) ** 2)
        rn = n - left_n
        gr = 1.0 - ((right_ones / rn) ** 2 + ((rn - right_ones) / rn) ** 2)
        gain = parent - (left_n * gl + rn * gr) / n
        gain = np.where(valid, gain, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] > 1e-12:
            thr = 0.5 * (xs_sorted[i] + xs_sorted[i + 1])
            cand = (float(gain[i]), f, float(thr))
            if best is None or cand[0] > best[0] + 1e-12:
                best = cand
    return best


def _grow_tree(X, y, rng, max_depth, min_leaf, n_sub, depth=0):
    counts = np.bincount(y, minlength=2).astype(float)
    node = {"value": float(counts[1] / counts.sum()), "n": int(len(y))}
    if depth >= max_depth or counts[0] == 0 or counts[1] == 0 or len(y) < 2 * min_leaf:
        return node
    feats = rng.choice(X.shape[1], size=n_sub, replace=False)
    split = _best_split(X, y, feats, min_leaf)
    if split is None:
        return node
    _, f, thr = split
    mask = X[:, f] <= thr
    node["feature"] = int(f)
    node["threshold"] = float(thr)
    node["left"] = _grow_tree(X[mask], y[mask], rng, max_depth, min_leaf, n_sub, depth + 1)
    node["right"] = _grow_tree(X[~mask], y[~mask], rng, max_depth, min_leaf, n_sub, depth + 1)
    return node


def fit_forest(X, y, cfg: ForestConfig | None = None,
               feature_names=None) -> ForestModel:
    """Bootstrap-bagged gini trees; deterministic given cfg.seed."""
    cfg = cfg or ForestConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.ndim != 2 or len(X) != len(y):
        raise ParameterError("X must be (n, F) with one label per row")
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite feature values")
    if len(np.unique(y)) < 2:
        raise ValidationError("training needs both classes present")
    if cfg.n_trees < 1:
        raise ParameterError("n_trees must be >= 1")
    n, F = X.shape
    n_sub = max(1, int(np.sqrt(F)))
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees)
    trees = []
    for ss in seeds:
        rng = np.random.default_rng(ss)
        boot = rng.integers(0, n, size=n)
        trees.append(_grow_tree(X[boot], y[boot], rng, cfg.max_depth,
                                cfg.min_leaf, n_sub))
    names = list(feature_names) if feature_names is not None \
        else [f"f{j}" for j in range(F)]
    return ForestModel(trees=trees, config=cfg, feature_names=names)


def _tree_value(node, x):
    while "feature" in node:
        node = node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]
    return node["value"]


def predict_proba(m: ForestModel, x) -> float:
    """Mean positive-class leaf probability over trees."""
    if not m.trees:
        raise ParameterError("empty forest")
    x = np.asarray(x, dtype=float)
    return float(np.mean([_tree_value(t, x) for t in m.trees]))


def predict_proba_batch(m: ForestModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return np.array([predict_proba(m, row) for row in X])


def attribute(m: ForestModel, x):
    """Per-feature contributions; baseline + sum equals predict_proba(x).

    Walks each tree's decision path and credits every probability change
    across a split to the split feature, then averages over trees.
    """
    if not m.trees:
        raise ParameterError("empty forest")
    x = np.asarray(x, dtype=float)
    F = len(m.feature_names)
    contrib = np.zeros(F)
    baseline = 0.0
    for t in m.trees:
        baseline += t["value"]
        node = t
        while "feature" in node:
            nxt = node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]
            contrib[node["feature"]] += nxt["value"] - node["value"]
            node = nxt
    k = len(m.trees)
    return {"baseline": baseline / k,
            "contributions": dict(zip(m.feature_names, contrib / k))}


def select_forest_config(X, y, grid=DEFAULT_FOREST_GRID, seed: int = 0):
    """Pick the grid entry with the best out-of-bag AUC; ties keep grid order."""
    from .evaluation import roc_auc

    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    n = len(y)
    best_cfg, best_auc = None, -np.inf
    for entry in grid:
        cfg = ForestConfig(seed=seed, **entry)
        seeds = np.random.SeedSequence(seed).spawn(cfg.n_trees)
        n_sub = max(1, int(np.sqrt(X.shape[1])))
        score_sum = np.zeros(n)
        score_cnt = np.zeros(n)
        for ss in seeds:
            rng = np.random.default_rng(ss)
            boot = rng.integers(0, n, size=n)
            tree = _grow_tree(X[boot], y[boot], rng, cfg.max_depth,
                              cfg.min_leaf, n_sub)
            oob = np.setdiff1d(np.arange(n), boot)
            for i in oob:
                score_sum[i] += _tree_value(tree, X[i])
                score_cnt[i] += 1
        seen = score_cnt > 0
        if len(np.unique(y[seen])) < 2:
            continue
        auc = roc_auc(y[seen], score_sum[seen] / score_cnt[seen])
        if auc > best_auc + 1e-12:
            best_cfg, best_auc = cfg, auc
    return best_cfg or ForestConfig(seed=seed)
