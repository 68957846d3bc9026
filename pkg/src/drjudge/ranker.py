"""Learning-to-rank over heart-sorted projection groups.

Gradient-boosted regression trees driven by RankNet lambdas weighted by
|delta NDCG|, the LambdaMART recipe. Relevance is the awarded heart count,
with crossed-out projections mapped to -1 so they sort strictly below
unrated ones; the NDCG gain 2^(relevance+1) keeps every gain positive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ParameterError, ValidationError

RANKER_FORMAT = "ranker-v1"
MIN_RELEVANCE, MAX_RELEVANCE = -1, 4


class RankItem(NamedTuple):
    embedding_id: str
    features: np.ndarray
    relevance: int


@dataclass(frozen=True)
class RankGroup:
    group_id: str
    items: tuple
    dataset_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        for it in self.items:
            if not MIN_RELEVANCE <= it.relevance <= MAX_RELEVANCE:
                raise ValidationError(
                    f"relevance {it.relevance} outside [{MIN_RELEVANCE}, {MAX_RELEVANCE}]")


@dataclass(frozen=True)
class RankerConfig:
    n_trees: int = 15
    learning_rate: float = 0.3
    max_depth: int = 5
    min_leaf: int = 5
    seed: int = 0

    def to_dict(self):
        return {"n_trees": self.n_trees, "learning_rate": self.learning_rate,
                "max_depth": self.max_depth, "min_leaf": self.min_leaf,
                "seed": self.seed}


@dataclass
class BoostedRanker:
    trees: list
    config: RankerConfig
    feature_names: list

    def to_json(self) -> str:
        return json.dumps({"format": RANKER_FORMAT, "config": self.config.to_dict(),
                           "feature_names": list(self.feature_names),
                           "trees": self.trees}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BoostedRanker":
        d = json.loads(text)
        if d.get("format") != RANKER_FORMAT:
            raise ValidationError(f"not a {RANKER_FORMAT} document")
        return cls(trees=d["trees"], config=RankerConfig(**d["config"]),
                   feature_names=d["feature_names"])


def _gain(rel):
    return 2.0 ** (np.asarray(rel, dtype=float) + 1.0)


def _group_lambdas(idx, X, rel, ids, scores, lambdas, weights):
    """Accumulate RankNet lambdas with |delta NDCG| weighting for one group.

    Pairs iterate in canonical id-sorted order so accumulation never depends
    on item order within the group.
    """
    g = _gain(rel)
    order = np.lexsort((ids, -scores))        # current ranking, ties by id
    pos = np.empty(len(idx), dtype=np.int64)
    pos[order] = np.arange(1, len(idx) + 1)
    discount = 1.0 / np.log2(1.0 + pos)
    ideal = np.sort(g)[::-1]
    idcg = float(np.sum(ideal / np.log2(2.0 + np.arange(len(idx)))))
    by_id = sorted(range(len(idx)), key=lambda a: ids[a])
    for ai in range(len(by_id)):
        for bi in range(ai + 1, len(by_id)):
            a, b = by_id[ai], by_id[bi]
            if rel[a] == rel[b]:
                continue
            hi, lo = (a, b) if rel[a] > rel[b] else (b, a)
            rho = 1.0 / (1.0 + np.exp(scores[hi] - scores[lo]))
            delta = abs(g[hi] - g[lo]) * abs(discount[hi] - discount[lo]) / idcg
            lambdas[idx[hi]] += rho * delta
            lambdas[idx[lo]] -= rho * delta
            w = rho * (1.0 - rho) * delta
            weights[idx[hi]] += w
            weights[idx[lo]] += w


def _newton_value(lam_sum, w_sum):
    return float(lam_sum / (w_sum + 1e-12))


def _grow_regression_tree(X, lam, wts, max_depth, min_leaf, depth=0):
    node = {"value": _newton_value(lam.sum(), wts.sum()), "n": int(len(lam))}
    if depth >= max_depth or len(lam) < 2 * min_leaf:
        return node
    n = len(lam)
    best = None   # (score, feature, threshold)
    target_mean = lam.mean()
    base_sse = float(np.sum((lam - target_mean) ** 2))
    for f in range(X.shape[1]):
        xs = X[:, f]
        order = np.argsort(xs, kind="stable")
        xs_sorted = xs[order]
        ls = lam[order]
        csum = np.cumsum(ls)
        csq = np.cumsum(ls ** 2)
        left_n = np.arange(1, n)
        boundary = xs_sorted[:-1] < xs_sorted[1:]
        valid = boundary & (left_n >= min_leaf) & (n - left_n >= min_leaf)
        if not np.any(valid):
            continue
        ls_tot, lsq_tot = csum[-1], csq[-1]
        lm = csum[:-1]
        lq = csq[:-1]
        rn = n - left_n
        sse = (lq - lm ** 2 / left_n) + ((lsq_tot - lq) - (ls_tot - lm) ** 2 / rn)
        gain = base_sse - np.where(valid, sse, np.inf)
        i = int(np.argmax(gain))
        if valid[i] and gain[i] > 1e-12:
            cand = (float(gain[i]), f, float(0.5 * (xs_sorted[i] + xs_sorted[i + 1])))
            if best is None or cand[0] > best[0] + 1e-12:
                best = cand
    if best is None:
        return node
    _, f, thr = best
    mask = X[:, f] <= thr
    node["feature"] = int(f)
    node["threshold"] = float(thr)
    node["left"] = _grow_regression_tree(X[mask], lam[mask], wts[mask],
                                         max_depth, min_leaf, depth + 1)
    node["right"] = _grow_regression_tree(X[~mask], lam[~mask], wts[~mask],
                                          max_depth, min_leaf, depth + 1)
    return node


def _tree_value(node, x):
    while "feature" in node:
        node = node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]
    return node["value"]


def fit_ranker(groups, cfg: RankerConfig | None = None,
               feature_names=None) -> BoostedRanker:
    """Boost regression trees on per-item lambda gradients."""
    cfg = cfg or RankerConfig()
    # canonical item order inside each group: makes the fit independent of
    # how callers happened to order the 8 panels
    groups = [RankGroup(group_id=g.group_id,
                        items=sorted(g.items, key=lambda it: it.embedding_id),
                        dataset_id=g.dataset_id) for g in groups]
    if not groups:
        raise ValidationError("no rank groups")
    X = np.vstack([it.features for grp in groups for it in grp.items]).astype(float)
    rel_all = [np.asarray([it.relevance for it in grp.items]) for grp in groups]
    ids_all = [[it.embedding_id for it in grp.items] for grp in groups]
    if not any(len(np.unique(r)) > 1 for r in rel_all):
        raise ValidationError("no decided pairs: all relevances equal everywhere")
    slices = []
    start = 0
    for grp in groups:
        slices.append(np.arange(start, start + len(grp.items)))
        start += len(grp.items)
    names = list(feature_names) if feature_names is not None \
        else [f"f{j}" for j in range(X.shape[1])]

    scores = np.zeros(len(X))
    trees = []
    for _ in range(cfg.n_trees):
        lambdas = np.zeros(len(X))
        weights = np.zeros(len(X))
        for gi, grp in enumerate(groups):
            idx = slices[gi]
            _group_lambdas(idx, X, rel_all[gi], ids_all[gi], scores[idx],
                           lambdas, weights)
        tree = _grow_regression_tree(X, lambdas, weights, cfg.max_depth, cfg.min_leaf)
        trees.append(tree)
        scores += cfg.learning_rate * np.array([_tree_value(tree, x) for x in X])
    return BoostedRanker(trees=trees, config=cfg, feature_names=names)


def score(r: BoostedRanker, mv) -> float:
    """Unbounded ranking score; higher is better."""
    x = np.asarray(mv, dtype=float)
    return float(sum(r.config.learning_rate * _tree_value(t, x) for t in r.trees))


def rank(r: BoostedRanker, items) -> list:
    """Order (embedding_id, features) pairs by descending score, ties by id.

    Returns [(embedding_id, score, rank)] with rank starting at 1.
    """
    scored = [(emb_id, score(r, mv)) for emb_id, mv in items]
    scored.sort(key=lambda t: (-t[1], t[0]))
    return [(emb_id, s, i + 1) for i, (emb_id, s) in enumerate(scored)]


def pairwise_accuracy(r: BoostedRanker, groups) -> float:
    """Fraction of decided intra-group pairs the scores order correctly."""
    hits, total = 0, 0
    for grp in groups:
        ss = [score(r, it.features) for it in grp.items]
        for a in range(len(grp.items)):
            for b in range(a + 1, len(grp.items)):
                ra, rb = grp.items[a].relevance, grp.items[b].relevance
                if ra == rb:
                    continue
                total += 1
                if (ss[a] - ss[b]) * (ra - rb) > 0:
                    hits += 1
    if total == 0:
        raise ValidationError("no decided pairs to score")
    return hits / total


def attribute(r: BoostedRanker, mv):
    """Tree-path contributions scaled by the learning rate; additive."""
    x = np.asarray(mv, dtype=float)
    F = len(r.feature_names)
    contrib = np.zeros(F)
    baseline = 0.0
    lr = r.config.learning_rate
    for t in r.trees:
        baseline += lr * t["value"]
        node = t
        while "feature" in node:
            nxt = node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]
            contrib[node["feature"]] += lr * (nxt["value"] - node["value"])
            node = nxt
    return {"baseline": baseline,
            "contributions": dict(zip(r.feature_names, contrib))}
