"""Label-supervised cluster-separability metrics over 2D layouts.

All six metrics read a LabeledScatter; none look at the HD space. Metrics
whose preconditions fail (singleton classes, collapsed clusters) raise
UndefinedMetricError so callers can mark the value absent instead of zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import squareform, pdist

from .errors import ParameterError, UndefinedMetricError


@dataclass(frozen=True)
class LabeledScatter:
    """2D points with class ids and per-class centroids."""

    Y: np.ndarray          # (n, 2)
    clabel: np.ndarray     # (n,) int class ids 0..C-1
    centroids: np.ndarray  # (C, 2)

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def n_classes(self) -> int:
        return self.centroids.shape[0]


def labeled_scatter(Y: np.ndarray, clabel: np.ndarray) -> LabeledScatter:
    Y = np.asarray(Y, dtype=float)
    clabel = np.asarray(clabel, dtype=int)
    if Y.ndim != 2 or Y.shape[1] != 2:
        raise ParameterError(f"Y must be n x 2, got {Y.shape}")
    if clabel.shape != (Y.shape[0],):
        raise ParameterError("clabel must assign one class per point")
    n_classes = int(clabel.max()) + 1
    counts = np.bincount(clabel, minlength=n_classes)
    if np.any(counts == 0):
        raise ParameterError("every class id in [0, C) must have a member")
    cent = np.vstack([Y[clabel == c].mean(axis=0) for c in range(n_classes)])
    return LabeledScatter(Y=Y, clabel=clabel, centroids=cent)


@dataclass(frozen=True)
class CalDecomposition:
    """Audit trail of the Calinski-Harabasz computation."""

    wg: float
    bg: float
    a_k: float
    dbar2: float              # mean squared pairwise distance
    dbar2_c: np.ndarray       # per-class mean squared within-class distance
    n_c: np.ndarray           # per-class counts


def dsc(ls: LabeledScatter) -> float:
    """Distance consistency: fraction of points nearest their own centroid.

    Nearest centroid by Euclidean distance, ties to the lower class index.
    Higher means better separated.
    """
    if ls.n_classes < 2:
        raise ParameterError("distance consistency needs at least 2 classes")
    d = np.linalg.norm(ls.Y[:, None, :] - ls.centroids[None, :, :], axis=2)
    nearest = np.argmin(d, axis=1)   # argmin takes the first (lowest) index on ties
    return float(np.mean(nearest == ls.clabel))


def _within_between_masks(ls: LabeledScatter):
    same = ls.clabel[:, None] == ls.clabel[None, :]
    iu = np.triu_indices(ls.n, k=1)
    return same[iu], squareform(pdist(ls.Y))[iu]


def abw(ls: LabeledScatter) -> float:
    """Mean between-class pairwise distance over mean within-class distance."""
    same, dist = _within_between_masks(ls)
    if not np.any(same):
        raise UndefinedMetricError("ABW needs at least one within-class pair")
    if not np.any(~same):
        raise ParameterError("ABW needs at least one between-class pair")
    within = float(np.mean(dist[same]))
    if within == 0.0:
        raise UndefinedMetricError("ABW undefined: all within-class pairs coincide")
    return float(np.mean(dist[~same])) / within


def hypothesis_margin(ls: LabeledScatter) -> float:
    """Sum over points of half the nearmiss-minus-nearhit distance gap."""
    if ls.n_classes < 2:
        raise ParameterError("hypothesis margin needs at least 2 classes")
    counts = np.bincount(ls.clabel, minlength=ls.n_classes)
    if np.any(counts < 2):
        raise UndefinedMetricError(
            "hypothesis margin undefined: a class has a single member")
    d = squareform(pdist(ls.Y))
    np.fill_diagonal(d, np.inf)
    same = ls.clabel[:, None] == ls.clabel[None, :]
    nearhit = np.min(np.where(same, d, np.inf), axis=1)
    nearmiss = np.min(np.where(~same, d, np.inf), axis=1)
    return float(0.5 * np.sum(nearmiss - nearhit))


def neighborhood_hit(ls: LabeledScatter, k: int = 5) -> float:
    """Mean fraction of each point's k nearest neighbors sharing its label."""
    n = ls.n
    if not 1 <= k <= n - 1:
        raise ParameterError(f"k must be in [1, {n - 1}], got {k}")
    d = squareform(pdist(ls.Y))
    np.fill_diagonal(d, -1.0)    # self first, excluded below
    idx = np.tile(np.arange(n), (n, 1))
    order = np.lexsort((idx, d), axis=1)
    knn = order[:, 1:k + 1]
    hits = ls.clabel[knn] == ls.clabel[:, None]
    return float(np.mean(hits))


def calinski_harabasz(ls: LabeledScatter):
    """Calinski-Harabasz index from mean squared pairwise distances.

    Returns (score, decomposition). The score equals both the BG/WG form
    and the equivalent expression in dbar2 and A_k; the decomposition keeps
    every intermediate so the identity can be audited.
    """
    n, C = ls.n, ls.n_classes
    if C < 2:
        raise ParameterError("Calinski-Harabasz needs at least 2 classes")
    if n <= C:
        raise ParameterError("Calinski-Harabasz needs n > C")
    d2 = squareform(pdist(ls.Y)) ** 2
    iu = np.triu_indices(n, k=1)
    dbar2 = float(np.mean(d2[iu]))
    n_c = np.bincount(ls.clabel, minlength=C)
    dbar2_c = np.zeros(C)
    for c in range(C):
        members = np.nonzero(ls.clabel == c)[0]
        if len(members) >= 2:
            sub = d2[np.ix_(members, members)]
            dbar2_c[c] = float(np.sum(sub) / (len(members) * (len(members) - 1)))
    wg = 0.5 * float(np.sum((n_c - 1) * dbar2_c))
    a_k = float(np.sum((n_c - 1) * (dbar2 - dbar2_c)) / (n - C))
    bg = 0.5 * ((C - 1) * dbar2 + (n - C) * a_k)
    if wg == 0.0:
        raise UndefinedMetricError(
            "Calinski-Harabasz undefined: all classes collapsed to points")
    score = (bg / (C - 1)) / (wg / (n - C))
    return score, CalDecomposition(wg=wg, bg=bg, a_k=a_k, dbar2=dbar2,
                                   dbar2_c=dbar2_c, n_c=n_c)


def silhouette(ls: LabeledScatter) -> float:
    """Mean silhouette coefficient over all points, in [-1, 1]."""
    if ls.n_classes < 2:
        raise ParameterError("silhouette needs at least 2 classes")
    counts = np.bincount(ls.clabel, minlength=ls.n_classes)
    if np.any(counts < 2):
        raise UndefinedMetricError("silhouette undefined: singleton class")
    d = squareform(pdist(ls.Y))
    n, C = ls.n, ls.n_classes
    # mean distance from each point to each class (self excluded for own class)
    class_sums = np.zeros((n, C))
    for c in range(C):
        class_sums[:, c] = d[:, ls.clabel == c].sum(axis=1)
    own = ls.clabel
    a = class_sums[np.arange(n), own] / (counts[own] - 1)
    mean_other = class_sums / counts[None, :]
    mean_other[np.arange(n), own] = np.inf
    b = mean_other.min(axis=1)
    s = (b - a) / np.maximum(a, b)
    s[np.maximum(a, b) == 0.0] = 0.0
    return float(np.mean(s))
