"""Graph-theoretic scatterplot diagnostics over 2D coordinates.

The pipeline normalizes points to the unit square, optionally hex-bins large
plots, builds the Euclidean MST, convex hull, and an alpha shape with alpha
set to the MST outlier cutoff, then derives the nine classic measures:
Outlying, Skewed, Clumpy, Sparse, Striated, Convex, Skinny, Stringy,
Monotonic. Degenerate geometry resolves by limit conventions (Skinny = 1,
Convex = 0) instead of crashing, because pathological embeddings do occur.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import squareform, pdist
from scipy.stats import spearmanr

from .errors import DataError, ParameterError

BIN_THRESHOLD = 250
DEFAULT_BINS = 40

SCAG_NAMES = ("outlying", "skewed", "clumpy", "sparse", "striated",
              "convex", "skinny", "stringy", "monotonic")


@dataclass(frozen=True)
class ScagGeometry:
    points: np.ndarray          # (m, 2) normalized, binned when n > threshold
    counts: np.ndarray          # (m,) multiplicity of each kept point
    mst_edges: np.ndarray       # (m-1, 2) vertex index pairs
    mst_weights: np.ndarray     # (m-1,)
    hull: np.ndarray            # hull vertex indices, ccw
    hull_area: float
    alpha_triangles: np.ndarray  # (t, 3) kept Delaunay simplices
    alpha_area: float
    alpha_perimeter: float
    omega: float                # MST edge-weight outlier cutoff

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


def _normalize_unit_square(coords: np.ndarray) -> np.ndarray:
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    span = hi - lo
    if np.all(span == 0):
        raise DataError("degenerate plot: all points coincident")
    out = np.empty_like(coords, dtype=float)
    for a in range(2):
        if span[a] == 0:
            out[:, a] = 0.5
        else:
            out[:, a] = (coords[:, a] - lo[a]) / span[a]
    return out


def _hex_bin(pts: np.ndarray, bins: int):
    """Snap points to a hex lattice of at most bins x bins cells."""
    h = 1.0 / (bins - 1)                  # row spacing
    w = 2.0 / (np.sqrt(3.0) * (bins - 1))  # column spacing
    best_d = np.full(len(pts), np.inf)
    best_key = np.zeros((len(pts), 2), dtype=np.int64)
    r0 = np.floor(pts[:, 1] / h).astype(np.int64)
    for dr in (0, 1):
        r = r0 + dr
        offset = np.where(r % 2 == 1, 0.5 * w, 0.0)
        c = np.round((pts[:, 0] - offset) / w).astype(np.int64)
        cx = c * w + offset
        cy = r * h
        d = (pts[:, 0] - cx) ** 2 + (pts[:, 1] - cy) ** 2
        take = d < best_d
        best_d[take] = d[take]
        best_key[take, 0] = r[take]
        best_key[take, 1] = c[take]
    keys, inverse, counts = np.unique(best_key, axis=0,
                                      return_inverse=True, return_counts=True)
    offset = np.where(keys[:, 0] % 2 == 1, 0.5 * w, 0.0)
    centers = np.column_stack([keys[:, 1] * w + offset, keys[:, 0] * h])
    return centers, counts


def _prim_mst(pts: np.ndarray):
    """Euclidean MST on the complete graph; ties resolve to lower index."""
    m = len(pts)
    if m < 2:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0)
    d = squareform(pdist(pts))
    in_tree = np.zeros(m, dtype=bool)
    in_tree[0] = True
    best = d[0].copy()
    best[0] = np.inf
    best_from = np.zeros(m, dtype=np.int64)
    edges = np.empty((m - 1, 2), dtype=np.int64)
    weights = np.empty(m - 1)
    for t in range(m - 1):
        j = int(np.argmin(best))
        edges[t] = (best_from[j], j)
        weights[t] = best[j]
        in_tree[j] = True
        best[j] = np.inf
        upd = (~in_tree) & (d[j] < best)
        best[upd] = d[j][upd]
        best_from[upd] = j
    return edges, weights


def _convex_hull(pts: np.ndarray) -> np.ndarray:
    """Andrew monotone chain; returns hull vertex indices in ccw order."""
    order = np.lexsort((pts[:, 1], pts[:, 0]))

    def cross(o, a, b):
        return ((pts[a, 0] - pts[o, 0]) * (pts[b, 1] - pts[o, 1])
                - (pts[a, 1] - pts[o, 1]) * (pts[b, 0] - pts[o, 0]))

    lower: list[int] = []
    for i in order:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], i) <= 0:
            lower.pop()
        lower.append(int(i))
    upper: list[int] = []
    for i in order[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], i) <= 0:
            upper.pop()
        upper.append(int(i))
    return np.asarray(lower[:-1] + upper[:-1], dtype=np.int64)


def _polygon_area(pts: np.ndarray) -> float:
    if len(pts) < 3:
        return 0.0
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _alpha_shape(pts: np.ndarray, alpha: float):
    """Triangles of the Delaunay complex with circumradius <= alpha.

    Returns (triangles, area, perimeter); empty when the triangulation is
    degenerate or nothing passes the radius filter.
    """
    empty = np.zeros((0, 3), dtype=np.int64)
    if len(pts) < 3 or alpha <= 0:
        return empty, 0.0, 0.0
    try:
        from scipy.spatial import Delaunay, QhullError
        tri = Delaunay(pts)
    except (QhullError, ValueError):
        return empty, 0.0, 0.0
    simplices = tri.simplices
    a = pts[simplices[:, 0]]
    b = pts[simplices[:, 1]]
    c = pts[simplices[:, 2]]
    la = np.linalg.norm(b - c, axis=1)
    lb = np.linalg.norm(a - c, axis=1)
    lc = np.linalg.norm(a - b, axis=1)
    area2 = np.abs((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                   - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
    with np.errstate(divide="ignore", invalid="ignore"):
        circumradius = np.where(area2 > 0, la * lb * lc / (2.0 * area2), np.inf)
    keep = circumradius <= alpha
    kept = simplices[keep]
    if len(kept) == 0:
        return empty, 0.0, 0.0
    area = float(np.sum(area2[keep]) / 2.0)
    edge_count: dict[tuple[int, int], int] = {}
    for s in kept:
        for u, v in ((s[0], s[1]), (s[1], s[2]), (s[0], s[2])):
            key = (int(min(u, v)), int(max(u, v)))
            edge_count[key] = edge_count.get(key, 0) + 1
    boundary = [e for e, cnt in edge_count.items() if cnt == 1]
    perimeter = float(sum(np.linalg.norm(pts[u] - pts[v]) for u, v in boundary))
    return kept, area, perimeter


def scag_geometry(coords: np.ndarray, bins: int = DEFAULT_BINS) -> ScagGeometry:
    """Normalize, bin, and build the MST/hull/alpha-shape geometry."""
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ParameterError(f"coords must be n x 2, got {coords.shape}")
    if len(coords) < 3:
        raise ParameterError("scagnostics need at least 3 points")
    pts = _normalize_unit_square(coords)
    if len(pts) > BIN_THRESHOLD:
        level = bins
        pts_b, counts = _hex_bin(pts, level)
        while len(pts_b) > BIN_THRESHOLD and level > 4:
            level = max(4, level // 2)    # coarsen until occupancy is dense
            pts_b, counts = _hex_bin(pts, level)
        pts = pts_b
    else:
        counts = np.ones(len(pts), dtype=np.int64)
    edges, weights = _prim_mst(pts)
    if len(weights):
        q25, q75 = np.percentile(weights, [25, 75])
        omega = float(q75 + 1.5 * (q75 - q25))
    else:
        omega = 0.0
    hull = _convex_hull(pts)
    hull_area = _polygon_area(pts[hull])
    alpha_tris, alpha_area, alpha_perim = _alpha_shape(pts, omega)
    return ScagGeometry(points=pts, counts=counts, mst_edges=edges,
                        mst_weights=weights, hull=hull, hull_area=hull_area,
                        alpha_triangles=alpha_tris, alpha_area=alpha_area,
                        alpha_perimeter=alpha_perim, omega=omega)


def _mst_adjacency(geom: ScagGeometry):
    adj: list[list[tuple[int, float]]] = [[] for _ in range(geom.n_points)]
    for (u, v), w in zip(geom.mst_edges, geom.mst_weights):
        adj[int(u)].append((int(v), float(w)))
        adj[int(v)].append((int(u), float(w)))
    return adj


def _tree_diameter(adj) -> float:
    """Weighted diameter of a tree via the double-sweep farthest search."""
    def farthest(src):
        dist = {src: 0.0}
        stack = [src]
        far, far_d = src, 0.0
        while stack:
            u = stack.pop()
            for v, w in adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + w
                    if dist[v] > far_d:
                        far, far_d = v, dist[v]
                    stack.append(v)
        return far, far_d

    u, _ = farthest(0)
    _, d = farthest(u)
    return d


class _UnionFind:
    def __init__(self, m):
        self.parent = list(range(m))
        self.size = [1] * m
        self.max_edge = [0.0] * m

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b, w):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        self.max_edge[ra] = max(self.max_edge[ra], self.max_edge[rb], w)


def _clumpy(geom: ScagGeometry) -> float:
    """Runt statistic: a big edge whose smaller side is internally tight.

    Processes MST edges in ascending weight; at each weight level the
    union-find components are exactly the clusters joined by strictly
    shorter edges. Candidates weight the tightness 1 - maxruntedge/w by the
    runt's share of all vertices, so an isolated close pair in otherwise
    uniform data does not read as a cluster.
    """
    m = geom.n_points
    if len(geom.mst_weights) == 0:
        return 0.0
    order = np.argsort(geom.mst_weights, kind="stable")
    uf = _UnionFind(m)
    best = 0.0
    i = 0
    while i < len(order):
        j = i
        w = geom.mst_weights[order[i]]
        while j < len(order) and geom.mst_weights[order[j]] == w:
            j += 1
        group = order[i:j]
        if w > 0:
            for e in group:
                u, v = geom.mst_edges[e]
                ru, rv = uf.find(int(u)), uf.find(int(v))
                runt = ru if uf.size[ru] <= uf.size[rv] else rv
                if uf.size[runt] >= 2:
                    tightness = 1.0 - uf.max_edge[runt] / w
                    best = max(best, 2.0 * uf.size[runt] * tightness / m)
        for e in group:
            u, v = geom.mst_edges[e]
            uf.union(int(u), int(v), float(geom.mst_weights[e]))
        i = j
    return best


def scagnostics(geom: ScagGeometry, coords: np.ndarray) -> dict[str, float]:
    """The nine diagnostics, each clamped to [0, 1]."""
    weights = geom.mst_weights
    total = float(np.sum(weights))
    values: dict[str, float] = {}

    # outlying: long edges hanging off leaves; the relative epsilon keeps
    # float noise in equal-length grids from reading as exceedance
    if total > 0:
        deg = np.bincount(geom.mst_edges.ravel(), minlength=geom.n_points)
        leaf_edge = (deg[geom.mst_edges[:, 0]] == 1) | (deg[geom.mst_edges[:, 1]] == 1)
        exceeds = weights > geom.omega * (1.0 + 1e-12)
        values["outlying"] = float(np.sum(weights[exceeds & leaf_edge])) / total
    else:
        values["outlying"] = 0.0

    if len(weights):
        q10, q50, q90 = np.percentile(weights, [10, 50, 90])
        spread = q90 - q10
        if spread > 1e-9 * max(q90, 1e-30):
            values["skewed"] = (q90 - q50) / spread
        else:
            values["skewed"] = 0.0
        values["sparse"] = min(1.0, float(q90))
    else:
        values["skewed"] = 0.0
        values["sparse"] = 0.0

    values["clumpy"] = _clumpy(geom)

    # striated: degree-2 vertices whose two edges are nearly collinear
    adj = _mst_adjacency(geom)
    striated_count = 0
    for v, nbrs in enumerate(adj):
        if len(nbrs) != 2:
            continue
        e1 = geom.points[nbrs[0][0]] - geom.points[v]
        e2 = geom.points[nbrs[1][0]] - geom.points[v]
        denom = np.linalg.norm(e1) * np.linalg.norm(e2)
        if denom > 0 and float(np.dot(e1, e2)) / denom < -0.75:
            striated_count += 1
    values["striated"] = striated_count / geom.n_points

    if geom.alpha_area > 0 and geom.alpha_perimeter > 0:
        values["skinny"] = 1.0 - np.sqrt(4.0 * np.pi * geom.alpha_area) / geom.alpha_perimeter
        values["convex"] = (geom.alpha_area / geom.hull_area
                            if geom.hull_area > 0 else 0.0)
    else:
        values["skinny"] = 1.0   # zero-area limit
        values["convex"] = 0.0

    values["stringy"] = _tree_diameter(adj) / total if total > 0 else 0.0

    rho = spearmanr(coords[:, 0], coords[:, 1]).statistic
    values["monotonic"] = 0.0 if np.isnan(rho) else float(rho) ** 2

    return {k: float(np.clip(v, 0.0, 1.0)) for k, v in values.items()}
