"""Projections-of-projections: lay out embeddings by their metric vectors.

The metamap positions each embedding in 2D using its metric vector and
overlays the ranker score as an interpolated field, so neighborhoods of
good and bad projections become visible at a glance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import squareform, pdist

from .errors import ParameterError
from .generators import GeneratorSpec, classical_mds_2d, tsne_exact

IDW_POWER = 2
IDW_EPSILON = 1e-9


@dataclass
class Metamap:
    embedding_ids: list
    points: np.ndarray        # (m, 2)
    scores: np.ndarray        # (m,)
    grid: np.ndarray          # (g, g) interpolated score field
    bbox: tuple               # (xmin, xmax, ymin, ymax)
    technique_used: GeneratorSpec

    def to_json(self) -> str:
        return json.dumps({
            "embedding_ids": list(self.embedding_ids),
            "points": [[float(x), float(y)] for x, y in self.points],
            "scores": [float(s) for s in self.scores],
            "grid": [[float(v) for v in row] for row in self.grid],
            "bbox": [float(v) for v in self.bbox],
            "technique": {"technique": self.technique_used.technique,
                          "params": self.technique_used.params},
        }, sort_keys=True)


def _idw_grid(points, scores, bbox, g):
    xmin, xmax, ymin, ymax = bbox
    xs = np.linspace(xmin, xmax, g)
    ys = np.linspace(ymin, ymax, g)
    gx, gy = np.meshgrid(xs, ys)
    cells = np.column_stack([gx.ravel(), gy.ravel()])
    d2 = ((cells[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
    w = 1.0 / (d2 ** (IDW_POWER / 2) + IDW_EPSILON)
    field = (w @ scores) / w.sum(axis=1)
    return field.reshape(g, g)


def build_metamap(vectors: np.ndarray, scores, embedding_ids=None,
                  spec: GeneratorSpec | None = None, g: int = 40) -> Metamap:
    """Lay out metric vectors in 2D and interpolate the score field.

    vectors is the (m, F) normalized metric matrix (NaN entries are filled
    with the column median before the layout). Default layout is classical
    MDS; a seeded exact t-SNE spec can be passed instead.
    """
    vectors = np.asarray(vectors, dtype=float)
    scores = np.asarray(scores, dtype=float)
    if vectors.ndim != 2 or len(vectors) < 3:
        raise ParameterError("metamap needs at least 3 embeddings")
    if len(scores) != len(vectors):
        raise ParameterError("one score per embedding required")
    if embedding_ids is None:
        embedding_ids = [f"e{i}" for i in range(len(vectors))]

    V = vectors.copy()
    for j in range(V.shape[1]):
        col = V[:, j]
        if np.any(np.isnan(col)):
            present = col[~np.isnan(col)]
            col[np.isnan(col)] = float(np.median(present)) if len(present) else 0.5
    spec = spec or GeneratorSpec("MDS-classical")
    if spec.technique == "MDS-classical":
        points = classical_mds_2d(squareform(pdist(V)))
    elif spec.technique == "tSNE-exact":
        p = spec.params
        points, _ = tsne_exact(V, float(p["perplexity"]), int(p["iterations"]),
                               float(p["learning_rate"]), int(p["seed"]))
    else:
        raise ParameterError(
            f"metamap layout supports MDS-classical or tSNE-exact, "
            f"got {spec.technique!r}")

    xmin, xmax = float(points[:, 0].min()), float(points[:, 0].max())
    ymin, ymax = float(points[:, 1].min()), float(points[:, 1].max())
    if xmax == xmin:
        xmin, xmax = xmin - 0.5, xmax + 0.5
    if ymax == ymin:
        ymin, ymax = ymin - 0.5, ymax + 0.5
    bbox = (xmin, xmax, ymin, ymax)
    grid = _idw_grid(points, scores, bbox, g)
    return Metamap(embedding_ids=list(embedding_ids), points=points,
                   scores=scores, grid=grid, bbox=bbox, technique_used=spec)
