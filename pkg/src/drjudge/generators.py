"""Built-in 2D projection generators and diverse subset sampling.

Every generator is deterministic given its spec: stochastic techniques
(t-SNE, GRP) require a seed, eigen-based ones fix sign conventions. UMAP,
LLE, and friends are not built in; their embeddings enter through the
external-embedding CSV path instead.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path
from scipy.spatial.distance import squareform, pdist

from .data import Dataset, Embedding
from .errors import GraphError, NumericalError, ParameterError
from .hdld import _calibrate_rows

log = logging.getLogger(__name__)

GENERATOR_TECHNIQUES = ("PCA", "MDS-classical", "Isomap", "tSNE-exact", "GRP")
_EMBEDDING_TECHNIQUE = {"PCA": "PCA", "MDS-classical": "MDS", "Isomap": "Isomap",
                        "tSNE-exact": "tSNE", "GRP": "GRP"}
_REQUIRED_PARAMS = {
    "PCA": (),
    "MDS-classical": (),
    "Isomap": ("n_neighbors",),
    "tSNE-exact": ("perplexity", "iterations", "learning_rate", "seed"),
    "GRP": ("seed",),
}


@dataclass(frozen=True)
class GeneratorSpec:
    technique: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.technique not in GENERATOR_TECHNIQUES:
            raise ParameterError(f"unknown generator technique {self.technique!r}")
        missing = [p for p in _REQUIRED_PARAMS[self.technique] if p not in self.params]
        if missing:
            raise ParameterError(
                f"{self.technique} spec missing params: {', '.join(missing)}")

    def embedding_id(self, dataset_id: str) -> str:
        tail = "-".join(f"{k}={self.params[k]}" for k in sorted(self.params))
        return f"{dataset_id}:{self.technique}" + (f":{tail}" if tail else "")


def _fix_signs(Y: np.ndarray) -> np.ndarray:
    """Deterministic sign per column: largest-magnitude entry positive."""
    for c in range(Y.shape[1]):
        col = Y[:, c]
        if len(col) and col[np.argmax(np.abs(col))] < 0:
            Y[:, c] = -col
    return Y


def pca_2d(X: np.ndarray) -> np.ndarray:
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / max(1, len(X) - 1)
    vals, vecs = np.linalg.eigh(cov)
    top = vecs[:, np.argsort(vals)[::-1][:2]]
    if top.shape[1] < 2:
        top = np.hstack([top, np.zeros((top.shape[0], 2 - top.shape[1]))])
    return _fix_signs(Xc @ top)


def classical_mds_2d(dist: np.ndarray) -> np.ndarray:
    """Double-centered Gram eigendecomposition of a full distance matrix."""
    n = dist.shape[0]
    J = np.eye(n) - np.ones((n, n)) / n
    B = -0.5 * J @ (dist ** 2) @ J
    try:
        vals, vecs = np.linalg.eigh(B)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"MDS eigendecomposition failed: {exc}") from exc
    order = np.argsort(vals)[::-1]
    Y = np.zeros((n, 2))
    for c, i in enumerate(order[:2]):
        if vals[i] > 0:
            Y[:, c] = vecs[:, i] * np.sqrt(vals[i])
    return _fix_signs(Y)


def isomap_2d(X: np.ndarray, n_neighbors: int) -> np.ndarray:
    """Geodesic distances over the symmetrized kNN graph, then classical MDS."""
    n = len(X)
    if not 1 <= n_neighbors < n:
        raise ParameterError(f"n_neighbors must be in [1, {n - 1}]")
    d = squareform(pdist(X))
    np.fill_diagonal(d, np.inf)
    idx = np.argsort(d, axis=1, kind="stable")[:, :n_neighbors]
    rows = np.repeat(np.arange(n), n_neighbors)
    cols = idx.ravel()
    vals = d[rows, cols]
    graph = csr_matrix((vals, (rows, cols)), shape=(n, n))
    graph = graph.maximum(graph.T)   # symmetrize: union of directed kNN edges
    n_comp, _ = connected_components(graph, directed=False)
    if n_comp > 1:
        raise GraphError(f"Isomap neighborhood graph has {n_comp} components")
    geo = shortest_path(graph, method="D", directed=False)
    return classical_mds_2d(geo)


def grp_2d(X: np.ndarray, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    R = rng.standard_normal((X.shape[1], 2)) / np.sqrt(2.0)
    return X @ R


def tsne_exact(X: np.ndarray, perplexity: float, iterations: int = 500,
               learning_rate: float = 200.0, seed: int = 0,
               early_exaggeration: float = 4.0, exaggeration_iters: int = 100):
    """Exact (quadratic) t-SNE gradient descent.

    Returns (coords, kl_trace); the trace holds the KL objective per
    iteration, with the exaggerated target during the early phase.
    """
    n = len(X)
    if not 1 <= perplexity < n:
        raise ParameterError(f"perplexity must be in [1, {n})")
    if iterations < 1:
        raise ParameterError("iterations must be >= 1")
    d2 = squareform(pdist(X)) ** 2
    np.fill_diagonal(d2, np.inf)
    beta = _calibrate_rows(d2, perplexity)
    logits = -beta[:, None] * d2
    logits -= logits.max(axis=1, keepdims=True)
    P_cond = np.exp(logits)
    np.fill_diagonal(P_cond, 0.0)
    P_cond /= P_cond.sum(axis=1, keepdims=True)
    P = (P_cond + P_cond.T) / (2.0 * n)
    P = np.maximum(P, 1e-12)

    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((n, 2)) * 1e-4
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    trace = np.empty(iterations)
    for t in range(iterations):
        P_eff = P * early_exaggeration if t < exaggeration_iters else P
        yd2 = squareform(pdist(Y)) ** 2
        num = 1.0 / (1.0 + yd2)
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), 1e-12)
        PQ = (P_eff - Q) * num
        grad = 4.0 * (np.diag(PQ.sum(axis=1)) - PQ) @ Y
        momentum = 0.5 if t < 250 else 0.8
        same_sign = np.sign(grad) == np.sign(update)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, 0.01)
        update = momentum * update - learning_rate * gains * grad
        Y = Y + update
        Y = Y - Y.mean(axis=0)
        trace[t] = float(np.sum(P_eff * np.log(P_eff / Q)))
    return Y, trace


def generate(ds: Dataset, spec: GeneratorSpec) -> Embedding:
    """Run one generator spec against a dataset."""
    X = ds.points
    p = spec.params
    if spec.technique == "PCA":
        Y = pca_2d(X)
    elif spec.technique == "MDS-classical":
        Y = classical_mds_2d(squareform(pdist(X)))
    elif spec.technique == "Isomap":
        Y = isomap_2d(X, int(p["n_neighbors"]))
    elif spec.technique == "tSNE-exact":
        Y, trace = tsne_exact(X, float(p["perplexity"]), int(p["iterations"]),
                              float(p["learning_rate"]), int(p["seed"]))
        tail = trace[-min(50, len(trace)):]
        if np.any(np.diff(tail) > 1e-6):
            log.warning("t-SNE KL objective increased within the last 50 "
                        "iterations on dataset %s (max rise %.3g)",
                        ds.id, float(np.diff(tail).max()))
    else:   # GRP
        Y = grp_2d(X, int(p["seed"]))
    if not np.all(np.isfinite(Y)):
        raise NumericalError(f"{spec.technique} produced non-finite coordinates")
    return Embedding(dataset_id=ds.id, coords=Y,
                     technique=_EMBEDDING_TECHNIQUE[spec.technique],
                     params=dict(p), id=spec.embedding_id(ds.id))


def sample_diverse(embs: list, vectors: np.ndarray, m: int) -> list:
    """Farthest-point sampling in metric space, seeded at the medoid.

    vectors holds one (normalized) metric row per embedding. Returns the
    selected embeddings in their original input order.
    """
    if len(embs) == 0:
        raise ParameterError("sample_diverse needs at least one embedding")
    vectors = np.asarray(vectors, dtype=float)
    if vectors.shape[0] != len(embs):
        raise ParameterError("one metric vector per embedding required")
    if not 1 <= m <= len(embs):
        raise ParameterError(f"m must be in [1, {len(embs)}]")
    d = squareform(pdist(vectors))
    selected = [int(np.argmin(d.sum(axis=1)))]   # medoid; argmin ties to low index
    min_dist = d[selected[0]].copy()
    min_dist[selected[0]] = -1.0
    while len(selected) < m:
        nxt = int(np.argmax(min_dist))
        selected.append(nxt)
        min_dist = np.minimum(min_dist, d[nxt])
        min_dist[nxt] = -1.0
    chosen = sorted(selected)
    return [embs[i] for i in chosen]
