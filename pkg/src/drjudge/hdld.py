"""HD-to-LD accuracy metrics.

All functions consume a precomputed DistanceRankModel (and, for the fixed-k
metrics, a NeighborhoodPair) and return plain floats. Higher is better for
everything except the three stress measures, where 0 means perfect.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import DistanceRankModel, NeighborhoodPair
from .errors import DataError, NumericalError, ParameterError


def default_k(n: int) -> int:
    """Fixed neighborhood size used for LCMC/T/C when none is configured."""
    return max(1, min(7, (n - 1) // 2 - 1))


@dataclass(frozen=True)
class CoRankingCurves:
    """Q_NX(k) and R_NX(k) for k = 1..n-2."""

    q_nx: np.ndarray
    r_nx: np.ndarray


@dataclass(frozen=True)
class NervConfig:
    perplexity: float = 5.0
    combine: str = "mean"


def shared_neighbor_count(nb: NeighborhoodPair) -> float:
    """Mean over points of |nu ∩ rho|, the raw local-overlap score in [0, k]."""
    n = len(nb.nu)
    total = sum(len(np.intersect1d(nb.nu[i], nb.rho[i], assume_unique=True))
                for i in range(n))
    return total / n


def lcmc(nb: NeighborhoodPair) -> float:
    """Local continuity meta-criterion, normalized by k into [0, 1]."""
    return shared_neighbor_count(nb) / nb.k


def _tc_normalizer(n: int, k: int) -> float:
    if k >= n / 2:
        raise ParameterError(f"neighborhood size k={k} must be < n/2 = {n / 2}")
    return 2.0 / (n * k * (2 * n - 3 * k - 1))


def trustworthiness(drm: DistanceRankModel, nb: NeighborhoodPair) -> float:
    """Penalizes LD neighbors that are not HD neighbors, weighted by HD rank.

    1.0 means every LD neighborhood is free of intruders.
    """
    n, k = drm.n, nb.k
    norm = _tc_normalizer(n, k)
    acc = 0
    for i in range(n):
        if len(nb.U[i]):
            acc += int(np.sum(drm.r_hd[i, nb.U[i]] - k))
    return 1.0 - norm * acc


def continuity(drm: DistanceRankModel, nb: NeighborhoodPair) -> float:
    """Penalizes HD neighbors missing from the LD neighborhood, by LD rank."""
    n, k = drm.n, nb.k
    norm = _tc_normalizer(n, k)
    acc = 0
    for i in range(n):
        if len(nb.V[i]):
            acc += int(np.sum(drm.r_ld[i, nb.V[i]] - k))
    return 1.0 - norm * acc


def coranking_curves(drm: DistanceRankModel) -> CoRankingCurves:
    """Q_NX and its random-baseline-adjusted form R_NX over all k = 1..n-2."""
    n = drm.n
    if n < 4:
        raise ParameterError("co-ranking curves need n >= 4")
    off = ~np.eye(n, dtype=bool)
    p = drm.r_hd[off] - 1          # 0..n-2
    q = drm.r_ld[off] - 1
    hist = np.bincount(p * (n - 1) + q, minlength=(n - 1) ** 2)
    hist = hist.reshape(n - 1, n - 1).astype(float)
    cum = hist.cumsum(axis=0).cumsum(axis=1)
    ks = np.arange(1, n - 1)
    q_nx = cum[ks - 1, ks - 1] / (n * ks)
    r_nx = ((n - 1) * q_nx - ks) / (n - 1 - ks)
    return CoRankingCurves(q_nx=q_nx, r_nx=r_nx)


def auc_log_rnx(curves: CoRankingCurves) -> float:
    """Log-weighted average of R_NX, emphasizing small neighborhoods."""
    ks = np.arange(1, len(curves.r_nx) + 1)
    return float(np.sum(curves.r_nx / ks) / np.sum(1.0 / ks))


# ---------------------------------------------------------------------------
# stress measures

def _pairs(drm: DistanceRankModel):
    iu = np.triu_indices(drm.n, k=1)
    return drm.d_hd[iu], drm.d_ld[iu]


def _pav(y: np.ndarray) -> np.ndarray:
    """Pool-adjacent-violators: least-squares nondecreasing fit of y."""
    sums: list[float] = []
    counts: list[int] = []
    for v in y:
        s, c = float(v), 1
        while sums and sums[-1] * c > s * counts[-1]:   # prev mean > cur mean
            s += sums.pop()
            c += counts.pop()
        sums.append(s)
        counts.append(c)
    out = np.empty(len(y))
    pos = 0
    for s, c in zip(sums, counts):
        out[pos:pos + c] = s / c
        pos += c
    return out


def kruskal_stress(drm: DistanceRankModel) -> float:
    """Nonmetric stress-1: LD distances against a monotone fit in HD order.

    Disparities come from isotonic regression of d_ld over pairs sorted by
    (d_hd, d_ld); the secondary key unties equal HD distances the favorable
    way, which keeps exact isometries at stress 0.
    """
    dh, dl = _pairs(drm)
    denom = float(np.sum(dl ** 2))
    if denom == 0.0:
        raise DataError("all LD distances are zero: degenerate embedding")
    order = np.lexsort((dl, dh))
    y = dl[order]
    fit = _pav(y)
    return float(np.sqrt(np.sum((y - fit) ** 2) / denom))


def sammon_stress(drm: DistanceRankModel) -> float:
    """Sammon's mapping stress; pairs with zero HD distance are excluded."""
    dh, dl = _pairs(drm)
    mask = dh > 0
    excluded = int(np.sum(~mask))
    if excluded:
        warnings.warn(f"sammon_stress: excluded {excluded} zero-HD-distance pairs")
    c = float(np.sum(dh[mask]))
    if c == 0.0:
        raise DataError("all HD distances are zero: degenerate dataset")
    return float(np.sum((dh[mask] - dl[mask]) ** 2 / dh[mask]) / c)


def cca_stress(drm: DistanceRankModel, lambda_radius: float | None = None) -> float:
    """Curvilinear-component stress with a hard LD-ball weighting.

    Only pairs with d_ld < lambda_radius contribute; the sum is normalized
    by the total pair count. Default radius is the median LD distance.
    """
    dh, dl = _pairs(drm)
    if lambda_radius is None:
        lambda_radius = float(np.median(dl))
    inside = dl < lambda_radius
    return float(np.sum((dh[inside] - dl[inside]) ** 2) / len(dh))


def distance_correlation(drm: DistanceRankModel) -> float:
    """Pearson correlation between HD and LD pairwise-distance vectors.

    If both vectors are constant the spaces agree trivially (1.0); if only
    one is constant there is no measurable association (0.0).
    """
    dh, dl = _pairs(drm)
    sh, sl = float(np.std(dh)), float(np.std(dl))
    if sh == 0.0 and sl == 0.0:
        return 1.0
    if sh == 0.0 or sl == 0.0:
        return 0.0
    return float(np.corrcoef(dh, dl)[0, 1])


# ---------------------------------------------------------------------------
# NeRV

_BETA_LO = 1e-12
_BETA_HI = 1e12
_ENTROPY_TOL = 1e-5
_MAX_BISECT = 64


def _calibrate_rows(d2: np.ndarray, perplexity: float) -> np.ndarray:
    """Per-row Gaussian precisions beta with neighbor entropy = ln(perplexity).

    d2 holds squared distances with an inf diagonal (self excluded). Runs a
    bisection on every row simultaneously; rows that fail to reach the
    entropy tolerance within the iteration cap raise NumericalError.
    """
    n = d2.shape[0]
    target = np.log(perplexity)

    def entropies(beta):
        logits = -beta[:, None] * d2
        m = logits.max(axis=1, keepdims=True)
        z = np.exp(logits - m)
        z_sum = z.sum(axis=1)
        log_z = np.log(z_sum) + m[:, 0]
        # H = log Z + beta * E[d2]
        e_d2 = np.where(np.isfinite(d2), d2, 0.0)
        mean_d2 = (z * e_d2).sum(axis=1) / z_sum
        return log_z + beta * mean_d2

    lo = np.full(n, _BETA_LO)
    hi = np.full(n, _BETA_HI)
    beta = np.sqrt(lo * hi)
    h = entropies(beta)
    for _ in range(_MAX_BISECT):
        if np.all(np.abs(h - target) <= _ENTROPY_TOL):
            break
        too_low_beta = h > target      # entropy too high -> raise beta
        lo = np.where(too_low_beta, beta, lo)
        hi = np.where(too_low_beta, hi, beta)
        beta = np.sqrt(lo * hi)
        h = entropies(beta)
    bad = np.abs(h - target) > _ENTROPY_TOL
    if np.any(bad):
        i = int(np.nonzero(bad)[0][0])
        raise NumericalError(
            f"NeRV bandwidth bisection did not converge for point {i} "
            f"(entropy {h[i]:.6f}, target {target:.6f})")
    return beta


def _log_neighbor_probs(dist: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Row-stochastic log-probabilities of a Gaussian neighbor distribution."""
    d2 = dist ** 2
    np.fill_diagonal(d2, np.inf)
    logits = -beta[:, None] * d2
    m = np.where(np.isfinite(logits), logits, -np.inf).max(axis=1, keepdims=True)
    log_z = np.log(np.exp(logits - m).sum(axis=1, keepdims=True)) + m
    return logits - log_z


def nerv_details(drm: DistanceRankModel, cfg: NervConfig | None = None):
    """NeRV with its intermediates (betas, per-point KLs, precision, recall)."""
    cfg = cfg or NervConfig()
    n = drm.n
    if not cfg.perplexity < n:
        raise ParameterError(f"perplexity {cfg.perplexity} must be < n = {n}")
    if cfg.combine != "mean":
        raise ParameterError(f"unsupported combine mode {cfg.combine!r}")

    d2_hd = drm.d_hd ** 2
    d2_ld = drm.d_ld ** 2
    np.fill_diagonal(d2_hd, np.inf)
    np.fill_diagonal(d2_ld, np.inf)
    beta_hd = _calibrate_rows(d2_hd, cfg.perplexity)
    beta_ld = _calibrate_rows(d2_ld, cfg.perplexity)

    log_p = _log_neighbor_probs(drm.d_hd, beta_hd)
    log_q = _log_neighbor_probs(drm.d_ld, beta_ld)
    np.fill_diagonal(log_p, 0.0)   # excluded from sums below; avoids inf-inf
    np.fill_diagonal(log_q, 0.0)
    off = ~np.eye(n, dtype=bool)
    p = np.exp(log_p)
    q = np.exp(log_q)
    kl_pq = np.where(off, p * (log_p - log_q), 0.0).sum(axis=1)
    kl_qp = np.where(off, q * (log_q - log_p), 0.0).sum(axis=1)

    norm = np.log(n - 1)
    recall = 1.0 - float(np.mean(kl_pq)) / norm
    precision = 1.0 - float(np.mean(kl_qp)) / norm
    value = min(1.0, max(0.0, 0.5 * (recall + precision)))
    return {"value": value, "recall": recall, "precision": precision,
            "beta_hd": beta_hd, "beta_ld": beta_ld,
            "kl_pq": kl_pq, "kl_qp": kl_qp}


def nerv(drm: DistanceRankModel, cfg: NervConfig | None = None) -> float:
    """Mean of smoothed precision and recall over calibrated neighbor models."""
    return nerv_details(drm, cfg)["value"]
