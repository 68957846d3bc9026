"""Linear preference model: Bradley-Terry over metric-feature differences.

P(i beats j) is the logistic of the score difference, score being a linear
function of standardized features. An L1 penalty keeps the weight vector
sparse; fitting uses proximal gradient descent with backtracking, which
needs no tuning and is exactly reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ParameterError, ValidationError

BTM_FORMAT = "btm-v1"
DEFAULT_BTM_LAMBDA = 0.021


@dataclass
class BtmModel:
    w0: float
    w: np.ndarray
    lam: float
    feature_names: list
    mean: np.ndarray    # standardization offsets (cancel in differences)
    scale: np.ndarray

    @property
    def active_features(self) -> list:
        return [n for n, wi in zip(self.feature_names, self.w) if wi != 0.0]

    def to_json(self) -> str:
        return json.dumps({"format": BTM_FORMAT, "w0": self.w0,
                           "w": list(map(float, self.w)), "lambda": self.lam,
                           "feature_names": list(self.feature_names),
                           "mean": list(map(float, self.mean)),
                           "scale": list(map(float, self.scale))}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BtmModel":
        d = json.loads(text)
        if d.get("format") != BTM_FORMAT:
            raise ValidationError(f"not a {BTM_FORMAT} document")
        return cls(w0=d["w0"], w=np.asarray(d["w"]), lam=d["lambda"],
                   feature_names=d["feature_names"], mean=np.asarray(d["mean"]),
                   scale=np.asarray(d["scale"]))


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)),
                    np.exp(z) / (1.0 + np.exp(z)))


def btm_probability(m: BtmModel, mv_i, mv_j) -> float:
    """P(v_i beats v_j); the intercept cancels in the score difference."""
    mv_i = np.asarray(mv_i, dtype=float)
    mv_j = np.asarray(mv_j, dtype=float)
    if mv_i.shape != (len(m.feature_names),) or mv_j.shape != mv_i.shape:
        raise ParameterError("feature vectors must align with feature_names")
    z = float(((mv_i - mv_j) / m.scale) @ m.w)
    return float(_sigmoid(np.array(z)))


def _nll(D, w, pct, wts):
    z = D @ w
    # -[p log s + (1-p) log(1-s)] written stably via log(1+exp(.))
    log1p_exp = np.logaddexp(0.0, -z)
    per = pct * log1p_exp + (1.0 - pct) * (z + log1p_exp)
    return float(np.sum(wts * per) / np.sum(wts))


def _soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def fit_btm(prefs, metric_vectors: dict, lam: float = DEFAULT_BTM_LAMBDA,
            feature_names=None, max_iter: int = 10_000,
            tol: float = 1e-8) -> BtmModel:
    """Weighted L1-penalized Bradley-Terry fit over aggregated percentages.

    Each preference contributes n_comparisons Bernoulli observations with
    success rate pct_a_over_b. Features are standardized over the supplied
    embedding collection before fitting; weights are in standardized units.
    """
    if lam < 0:
        raise ParameterError("lambda must be >= 0")
    if not prefs:
        raise ValidationError("no decided pairs to fit on")
    ids = sorted(metric_vectors)
    M = np.asarray([metric_vectors[i] for i in ids], dtype=float)
    F = M.shape[1]
    names = list(feature_names) if feature_names is not None \
        else [f"f{j}" for j in range(F)]
    mean = M.mean(axis=0)
    scale = M.std(axis=0)
    scale[scale == 0.0] = 1.0

    try:
        D = np.asarray([(metric_vectors[p.emb_a] - metric_vectors[p.emb_b]) / scale
                        for p in prefs], dtype=float)
    except KeyError as exc:
        raise ParameterError(f"preference references unknown embedding {exc}") from exc
    pct = np.asarray([p.pct_a_over_b for p in prefs], dtype=float)
    wts = np.asarray([p.n_comparisons for p in prefs], dtype=float)
    W = float(np.sum(wts))

    w = np.zeros(F)
    L = 1.0
    obj = _nll(D, w, pct, wts) + lam * np.sum(np.abs(w))
    trace = [obj]
    converged = False
    for _ in range(max_iter):
        z = D @ w
        resid = wts * (_sigmoid(z) - pct)
        grad = D.T @ resid / W
        f_w = _nll(D, w, pct, wts)
        while True:
            w_new = _soft_threshold(w - grad / L, lam / L)
            step = w_new - w
            f_new = _nll(D, w_new, pct, wts)
            if f_new <= f_w + grad @ step + 0.5 * L * float(step @ step) + 1e-15:
                break
            L *= 2.0
            if L > 1e16:
                raise NumericalError(
                    f"BTm line search failed; objective trace tail {trace[-5:]}")
        w = w_new
        new_obj = f_new + lam * float(np.sum(np.abs(w)))
        trace.append(new_obj)
        if obj - new_obj < tol:
            converged = True
            break
        obj = new_obj
        L = max(L * 0.5, 1e-6)
    if not converged:
        raise NumericalError(
            f"BTm did not converge in {max_iter} iterations; "
            f"objective trace tail {trace[-5:]}")
    return BtmModel(w0=0.0, w=w, lam=lam, feature_names=names,
                    mean=mean, scale=scale)


def btm_accuracy(m: BtmModel, prefs, metric_vectors: dict) -> float:
    """Fraction of decided majorities the model reproduces; 50/50 pairs skipped."""
    hits, total = 0, 0
    for p in prefs:
        if p.pct_a_over_b == 0.5:
            continue
        prob = btm_probability(m, metric_vectors[p.emb_a], metric_vectors[p.emb_b])
        hits += int((prob > 0.5) == (p.pct_a_over_b > 0.5))
        total += 1
    if total == 0:
        raise ValidationError("no decided majority pairs to score")
    return hits / total
