"""Metric normalization and pruning, feature assembly, and cross-validation.

Every metric ends up in [0, 1] with higher meaning better. Bounded metrics
map through fixed transforms; unbounded ones (HM, CAL, ABW) min-max
normalize within the batch of embeddings of one dataset and carry a
batch-relative flag in their provenance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .btm import BtmModel, btm_accuracy, fit_btm
from .errors import ParameterError, ValidationError
from .forest import ForestConfig, ForestModel, fit_forest, predict_proba_batch
from .ranker import (BoostedRanker, RankGroup, RankItem, RankerConfig,
                     fit_ranker, pairwise_accuracy)

SCAGNOSTIC_METRICS = ("outlying", "skewed", "clumpy", "sparse", "striated",
                      "convex", "skinny", "stringy", "monotonic")
SEPARABILITY_METRICS = ("abw", "cal", "dsc", "hm", "nh", "sc")
ACCURACY_METRICS = ("cc", "nms", "cca", "nlm", "lcmc", "trustworthiness",
                    "continuity", "nerv", "auc_log_rnx")
ALL_METRICS = SCAGNOSTIC_METRICS + SEPARABILITY_METRICS + ACCURACY_METRICS

METRIC_CATEGORY = {**{m: "scagnostics" for m in SCAGNOSTIC_METRICS},
                   **{m: "separability" for m in SEPARABILITY_METRICS},
                   **{m: "accuracy" for m in ACCURACY_METRICS}}

# how each raw metric maps into [0, 1], higher = better
_NORMALIZATION = {**{m: "identity" for m in SCAGNOSTIC_METRICS},
                  "dsc": "identity", "nh": "identity",
                  "sc": "affine_pm1", "cc": "affine_pm1",
                  "hm": "minmax_batch", "cal": "minmax_batch", "abw": "minmax_batch",
                  "nms": "one_minus", "nlm": "inv1p", "cca": "inv1p",
                  "lcmc": "identity", "trustworthiness": "identity",
                  "continuity": "identity", "nerv": "identity",
                  "auc_log_rnx": "clamp0"}

# kept-first order when pruning correlated pairs; continuity, nh, and cc sit
# below the metrics they typically shadow
DEFAULT_METRIC_PRIORITY = (
    "sparse", "skinny", "outlying", "skewed", "clumpy", "striated", "convex",
    "stringy", "monotonic",
    "dsc", "sc", "hm", "cal", "abw",
    "auc_log_rnx", "nlm", "nms", "trustworthiness", "lcmc", "nerv", "cca",
    "continuity", "nh", "cc",
)

DEFAULT_CORRELATION_THRESHOLD = 0.95


@dataclass(frozen=True)
class MetricVector:
    """Normalized metric values for one embedding, plus provenance."""

    embedding_id: str
    values: dict
    provenance: dict = field(default_factory=dict)
    absent: frozenset = frozenset()

    def to_dict(self):
        return {"embedding_id": self.embedding_id,
                "values": {k: self.values[k] for k in sorted(self.values)},
                "provenance": self.provenance,
                "absent": sorted(self.absent)}


def normalize(raw_vectors: list) -> list[MetricVector]:
    """Map one dataset's batch of raw MetricVectors into [0, 1].

    Batch-relative metrics with no spread (or a batch of one) settle at 0.5
    and are flagged in provenance.
    """
    batch_stats = {}
    for name, kind in _NORMALIZATION.items():
        if kind != "minmax_batch":
            continue
        vals = [mv.values[name] for mv in raw_vectors
                if name in mv.values and name not in mv.absent]
        batch_stats[name] = (min(vals), max(vals)) if vals else None

    out = []
    for mv in raw_vectors:
        values, prov = {}, dict(mv.provenance)
        for name, raw in mv.values.items():
            if name in mv.absent:
                continue
            kind = _NORMALIZATION.get(name, "identity")
            note = {"normalization": kind}
            if kind == "identity":
                v = raw
            elif kind == "affine_pm1":
                v = (raw + 1.0) / 2.0
            elif kind == "clamp0":
                v = max(0.0, raw)
            elif kind == "one_minus":
                v = 1.0 - raw
            elif kind == "inv1p":
                v = 1.0 / (1.0 + raw)
            else:   # minmax_batch
                lo, hi = batch_stats[name]
                if len(raw_vectors) == 1 or hi == lo:
                    v = 0.5
                    note["flag"] = "no-batch-spread"
                else:
                    v = (raw - lo) / (hi - lo)
                    note["batch_min"] = lo
                    note["batch_max"] = hi
            values[name] = float(min(1.0, max(0.0, v)))
            prov[name] = {**prov.get(name, {}), **note}
        out.append(MetricVector(embedding_id=mv.embedding_id, values=values,
                                provenance=prov, absent=mv.absent))
    return out


def assemble_matrix(vectors: list[MetricVector], names) -> np.ndarray:
    """Rows follow the input order; absent entries are NaN."""
    X = np.full((len(vectors), len(names)), np.nan)
    for i, mv in enumerate(vectors):
        for j, name in enumerate(names):
            if name in mv.values and name not in mv.absent:
                X[i, j] = mv.values[name]
    return X


def _pairwise_pearson(X: np.ndarray) -> np.ndarray:
    """Pearson over rows where both columns are present; NaN-tolerant."""
    F = X.shape[1]
    C = np.eye(F)
    for a in range(F):
        for b in range(a + 1, F):
            both = ~(np.isnan(X[:, a]) | np.isnan(X[:, b]))
            r = 0.0
            if both.sum() >= 3:
                xa, xb = X[both, a], X[both, b]
                if np.std(xa) > 0 and np.std(xb) > 0:
                    r = float(np.corrcoef(xa, xb)[0, 1])
            C[a, b] = C[b, a] = r
    return C


def prune_correlated(vectors: list[MetricVector],
                     threshold: float = DEFAULT_CORRELATION_THRESHOLD,
                     priority=DEFAULT_METRIC_PRIORITY):
    """Greedy selection down the priority list; returns (active, dropped).

    A metric is dropped when it correlates above the threshold with an
    already-kept metric, or immediately when it has no variance (flagged
    "low variance") or is absent everywhere.
    """
    names = [m for m in priority if any(
        m in mv.values and m not in mv.absent for mv in vectors)]
    dropped = {m: "absent" for m in priority if m not in names}
    X = assemble_matrix(vectors, names)

    with_variance = []
    for j, name in enumerate(names):
        col = X[:, j][~np.isnan(X[:, j])]
        if len(col) == 0 or np.std(col) < 1e-12:
            dropped[name] = "low variance"
        else:
            with_variance.append(name)

    Xv = assemble_matrix(vectors, with_variance)
    corr = _pairwise_pearson(Xv)
    active: list[str] = []
    for j, name in enumerate(with_variance):
        clash = None
        for kept in active:
            r = corr[j, with_variance.index(kept)]
            if abs(r) > threshold:
                clash = kept
                break
        if clash is None:
            active.append(name)
        else:
            dropped[name] = f"correlated with {clash}"
    return active, dropped


def correlation_matrix(vectors: list[MetricVector], names=None):
    """Symmetric Pearson matrix plus a category tag per metric."""
    names = list(names) if names is not None else [
        m for m in ALL_METRICS if any(m in mv.values and m not in mv.absent
                                      for mv in vectors)]
    X = assemble_matrix(vectors, names)
    corr = _pairwise_pearson(X)
    np.fill_diagonal(corr, 1.0)
    tags = {n: METRIC_CATEGORY.get(n, "other") for n in names}
    return names, corr, tags


def roc_auc(y_true, scores) -> float:
    """Mann-Whitney AUC with midrank tie handling."""
    y = np.asarray(y_true, dtype=int)
    s = np.asarray(scores, dtype=float)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUC needs both classes present")
    ranks = stats.rankdata(s)
    return float((np.sum(ranks[y == 1]) - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


# ---------------------------------------------------------------------------
# corpus assembly and leave-one-group-out evaluation

@dataclass
class Imputer:
    """Training-median imputation for absent metrics, with absence flags."""

    medians: np.ndarray
    flag_cols: list

    @classmethod
    def fit(cls, X: np.ndarray) -> "Imputer":
        medians = np.empty(X.shape[1])
        flag_cols = []
        for j in range(X.shape[1]):
            col = X[:, j]
            present = col[~np.isnan(col)]
            medians[j] = float(np.median(present)) if len(present) else 0.5
            if np.any(np.isnan(col)):
                flag_cols.append(j)
        return cls(medians=medians, flag_cols=flag_cols)

    def transform(self, X: np.ndarray) -> np.ndarray:
        out = X.copy()
        nan = np.isnan(out)
        out[nan] = np.take(self.medians, np.nonzero(nan)[1])
        if self.flag_cols:
            flags = np.isnan(X[:, self.flag_cols]).astype(float)
            out = np.hstack([out, flags])
        return out

    def extend_names(self, names):
        return list(names) + [f"{names[j]}__absent" for j in self.flag_cols]


@dataclass
class PreferenceCorpus:
    """Everything the three models need, tagged for group-wise splitting."""

    feature_names: list
    vectors: dict                   # embedding_id -> np.ndarray (NaN = absent)
    emb_dataset: dict               # embedding_id -> dataset_id
    emb_technique: dict             # embedding_id -> technique
    binary: list                    # (embedding_id, label, user_id)
    prefs: list                     # PairwisePreference
    groups: list                    # RankGroup (dataset_id set)


def build_corpus(metric_vectors: dict, active_names, trials,
                 emb_technique: dict) -> PreferenceCorpus:
    """Assemble a corpus from per-dataset normalized MetricVector lists.

    metric_vectors maps dataset_id -> list[MetricVector]; trials come from
    the preference store.
    """
    from .preferences import aggregate_pairwise, binary_labels

    vectors, emb_dataset = {}, {}
    for ds_id, mvs in metric_vectors.items():
        X = assemble_matrix(mvs, active_names)
        for i, mv in enumerate(mvs):
            vectors[mv.embedding_id] = X[i]
            emb_dataset[mv.embedding_id] = ds_id
    trials = list(trials)
    groups = []
    for t in trials:
        items = [RankItem(embedding_id=e, features=vectors[e],
                          relevance=-1 if c else h)
                 for e, h, c in zip(t.shown, t.hearts, t.crossed_out)]
        groups.append(RankGroup(group_id=t.trial_id, items=items,
                                dataset_id=t.dataset_id))
    return PreferenceCorpus(feature_names=list(active_names), vectors=vectors,
                            emb_dataset=emb_dataset, emb_technique=dict(emb_technique),
                            binary=binary_labels(trials),
                            prefs=aggregate_pairwise(trials) if trials else [],
                            groups=groups)


@dataclass
class CvReport:
    scheme: str
    model_kind: str
    fold_scores: dict
    mean: float
    ci95_low: float
    ci95_high: float
    skipped: list

    def to_json(self) -> str:
        return json.dumps({"scheme": self.scheme, "model_kind": self.model_kind,
                           "fold_scores": {k: self.fold_scores[k]
                                           for k in sorted(self.fold_scores)},
                           "mean": self.mean, "ci95_low": self.ci95_low,
                           "ci95_high": self.ci95_high,
                           "skipped": sorted(self.skipped)}, sort_keys=True)


def _group_of(corpus: PreferenceCorpus, emb_id: str, grouping: str) -> str:
    if grouping == "by_dataset":
        return corpus.emb_dataset[emb_id]
    return corpus.emb_technique[emb_id]


def fit_on_groups(model_kind: str, corpus: PreferenceCorpus, exclude_group: str,
                  grouping: str = "by_dataset", cfg=None, seed: int = 0):
    """Train one fold's model on everything outside exclude_group.

    Returns (model, context) where context carries whatever the matching
    scorer needs (imputer, feature names). Held-out rows are never touched.
    """
    def keep(emb_id):
        return _group_of(corpus, emb_id, grouping) != exclude_group

    train_ids = sorted(e for e in corpus.vectors if keep(e))
    if not train_ids:
        raise ValidationError(f"no training data outside group {exclude_group!r}")
    X_train = np.vstack([corpus.vectors[e] for e in train_ids])
    imputer = Imputer.fit(X_train)
    names = imputer.extend_names(corpus.feature_names)

    def vec(emb_id):
        return imputer.transform(corpus.vectors[emb_id][None, :])[0]

    if model_kind == "forest":
        rows = [(e, lab) for e, lab, _ in corpus.binary if keep(e)]
        if not rows:
            raise ValidationError("no binary labels in training folds")
        X = np.vstack([vec(e) for e, _ in rows])
        y = np.asarray([lab for _, lab in rows])
        cfg = cfg or ForestConfig(seed=seed)
        return fit_forest(X, y, cfg, feature_names=names), {"imputer": imputer}
    if model_kind == "btm":
        prefs = [p for p in corpus.prefs if keep(p.emb_a) and keep(p.emb_b)]
        mv = {e: vec(e) for e in train_ids}
        lam = cfg if isinstance(cfg, (int, float)) else None
        model = fit_btm(prefs, mv, lam=lam if lam is not None else 0.021,
                        feature_names=names)
        return model, {"imputer": imputer}
    if model_kind == "ranker":
        groups = []
        for g in corpus.groups:
            if g.items and all(keep(it.embedding_id) for it in g.items):
                items = [RankItem(it.embedding_id, vec(it.embedding_id), it.relevance)
                         for it in g.items]
                groups.append(RankGroup(g.group_id, items, g.dataset_id))
        cfg = cfg or RankerConfig(seed=seed)
        return fit_ranker(groups, cfg, feature_names=names), {"imputer": imputer}
    raise ParameterError(f"unknown model kind {model_kind!r}")


def _score_fold(model_kind, model, ctx, corpus, group, grouping):
    imputer = ctx["imputer"]

    def vec(emb_id):
        return imputer.transform(corpus.vectors[emb_id][None, :])[0]

    def held(emb_id):
        return _group_of(corpus, emb_id, grouping) == group

    if model_kind == "forest":
        rows = [(e, lab) for e, lab, _ in corpus.binary if held(e)]
        if not rows or len({lab for _, lab in rows}) < 2:
            return None
        X = np.vstack([vec(e) for e, _ in rows])
        y = np.asarray([lab for _, lab in rows])
        return roc_auc(y, predict_proba_batch(model, X))
    if model_kind == "btm":
        prefs = [p for p in corpus.prefs
                 if held(p.emb_a) and held(p.emb_b) and p.pct_a_over_b != 0.5]
        if not prefs:
            return None
        mv = {e: vec(e) for e in corpus.vectors if held(e)}
        return btm_accuracy(model, prefs, mv)
    groups = []
    for g in corpus.groups:
        if g.items and all(held(it.embedding_id) for it in g.items):
            items = [RankItem(it.embedding_id, vec(it.embedding_id), it.relevance)
                     for it in g.items]
            groups.append(RankGroup(g.group_id, items, g.dataset_id))
    if not any(len({it.relevance for it in g.items}) > 1 for g in groups):
        return None
    return pairwise_accuracy(model, groups)


def cross_validate(model_kind: str, corpus: PreferenceCorpus,
                   grouping: str = "by_dataset", cfg=None,
                   seed: int = 0) -> CvReport:
    """Leave-one-group-out evaluation with a t-based 95% interval."""
    if grouping not in ("by_dataset", "by_technique"):
        raise ParameterError(f"unknown grouping {grouping!r}")
    if grouping == "by_technique" and model_kind != "forest":
        raise ParameterError(
            "by_technique grouping is only defined for the forest model: "
            "preference pairs and rank groups span techniques")
    group_keys = sorted({_group_of(corpus, e, grouping) for e in corpus.vectors})
    if len(group_keys) < 2:
        raise ParameterError("cross-validation needs at least 2 groups")
    fold_scores, skipped = {}, []
    for g in group_keys:
        model, ctx = fit_on_groups(model_kind, corpus, g, grouping, cfg, seed)
        s = _score_fold(model_kind, model, ctx, corpus, g, grouping)
        if s is None:
            skipped.append(g)
        else:
            fold_scores[g] = float(s)
    if not fold_scores:
        raise ValidationError("every fold was skipped: nothing evaluable")
    vals = np.asarray(list(fold_scores.values()))
    mean = float(np.mean(vals))
    if len(vals) > 1 and float(np.std(vals, ddof=1)) > 0:
        half = float(stats.t.ppf(0.975, len(vals) - 1)
                     * np.std(vals, ddof=1) / math.sqrt(len(vals)))
    else:
        half = 0.0
    scheme = "LODO" if grouping == "by_dataset" else "LODRO"
    return CvReport(scheme=scheme, model_kind=model_kind, fold_scores=fold_scores,
                    mean=mean, ci95_low=mean - half, ci95_high=mean + half,
                    skipped=skipped)
