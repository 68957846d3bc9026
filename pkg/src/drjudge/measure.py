"""Computes the full metric suite for embeddings of one dataset.

Produces raw MetricVectors (with per-metric provenance) and their
normalized batch. Metrics whose preconditions fail on a pathological
embedding are marked absent instead of aborting the run; rankings must
survive ugly projections.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import hdld, scagnostics as scag, separability as sep
from .data import Dataset, Embedding, build_distance_rank_model, neighborhoods
from .errors import DataError, UndefinedMetricError
from .evaluation import MetricVector, normalize


@dataclass(frozen=True)
class MetricConfig:
    k: int | None = None            # LCMC/T/C neighborhood; None = heuristic
    nh_k: int = 5
    bins: int = scag.DEFAULT_BINS
    nerv_perplexity: float = 5.0
    cca_radius: float | None = None  # None = median LD distance

    def to_dict(self):
        return {"k": self.k, "nh_k": self.nh_k, "bins": self.bins,
                "nerv_perplexity": self.nerv_perplexity,
                "cca_radius": self.cca_radius}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in
                      ("k", "nh_k", "bins", "nerv_perplexity", "cca_radius")
                      if k in d})


def measure_embedding(ds: Dataset, emb: Embedding,
                      cfg: MetricConfig | None = None,
                      labels_override=None) -> MetricVector:
    """Raw (un-normalized) metric vector for one embedding."""
    cfg = cfg or MetricConfig()
    values: dict[str, float] = {}
    prov: dict[str, dict] = {}
    absent: set[str] = set()

    drm = build_distance_rank_model(ds, emb)
    k = cfg.k if cfg.k is not None else hdld.default_k(ds.n)
    nb = neighborhoods(drm, k)
    for name in ("lcmc", "trustworthiness", "continuity"):
        prov[name] = {"k": k}
    values["lcmc"] = hdld.lcmc(nb)
    values["trustworthiness"] = hdld.trustworthiness(drm, nb)
    values["continuity"] = hdld.continuity(drm, nb)
    curves = hdld.coranking_curves(drm)
    values["auc_log_rnx"] = hdld.auc_log_rnx(curves)
    try:
        values["nms"] = hdld.kruskal_stress(drm)
    except DataError:
        absent.add("nms")
        values["nms"] = float("nan")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        values["nlm"] = hdld.sammon_stress(drm)
    radius = cfg.cca_radius
    values["cca"] = hdld.cca_stress(drm, radius)
    prov["cca"] = {"radius": radius if radius is not None else "median-ld"}
    values["cc"] = hdld.distance_correlation(drm)
    values["nerv"] = hdld.nerv(drm, hdld.NervConfig(perplexity=cfg.nerv_perplexity))
    prov["nerv"] = {"perplexity": cfg.nerv_perplexity}

    try:
        geom = scag.scag_geometry(emb.coords, cfg.bins)
        values.update(scag.scagnostics(geom, emb.coords))
        for name in scag.SCAG_NAMES:
            prov[name] = {"bins": cfg.bins, "alpha": "omega"}
    except DataError:
        for name in scag.SCAG_NAMES:
            absent.add(name)
            values[name] = float("nan")

    labels = labels_override if labels_override is not None else ds.labels
    sep_names = ("dsc", "abw", "hm", "nh", "cal", "sc")
    if labels is None or len(np.unique(labels)) < 2:
        for name in sep_names:
            absent.add(name)
            values[name] = float("nan")
    else:
        ls = sep.labeled_scatter(emb.coords, labels)
        calls = {"dsc": lambda: sep.dsc(ls),
                 "abw": lambda: sep.abw(ls),
                 "hm": lambda: sep.hypothesis_margin(ls),
                 "nh": lambda: sep.neighborhood_hit(ls, min(cfg.nh_k, ds.n - 1)),
                 "cal": lambda: sep.calinski_harabasz(ls)[0],
                 "sc": lambda: sep.silhouette(ls)}
        for name, call in calls.items():
            try:
                values[name] = call()
            except UndefinedMetricError:
                absent.add(name)
                values[name] = float("nan")
        prov["nh"] = {"k": min(cfg.nh_k, ds.n - 1)}

    return MetricVector(embedding_id=emb.id, values=values, provenance=prov,
                        absent=frozenset(absent))


def measure_dataset(ds: Dataset, embeddings: list, cfg: MetricConfig | None = None,
                    labels_override=None, jobs: int = 1, progress=None):
    """Measure a batch of embeddings; returns (raw, normalized) lists.

    jobs > 1 parallelizes across embeddings; output order always follows
    the input order so results are reproducible either way.
    """
    cfg = cfg or MetricConfig()
    done = 0

    def one(emb):
        return measure_embedding(ds, emb, cfg, labels_override)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            raw = list(pool.map(one, embeddings))
        if progress:
            progress(len(embeddings), len(embeddings))
    else:
        raw = []
        for emb in embeddings:
            raw.append(one(emb))
            done += 1
            if progress:
                progress(done, len(embeddings))
    return raw, normalize(raw)
