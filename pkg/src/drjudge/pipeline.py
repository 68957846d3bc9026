"""Batch pipeline: ingest -> project -> measure -> train -> evaluate ->
rank -> metamap, with every artifact written under one data directory.

Artifacts are deterministic given the config seed: JSON is dumped with
sorted keys, floats keep full repr, and nothing embeds timestamps or
absolute paths, so two runs with the same config are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import evaluation as evl
from .btm import fit_btm, BtmModel, DEFAULT_BTM_LAMBDA
from .data import (Dataset, Embedding, dataset_from_csv, dataset_to_csv,
                   embedding_from_csv, embedding_to_csv, ingest_image_folder)
from .errors import ParameterError, ValidationError
from .forest import ForestConfig, fit_forest, ForestModel, attribute as forest_attribute
from .generators import GeneratorSpec, generate
from .measure import MetricConfig, measure_dataset
from .metamap import build_metamap
from .preferences import PreferenceStore, aggregate_pairwise
from .ranker import BoostedRanker, RankerConfig, attribute as ranker_attribute, score as ranker_score
from .synthetic import blob_dataset, synthetic_trials

MODEL_KINDS = ("forest", "btm", "ranker")


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class PipelineConfig:
    seed: int
    data_dir: Path
    raw: dict              # the parsed config document
    config_dir: Path

    @classmethod
    def load(cls, path, data_dir_override=None, seed_override=None) -> "PipelineConfig":
        path = Path(path)
        text = path.read_text()
        if path.suffix in (".toml", ".tml"):
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            doc = tomllib.loads(text)
        else:
            doc = json.loads(text)
        if seed_override is not None:
            doc["seed"] = seed_override
        if "seed" not in doc:
            raise ValidationError("config must set a seed")
        import os
        data_dir = (data_dir_override or os.environ.get("DRJUDGE_DATA_DIR")
                    or doc.get("data_dir"))
        if not data_dir:
            raise ValidationError(
                "no data directory: set data_dir, DRJUDGE_DATA_DIR, or --out")
        data_dir = Path(data_dir)
        if not data_dir.is_absolute():
            data_dir = path.parent / data_dir
        return cls(seed=int(doc["seed"]), data_dir=data_dir, raw=doc,
                   config_dir=path.parent)

    def rel(self, p: str) -> Path:
        """Paths in the config resolve relative to the config file."""
        q = Path(p)
        return q if q.is_absolute() else self.config_dir / q

    def metric_config(self) -> MetricConfig:
        return MetricConfig.from_dict(self.raw.get("metrics", {}))

    def echo(self) -> dict:
        doc = dict(self.raw)
        doc.pop("data_dir", None)
        return doc


class ArtifactStore:
    """Filesystem layout of all pipeline artifacts under one root."""

    def __init__(self, root):
        self.root = Path(root)

    # -- datasets
    def dataset_dir(self, ds_id):
        return self.root / "datasets" / ds_id

    def write_dataset(self, ds: Dataset):
        d = self.dataset_dir(ds.id)
        d.mkdir(parents=True, exist_ok=True)
        (d / "dataset.csv").write_text(dataset_to_csv(ds))
        (d / "meta.json").write_text(_dump(
            {"id": ds.id, "n": ds.n, "dim": ds.dim,
             "labeled": ds.labels is not None, "source": ds.source}))

    def load_dataset(self, ds_id) -> Dataset:
        f = self.dataset_dir(ds_id) / "dataset.csv"
        if not f.exists():
            raise ValidationError(f"unknown dataset {ds_id!r}")
        return dataset_from_csv(f.read_text(), ds_id)

    def dataset_ids(self):
        d = self.root / "datasets"
        return sorted(p.name for p in d.iterdir() if p.is_dir()) if d.exists() else []

    # -- embeddings
    @staticmethod
    def _fname(emb_id: str) -> str:
        return "".join(c if c.isalnum() or c in "-_." else "_" for c in emb_id)

    def write_embedding(self, emb: Embedding):
        d = self.root / "embeddings" / emb.dataset_id
        d.mkdir(parents=True, exist_ok=True)
        stem = self._fname(emb.id)
        (d / f"{stem}.csv").write_text(embedding_to_csv(emb))
        (d / f"{stem}.meta.json").write_text(_dump(
            {"id": emb.id, "dataset_id": emb.dataset_id,
             "technique": emb.technique, "params": emb.params}))

    def load_embeddings(self, ds_id) -> list[Embedding]:
        d = self.root / "embeddings" / ds_id
        if not d.exists():
            return []
        out = []
        for meta_file in sorted(d.glob("*.meta.json")):
            meta = json.loads(meta_file.read_text())
            csv_file = meta_file.with_name(meta_file.name[:-len(".meta.json")] + ".csv")
            out.append(embedding_from_csv(csv_file.read_text(), ds_id,
                                          embedding_id=meta["id"],
                                          technique=meta["technique"],
                                          params=meta["params"]))
        out.sort(key=lambda e: e.id)
        return out

    # -- metrics
    def metrics_dir(self, ds_id):
        return self.root / "metrics" / ds_id

    def write_metrics(self, ds_id, raw, normalized):
        d = self.metrics_dir(ds_id)
        d.mkdir(parents=True, exist_ok=True)
        names = list(evl.ALL_METRICS)

        def to_csv(vectors):
            lines = ["embedding_id," + ",".join(names)]
            for mv in vectors:
                cells = [mv.embedding_id]
                for nm in names:
                    if nm in mv.absent or nm not in mv.values:
                        cells.append("")
                    else:
                        cells.append(repr(mv.values[nm]))
                lines.append(",".join(cells))
            return "\n".join(lines) + "\n"

        (d / "raw.csv").write_text(to_csv(raw))
        (d / "metrics.csv").write_text(to_csv(normalized))
        (d / "provenance.json").write_text(_dump(
            [mv.to_dict() | {"values": None} for mv in normalized]))
        (d / "vectors.json").write_text(_dump([mv.to_dict() for mv in normalized]))

    def load_metric_vectors(self, ds_id) -> list[evl.MetricVector]:
        f = self.metrics_dir(ds_id) / "vectors.json"
        if not f.exists():
            raise ValidationError(f"no metrics computed for dataset {ds_id!r}")
        out = []
        for d in json.loads(f.read_text()):
            out.append(evl.MetricVector(embedding_id=d["embedding_id"],
                                        values=d["values"],
                                        provenance=d["provenance"],
                                        absent=frozenset(d["absent"])))
        return out

    # -- models / rankings / metamaps / reports
    def write_model(self, model_id: str, text: str):
        d = self.root / "models"
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{model_id}.json").write_text(text)

    def load_model(self, model_id: str):
        f = self.root / "models" / f"{model_id}.json"
        if not f.exists():
            raise ValidationError(f"unknown model {model_id!r}")
        text = f.read_text()
        kind = json.loads(text).get("format", "")
        if kind.startswith("forest"):
            return ForestModel.from_json(text)
        if kind.startswith("btm"):
            return BtmModel.from_json(text)
        return BoostedRanker.from_json(text)

    def write_ranking(self, ds_id, payload: list):
        d = self.root / "rankings"
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{ds_id}.json").write_text(_dump(payload))

    def load_ranking(self, ds_id):
        f = self.root / "rankings" / f"{ds_id}.json"
        if not f.exists():
            raise ValidationError(f"no ranking for dataset {ds_id!r}")
        return json.loads(f.read_text())

    def write_metamap(self, ds_id, text: str):
        d = self.root / "metamaps"
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{ds_id}.json").write_text(text)

    def trial_store(self) -> PreferenceStore:
        return PreferenceStore(self.root / "trials.jsonl")

    def write_manifest(self, command: str, cfg: PipelineConfig,
                       inputs: list[Path], outputs: list[Path]):
        d = self.root / "manifests"
        d.mkdir(parents=True, exist_ok=True)

        def rel(p: Path) -> str:
            p = Path(p)
            try:
                return str(p.relative_to(self.root))
            except ValueError:
                return p.name
        doc = {"command": command, "config": cfg.echo(),
               "inputs": {rel(p): _sha256(Path(p)) for p in sorted(set(map(str, inputs)))},
               "outputs": sorted({rel(p) for p in outputs})}
        (d / f"{command}.json").write_text(_dump(doc))


# ---------------------------------------------------------------------------
# subcommands

def cmd_ingest(cfg: PipelineConfig) -> list[str]:
    """Load dataset CSVs or image folders listed under config `ingest`."""
    store = ArtifactStore(cfg.data_dir)
    entries = cfg.raw.get("ingest", [])
    if not entries:
        raise ValidationError("config has no `ingest` entries")
    inputs, outputs, ids = [], [], []
    for e in entries:
        ds_id = e["id"]
        if "csv" in e:
            src = cfg.rel(e["csv"])
            ds = dataset_from_csv(src.read_text(), ds_id)
            inputs.append(src)
        elif "images" in e:
            ds, report = ingest_image_folder(cfg.rel(e["images"]),
                                             int(e.get("side", 28)), ds_id)
            if report.skipped:
                d = store.dataset_dir(ds_id)
                d.mkdir(parents=True, exist_ok=True)
                (d / "ingest_report.json").write_text(_dump(
                    {"loaded": report.loaded, "skipped": report.skipped}))
        else:
            raise ValidationError(f"ingest entry for {ds_id!r} needs csv or images")
        store.write_dataset(ds)
        outputs.append(store.dataset_dir(ds_id) / "dataset.csv")
        ids.append(ds_id)
    store.write_manifest("ingest", cfg, inputs, outputs)
    return ids


def _generation_specs(cfg: PipelineConfig) -> list[GeneratorSpec]:
    gen = cfg.raw.get("generation", {})
    manifest = gen.get("manifest", [])
    if isinstance(manifest, str):
        manifest = json.loads(cfg.rel(manifest).read_text())
    specs = []
    for entry in manifest:
        specs.append(GeneratorSpec(technique=entry["technique"],
                                   params=dict(entry.get("params", {}))))
    if not specs:
        raise ValidationError("generation manifest is empty")
    return specs


def _target_datasets(cfg: PipelineConfig, store: ArtifactStore) -> list[str]:
    ids = cfg.raw.get("generation", {}).get("datasets") or store.dataset_ids()
    if not ids:
        raise ValidationError("no datasets available")
    return list(ids)


def cmd_project(cfg: PipelineConfig) -> dict:
    """Generate embeddings for every (dataset, spec) pair in the manifest."""
    store = ArtifactStore(cfg.data_dir)
    specs = _generation_specs(cfg)
    produced = {}
    inputs, outputs = [], []
    for ds_id in _target_datasets(cfg, store):
        ds = store.load_dataset(ds_id)
        inputs.append(store.dataset_dir(ds_id) / "dataset.csv")
        ids = []
        for spec in specs:
            emb = generate(ds, spec)
            store.write_embedding(emb)
            outputs.append(cfg.data_dir / "embeddings" / ds_id
                           / f"{ArtifactStore._fname(emb.id)}.csv")
            ids.append(emb.id)
        produced[ds_id] = ids
    store.write_manifest("project", cfg, inputs, outputs)
    return produced


def cmd_measure(cfg: PipelineConfig, jobs: int = 1) -> dict:
    store = ArtifactStore(cfg.data_dir)
    mcfg = cfg.metric_config()
    measured = {}
    inputs, outputs = [], []
    for ds_id in _target_datasets(cfg, store):
        ds = store.load_dataset(ds_id)
        embs = store.load_embeddings(ds_id)
        if not embs:
            raise ValidationError(f"no embeddings for dataset {ds_id!r}; "
                                  "run `project` first")
        raw, norm = measure_dataset(ds, embs, mcfg, jobs=jobs)
        store.write_metrics(ds_id, raw, norm)
        measured[ds_id] = len(embs)
        inputs.append(store.dataset_dir(ds_id) / "dataset.csv")
        outputs.append(store.metrics_dir(ds_id) / "metrics.csv")
    store.write_manifest("measure", cfg, inputs, outputs)
    return measured


def _load_corpus(cfg: PipelineConfig, store: ArtifactStore):
    trials = store.trial_store().trials()
    if not trials:
        raise ValidationError("no trials recorded; POST /trials or add trials.jsonl")
    ds_ids = sorted({t.dataset_id for t in trials})
    metric_vectors = {d: store.load_metric_vectors(d) for d in ds_ids}
    all_vecs = [mv for vecs in metric_vectors.values() for mv in vecs]
    threshold = cfg.raw.get("pruning", {}).get(
        "threshold", evl.DEFAULT_CORRELATION_THRESHOLD)
    active, dropped = evl.prune_correlated(all_vecs, threshold)
    emb_technique = {}
    for d in ds_ids:
        for emb in store.load_embeddings(d):
            emb_technique[emb.id] = emb.technique
    corpus = evl.build_corpus(metric_vectors, active, trials, emb_technique)
    return corpus, active, dropped


def _model_cfgs(cfg: PipelineConfig, seed: int):
    models = cfg.raw.get("models", {})
    fr = models.get("forest", {})
    bt = models.get("btm", {})
    rk = models.get("ranker", {})
    return (ForestConfig(n_trees=int(fr.get("n_trees", 200)),
                         max_depth=int(fr.get("max_depth", 10)),
                         min_leaf=int(fr.get("min_leaf", 1)), seed=seed),
            float(bt.get("lambda", DEFAULT_BTM_LAMBDA)),
            RankerConfig(n_trees=int(rk.get("n_trees", 15)),
                         learning_rate=float(rk.get("learning_rate", 0.3)),
                         max_depth=int(rk.get("max_depth", 5)),
                         min_leaf=int(rk.get("min_leaf", 5)), seed=seed))


def cmd_train(cfg: PipelineConfig) -> list[str]:
    """Fit the configured model kinds on all recorded trials."""
    store = ArtifactStore(cfg.data_dir)
    corpus, active, dropped = _load_corpus(cfg, store)
    kinds = cfg.raw.get("models", {}).get("kinds", list(MODEL_KINDS))
    forest_cfg, btm_lambda, ranker_cfg = _model_cfgs(cfg, cfg.seed)
    imputer = evl.Imputer.fit(np.vstack([corpus.vectors[e]
                                         for e in sorted(corpus.vectors)]))
    names = imputer.extend_names(corpus.feature_names)

    def vec(e):
        return imputer.transform(corpus.vectors[e][None, :])[0]

    trained = []
    for kind in kinds:
        if kind == "forest":
            rows = corpus.binary
            if not rows:
                raise ValidationError("no binary labels for the forest model")
            X = np.vstack([vec(e) for e, _, _ in rows])
            y = np.asarray([lab for _, lab, _ in rows])
            model = fit_forest(X, y, forest_cfg, feature_names=names)
        elif kind == "btm":
            mv = {e: vec(e) for e in corpus.vectors}
            model = fit_btm(corpus.prefs, mv, lam=btm_lambda, feature_names=names)
        elif kind == "ranker":
            from .ranker import fit_ranker, RankGroup, RankItem
            groups = [RankGroup(g.group_id,
                                [RankItem(i.embedding_id, vec(i.embedding_id),
                                          i.relevance) for i in g.items],
                                g.dataset_id) for g in corpus.groups]
            model = fit_ranker(groups, ranker_cfg, feature_names=names)
        else:
            raise ValidationError(f"unknown model kind {kind!r}")
        store.write_model(kind, model.to_json())
        trained.append(kind)
    store.write_model("features", _dump(
        {"format": "features-v1", "active": active,
         "dropped": {k: dropped[k] for k in sorted(dropped)},
         "imputer_medians": [float(v) for v in imputer.medians],
         "imputer_flags": list(imputer.flag_cols),
         "feature_names": names, "base_names": corpus.feature_names}))
    store.write_manifest("train", cfg, [cfg.data_dir / "trials.jsonl"],
                         [cfg.data_dir / "models" / f"{k}.json"
                          for k in trained + ["features"]])
    return trained


def cmd_evaluate(cfg: PipelineConfig, grouping: str = "by_dataset") -> dict:
    store = ArtifactStore(cfg.data_dir)
    corpus, _, _ = _load_corpus(cfg, store)
    kinds = cfg.raw.get("models", {}).get("kinds", list(MODEL_KINDS))
    forest_cfg, btm_lambda, ranker_cfg = _model_cfgs(cfg, cfg.seed)
    cfg_of = {"forest": forest_cfg, "btm": btm_lambda, "ranker": ranker_cfg}
    out_dir = cfg.data_dir / "cv"
    out_dir.mkdir(parents=True, exist_ok=True)
    results = {}
    outputs = []
    for kind in kinds:
        if grouping == "by_technique" and kind != "forest":
            continue
        report = evl.cross_validate(kind, corpus, grouping,
                                    cfg=cfg_of[kind], seed=cfg.seed)
        f = out_dir / f"{kind}-{report.scheme}.json"
        f.write_text(report.to_json())
        outputs.append(f)
        results[kind] = report
    store.write_manifest("evaluate", cfg, [cfg.data_dir / "trials.jsonl"], outputs)
    return results


def _feature_doc(store: ArtifactStore) -> dict:
    f = store.root / "models" / "features.json"
    if not f.exists():
        raise ValidationError("no trained feature set; run `train` first")
    return json.loads(f.read_text())


def rank_dataset(store: ArtifactStore, ds_id: str, model_id: str = "ranker") -> list:
    """Score a dataset's embeddings with a trained model; returns the
    ranking payload (descending score, ties by embedding id)."""
    feat = _feature_doc(store)
    vectors = store.load_metric_vectors(ds_id)
    X = evl.assemble_matrix(vectors, feat["base_names"])
    imputer = evl.Imputer(medians=np.asarray(feat["imputer_medians"]),
                          flag_cols=list(feat["imputer_flags"]))
    Xt = imputer.transform(X)
    model = store.load_model(model_id)
    rows = []
    for i, mv in enumerate(vectors):
        x = Xt[i]
        if isinstance(model, BoostedRanker):
            s = ranker_score(model, x)
            attr = ranker_attribute(model, x)
        elif isinstance(model, ForestModel):
            from .forest import predict_proba
            s = predict_proba(model, x)
            attr = forest_attribute(model, x)
        else:
            raise ParameterError(
                "ranking needs a ranker or forest model; the pairwise BTm "
                "does not score single embeddings")
        rows.append({"embedding_id": mv.embedding_id, "score": float(s),
                     "metric_vector": {k: mv.values[k] for k in sorted(mv.values)},
                     "attributions": {k: float(v) for k, v
                                      in sorted(attr["contributions"].items())},
                     "baseline": float(attr["baseline"])})
    rows.sort(key=lambda r: (-r["score"], r["embedding_id"]))
    for i, r in enumerate(rows):
        r["rank"] = i + 1
    return rows


def cmd_rank(cfg: PipelineConfig, model_id: str = "ranker") -> dict:
    store = ArtifactStore(cfg.data_dir)
    ranked = {}
    outputs = []
    for ds_id in _target_datasets(cfg, store):
        payload = rank_dataset(store, ds_id, model_id)
        store.write_ranking(ds_id, payload)
        outputs.append(cfg.data_dir / "rankings" / f"{ds_id}.json")
        ranked[ds_id] = len(payload)
    store.write_manifest("rank", cfg,
                         [cfg.data_dir / "models" / f"{model_id}.json"], outputs)
    return ranked


def metamap_dataset(store: ArtifactStore, ds_id: str, g: int = 40,
                    seed: int = 0) -> str:
    ranking = store.load_ranking(ds_id)
    vectors = store.load_metric_vectors(ds_id)
    by_id = {mv.embedding_id: mv for mv in vectors}
    ids = [r["embedding_id"] for r in ranking]
    X = evl.assemble_matrix([by_id[i] for i in ids], evl.ALL_METRICS)
    scores = [r["score"] for r in ranking]
    mm = build_metamap(X, scores, embedding_ids=ids, g=g)
    return mm.to_json()


def cmd_metamap(cfg: PipelineConfig) -> list[str]:
    store = ArtifactStore(cfg.data_dir)
    g = int(cfg.raw.get("metamap", {}).get("grid", 40))
    outputs = []
    done = []
    for ds_id in _target_datasets(cfg, store):
        store.write_metamap(ds_id, metamap_dataset(store, ds_id, g, cfg.seed))
        outputs.append(cfg.data_dir / "metamaps" / f"{ds_id}.json")
        done.append(ds_id)
    store.write_manifest("metamap", cfg, [], outputs)
    return done


# ---------------------------------------------------------------------------
# bundled fixture corpus

BUNDLED_SPECS = [
    {"technique": "PCA"},
    {"technique": "MDS-classical"},
    {"technique": "Isomap", "params": {"n_neighbors": 8}},
    {"technique": "Isomap", "params": {"n_neighbors": 15}},
    {"technique": "tSNE-exact",
     "params": {"perplexity": 8, "iterations": 250, "learning_rate": 100, "seed": 3}},
    {"technique": "tSNE-exact",
     "params": {"perplexity": 15, "iterations": 250, "learning_rate": 100, "seed": 4}},
    {"technique": "GRP", "params": {"seed": 5}},
    {"technique": "GRP", "params": {"seed": 6}},
]


def make_bundled_corpus(root, seed: int = 7) -> Path:
    """Write the synthetic fixture corpus and its pipeline config.

    Layout: <root>/source/*.csv, <root>/data/trials.jsonl, <root>/config.json.
    Returns the config path.
    """
    root = Path(root)
    (root / "source").mkdir(parents=True, exist_ok=True)
    data_dir = root / "data"
    data_dir.mkdir(parents=True, exist_ok=True)

    datasets = [
        blob_dataset(seed, centers=[[0, 0, 0, 0], [4, 4, 0, 0], [0, 4, 4, 0]],
                     per_class=20, spread=0.6, dataset_id="blobs3"),
        blob_dataset(seed + 1, centers=[[0] * 6, [3] * 6], per_class=24,
                     spread=0.9, dataset_id="blobs2"),
    ]
    for ds in datasets:
        (root / "source" / f"{ds.id}.csv").write_text(dataset_to_csv(ds))

    specs = [GeneratorSpec(e["technique"], dict(e.get("params", {})))
             for e in BUNDLED_SPECS]
    store = PreferenceStore(data_dir / "trials.jsonl")
    rng_util = np.random.default_rng(seed)
    for ds in datasets:
        emb_ids = [s.embedding_id(ds.id) for s in specs]
        utility = {e: float(u) for e, u in
                   zip(emb_ids, rng_util.normal(size=len(emb_ids)))}
        for t in synthetic_trials(seed + 11, emb_ids, ds.id, utility,
                                  n_trials=10):
            store.record_trial(t)

    config = {
        "seed": seed,
        "data_dir": "data",
        "ingest": [{"id": ds.id, "csv": f"source/{ds.id}.csv"}
                   for ds in datasets],
        "generation": {"manifest": BUNDLED_SPECS,
                       "datasets": [ds.id for ds in datasets]},
        "metrics": {"nerv_perplexity": 5.0},
        "pruning": {"threshold": 0.95},
        "models": {"forest": {"n_trees": 200, "max_depth": 10},
                   "btm": {"lambda": 0.021},
                   "ranker": {"n_trees": 15, "learning_rate": 0.3, "max_depth": 5}},
    }
    cfg_path = root / "config.json"
    cfg_path.write_text(_dump(config))
    return cfg_path
