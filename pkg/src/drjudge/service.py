"""HTTP facade over the pipeline.

Responses are the owning modules' JSON artifacts verbatim. Slow work
(projection generation plus metric measurement) runs through a job queue:
the POST returns a job id and GET /jobs/{id} reports progress. Jobs are
processed one at a time, so per-dataset mutations are serialized.
"""

from __future__ import annotations

import io
import json
import queue
import threading
import zipfile
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .data import Dataset, dataset_from_csv, ingest_image_folder
from .errors import (DrJudgeError, NumericalError, UndefinedMetricError,
                     ValidationError)
from .generators import GeneratorSpec, generate
from .measure import measure_dataset
from .pipeline import (ArtifactStore, PipelineConfig, metamap_dataset,
                       rank_dataset)
from .preferences import TrialRecord


@dataclass
class Job:
    id: str
    dataset_id: str
    status: str = "pending"      # pending -> running -> done | failed
    progress: float = 0.0
    error: str = ""

    def to_dict(self):
        return {"id": self.id, "dataset_id": self.dataset_id,
                "status": self.status, "progress": self.progress,
                "error": self.error}


class JobRunner:
    """Single worker; state transitions are lock-protected and monotone."""

    def __init__(self):
        self._jobs: dict[str, Job] = {}
        self._q: queue.Queue = queue.Queue()
        self._lock = threading.Lock()
        self._counter = 0
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def submit(self, dataset_id, fn) -> Job:
        with self._lock:
            self._counter += 1
            job = Job(id=f"job-{self._counter:04d}", dataset_id=dataset_id)
            self._jobs[job.id] = job
        self._q.put((job, fn))
        return job

    def get(self, job_id) -> Job | None:
        with self._lock:
            return self._jobs.get(job_id)

    def _set(self, job, **kw):
        with self._lock:
            for k, v in kw.items():
                setattr(job, k, v)

    def _loop(self):
        while True:
            job, fn = self._q.get()
            self._set(job, status="running")
            try:
                fn(lambda frac: self._set(job, progress=float(frac)))
                self._set(job, status="done", progress=1.0)
            except Exception as exc:
                self._set(job, status="failed", error=str(exc))


def create_app(cfg: PipelineConfig) -> FastAPI:
    app = FastAPI(title="drjudge")
    store = ArtifactStore(cfg.data_dir)
    trials = store.trial_store()
    runner = JobRunner()
    mcfg = cfg.metric_config()

    @app.exception_handler(DrJudgeError)
    async def _domain_error(request: Request, exc: DrJudgeError):
        if isinstance(exc, UndefinedMetricError):
            code = 422
        elif isinstance(exc, ValidationError):
            code = 400
        elif isinstance(exc, NumericalError):
            code = 500
        else:
            code = 500
        return JSONResponse(status_code=code, content={"error": str(exc)})

    def _dataset_or_404(ds_id: str) -> Dataset:
        if ds_id not in store.dataset_ids():
            raise HTTPException(404, f"unknown dataset {ds_id!r}")
        return store.load_dataset(ds_id)

    @app.get("/datasets")
    def list_datasets():
        out = []
        for ds_id in store.dataset_ids():
            meta = json.loads((store.dataset_dir(ds_id) / "meta.json").read_text())
            out.append(meta)
        return out

    @app.post("/datasets", status_code=201)
    async def upload_dataset(request: Request, id: str):
        body = await request.body()
        ctype = request.headers.get("content-type", "")
        if id in store.dataset_ids():
            raise HTTPException(409, f"dataset {id!r} already exists")
        if "zip" in ctype:
            import tempfile
            with tempfile.TemporaryDirectory() as tmp:
                with zipfile.ZipFile(io.BytesIO(body)) as zf:
                    zf.extractall(tmp)
                ds, report = ingest_image_folder(tmp, side=28, dataset_id=id)
            store.write_dataset(ds)
        else:
            ds = dataset_from_csv(body.decode("utf-8"), id)
            store.write_dataset(ds)
        return {"id": id, "n": ds.n, "dim": ds.dim,
                "labeled": ds.labels is not None}

    @app.post("/datasets/{ds_id}/projections", status_code=202)
    async def start_projections(ds_id: str, request: Request):
        ds = _dataset_or_404(ds_id)
        body = json.loads(await request.body())
        manifest = body["manifest"] if isinstance(body, dict) else body
        opts = body.get("metrics", {}) if isinstance(body, dict) else {}
        if opts.get("require_separability") and ds.labels is None:
            raise UndefinedMetricError(
                f"dataset {ds_id!r} has no labels: separability metrics "
                "are unavailable")
        specs = [GeneratorSpec(e["technique"], dict(e.get("params", {})))
                 for e in manifest]
        if not specs:
            raise ValidationError("projection manifest is empty")

        def work(set_progress):
            total = 2 * len(specs)
            embs = []
            for i, spec in enumerate(specs):
                emb = generate(ds, spec)
                store.write_embedding(emb)
                embs.append(emb)
                set_progress((i + 1) / total)
            all_embs = store.load_embeddings(ds_id)
            raw, norm = measure_dataset(
                ds, all_embs, mcfg,
                progress=lambda d, n: set_progress(0.5 + 0.5 * d / n))
            store.write_metrics(ds_id, raw, norm)

        job = runner.submit(ds_id, work)
        return job.to_dict()

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str):
        job = runner.get(job_id)
        if job is None:
            raise HTTPException(404, f"unknown job {job_id!r}")
        return job.to_dict()

    @app.get("/datasets/{ds_id}/metrics")
    def dataset_metrics(ds_id: str):
        _dataset_or_404(ds_id)
        f = store.metrics_dir(ds_id) / "vectors.json"
        if not f.exists():
            raise HTTPException(404, f"no metrics computed for {ds_id!r}")
        return json.loads(f.read_text())

    @app.post("/rank")
    async def rank(request: Request):
        body = json.loads(await request.body())
        ds_id = body["dataset_id"]
        model_id = body.get("model_id", "ranker")
        _dataset_or_404(ds_id)
        if not (store.root / "models" / f"{model_id}.json").exists():
            raise HTTPException(404, f"unknown model {model_id!r}")
        payload = rank_dataset(store, ds_id, model_id)
        store.write_ranking(ds_id, payload)
        return payload

    @app.get("/rankings/{ds_id}")
    def ranking(ds_id: str):
        f = store.root / "rankings" / f"{ds_id}.json"
        if not f.exists():
            raise HTTPException(404, f"no ranking for dataset {ds_id!r}")
        return json.loads(f.read_text())

    @app.get("/metamap/{ds_id}")
    def metamap(ds_id: str):
        f = store.root / "metamaps" / f"{ds_id}.json"
        if f.exists():
            return json.loads(f.read_text())
        if not (store.root / "rankings" / f"{ds_id}.json").exists():
            raise HTTPException(404, f"no ranking for dataset {ds_id!r}; "
                                "rank it before requesting a metamap")
        text = metamap_dataset(store, ds_id)
        store.write_metamap(ds_id, text)
        return json.loads(text)

    @app.post("/trials", status_code=201)
    async def post_trial(request: Request):
        body = json.loads(await request.body())
        record = TrialRecord(**body)   # raises ValidationError -> 400
        if record.trial_id in trials:
            raise HTTPException(409, f"duplicate trial_id {record.trial_id!r}")
        trials.record_trial(record)
        return {"trial_id": record.trial_id, "recorded": len(trials)}

    return app
