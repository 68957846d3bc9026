"""Datasets, embeddings, distance/rank matrices, and k-neighborhood machinery.

Everything here is immutable after construction and shared read-only by all
metric modules. Ranks use deterministic tie-breaking (equal distances ordered
by ascending point index) so every downstream metric is reproducible.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import squareform, pdist

from .errors import DataError, ParameterError, ValidationError

TECHNIQUES = ("PCA", "MDS", "Isomap", "tSNE", "GRP", "external")


@dataclass(frozen=True)
class Dataset:
    """A high-dimensional point cloud with optional class labels."""

    id: str
    points: np.ndarray          # (n, D) float
    labels: np.ndarray | None = None   # (n,) int in [0, C) or None
    source: str = "numeric-table"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 2:
            raise ValidationError(f"points must be a 2D matrix, got ndim={pts.ndim}")
        n, d = pts.shape
        if n < 3:
            raise ValidationError(f"dataset needs at least 3 points, got {n}")
        if d < 1:
            raise ValidationError("dataset needs at least one feature")
        if not np.all(np.isfinite(pts)):
            raise DataError(f"dataset {self.id!r} contains non-finite feature values")
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=int)
            object.__setattr__(self, "labels", lab)
            if lab.shape != (n,):
                raise ValidationError("labels must be one class id per point")
            if lab.min() < 0:
                raise ValidationError("labels must be non-negative class ids")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n_classes(self) -> int:
        if self.labels is None:
            return 0
        return int(self.labels.max()) + 1


@dataclass(frozen=True)
class Embedding:
    """A 2D projection of a Dataset plus provenance (technique, params)."""

    dataset_id: str
    coords: np.ndarray          # (n, 2) float
    technique: str = "external"
    params: dict = field(default_factory=dict)
    id: str = ""

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        object.__setattr__(self, "coords", coords)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ValidationError(f"embedding coords must be n x 2, got {coords.shape}")
        if not np.all(np.isfinite(coords)):
            raise DataError("embedding contains non-finite coordinates")
        if self.technique not in TECHNIQUES:
            raise ValidationError(f"unknown technique {self.technique!r}")
        if not self.id:
            object.__setattr__(self, "id", f"{self.dataset_id}:{self.technique}")

    @property
    def n(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True)
class DistanceRankModel:
    """Pairwise distances and neighbor ranks in both spaces.

    r_hd[i, j] is the rank (1..n-1) of point j by HD distance to point i,
    self excluded; ties broken by ascending point index. Same for r_ld.
    The diagonal of the rank matrices is 0 as a sentinel.
    """

    d_hd: np.ndarray
    d_ld: np.ndarray
    r_hd: np.ndarray
    r_ld: np.ndarray

    @property
    def n(self) -> int:
        return self.d_hd.shape[0]


@dataclass(frozen=True)
class NeighborhoodPair:
    """HD and LD k-nearest-neighbor sets plus their differences.

    nu[i] holds the k HD-nearest neighbors of i, rho[i] the k LD-nearest.
    U[i] = rho[i] \\ nu[i] (intruders), V[i] = nu[i] \\ rho[i] (escapees).
    Sets are stored as sorted index arrays.
    """

    k: int
    nu: list
    rho: list
    U: list
    V: list


def _rank_matrix(dist: np.ndarray) -> np.ndarray:
    """Ranks 1..n-1 per row, self excluded, equal distances by ascending index."""
    n = dist.shape[0]
    d = dist.copy()
    np.fill_diagonal(d, -1.0)   # self sorts strictly first, even with duplicates
    idx = np.tile(np.arange(n), (n, 1))
    # lexsort: primary key distance, secondary key column index
    order = np.lexsort((idx, d), axis=1)
    ranks = np.empty((n, n), dtype=np.int64)
    rows = np.arange(n)[:, None]
    ranks[rows, order] = np.arange(n)[None, :]
    return ranks


def build_distance_rank_model(ds: Dataset, emb: Embedding,
                              metric: str = "euclidean") -> DistanceRankModel:
    """Precompute distances and neighbor ranks shared by all HD->LD metrics."""
    if metric != "euclidean":
        raise ParameterError(f"unsupported metric {metric!r}")
    if emb.n != ds.n:
        raise ValidationError(
            f"embedding has {emb.n} rows but dataset {ds.id!r} has {ds.n}")
    d_hd = squareform(pdist(ds.points))
    d_ld = squareform(pdist(emb.coords))
    if not (np.all(np.isfinite(d_hd)) and np.all(np.isfinite(d_ld))):
        raise DataError("non-finite pairwise distance")
    return DistanceRankModel(d_hd=d_hd, d_ld=d_ld,
                             r_hd=_rank_matrix(d_hd), r_ld=_rank_matrix(d_ld))


def neighborhoods(drm: DistanceRankModel, k: int) -> NeighborhoodPair:
    """k-nearest-neighbor sets in both spaces and their set differences."""
    n = drm.n
    if not 1 <= k <= n - 2:
        raise ParameterError(f"k must be in [1, {n - 2}], got {k}")
    nu, rho, U, V = [], [], [], []
    for i in range(n):
        nu_i = np.nonzero((drm.r_hd[i] >= 1) & (drm.r_hd[i] <= k))[0]
        rho_i = np.nonzero((drm.r_ld[i] >= 1) & (drm.r_ld[i] <= k))[0]
        nu.append(nu_i)
        rho.append(rho_i)
        U.append(np.setdiff1d(rho_i, nu_i))
        V.append(np.setdiff1d(nu_i, rho_i))
    return NeighborhoodPair(k=k, nu=nu, rho=rho, U=U, V=V)


# ---------------------------------------------------------------------------
# ingestion

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff",
                    ".webp", ".ppm", ".pgm"}


@dataclass
class IngestReport:
    loaded: int = 0
    skipped: list = field(default_factory=list)   # (path, reason)


def ingest_image_folder(path, side: int, dataset_id: str | None = None):
    """Load a folder of images as a Dataset of flattened grayscale pixels.

    Each image is converted to grayscale, resized to side x side, and
    flattened row-major into D = side**2 features scaled to [0, 1]. If the
    folder contains subfolders, each subfolder is a class, labeled in
    lexicographic order. Undecodable files are skipped and listed in the
    returned IngestReport.

    Returns (dataset, report).
    """
    from PIL import Image

    if side < 4:
        raise ParameterError(f"side must be >= 4, got {side}")
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"not a directory: {root}")

    subdirs = sorted(p for p in root.iterdir() if p.is_dir())
    sources: list[tuple[Path, int | None]] = []
    if subdirs:
        for ci, sub in enumerate(subdirs):
            for f in sorted(sub.iterdir()):
                if f.suffix.lower() in IMAGE_EXTENSIONS:
                    sources.append((f, ci))
    else:
        for f in sorted(root.iterdir()):
            if f.suffix.lower() in IMAGE_EXTENSIONS:
                sources.append((f, None))

    report = IngestReport()
    rows, labels = [], []
    for f, label in sources:
        try:
            with Image.open(f) as img:
                gray = img.convert("L").resize((side, side), Image.BILINEAR)
            rows.append(np.asarray(gray, dtype=float).ravel() / 255.0)
            labels.append(label)
        except Exception as exc:  # undecodable file: skip, keep going
            report.skipped.append((str(f), str(exc)))
            warnings.warn(f"skipping undecodable image {f}: {exc}")
    if not rows:
        raise DataError(f"no decodable images found under {root}")
    report.loaded = len(rows)

    lab = None
    if subdirs:
        lab = np.asarray(labels, dtype=int)
    ds = Dataset(id=dataset_id or root.name, points=np.vstack(rows),
                 labels=lab, source="image-folder")
    return ds, report


# ---------------------------------------------------------------------------
# CSV interchange

def dataset_to_csv(ds: Dataset) -> str:
    """Header row, optional `label` column, numeric feature columns."""
    buf = io.StringIO()
    w = csv.writer(buf)
    header = [f"f{j}" for j in range(ds.dim)]
    if ds.labels is not None:
        header.append("label")
    w.writerow(header)
    for i in range(ds.n):
        row = [repr(v) for v in ds.points[i]]
        if ds.labels is not None:
            row.append(str(int(ds.labels[i])))
        w.writerow(row)
    return buf.getvalue()


def dataset_from_csv(text: str, dataset_id: str) -> Dataset:
    rows = list(csv.reader(io.StringIO(text)))
    if len(rows) < 2:
        raise DataError("dataset CSV needs a header row and at least one point")
    header = rows[0]
    try:
        label_col = header.index("label")
    except ValueError:
        label_col = -1
    feat_cols = [j for j in range(len(header)) if j != label_col]
    points, labels = [], []
    for line_no, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            points.append([float(row[j]) for j in feat_cols])
            if label_col >= 0:
                labels.append(int(row[label_col]))
        except (ValueError, IndexError) as exc:
            raise DataError(f"bad dataset CSV row {line_no}: {exc}") from exc
    return Dataset(id=dataset_id, points=np.asarray(points, dtype=float),
                   labels=np.asarray(labels, dtype=int) if label_col >= 0 else None)


def embedding_to_csv(emb: Embedding) -> str:
    """Columns id,x,y matching dataset row order."""
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["id", "x", "y"])
    for i in range(emb.n):
        w.writerow([i, repr(emb.coords[i, 0]), repr(emb.coords[i, 1])])
    return buf.getvalue()


def embedding_from_csv(text: str, dataset_id: str, embedding_id: str = "",
                       technique: str = "external", params: dict | None = None) -> Embedding:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:3] != ["id", "x", "y"]:
        raise DataError("embedding CSV must start with header id,x,y")
    coords = []
    for line_no, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            if int(row[0]) != len(coords):
                raise DataError(f"embedding CSV row {line_no} out of order")
            coords.append((float(row[1]), float(row[2])))
        except ValueError as exc:
            raise DataError(f"bad embedding CSV row {line_no}: {exc}") from exc
    return Embedding(dataset_id=dataset_id, coords=np.asarray(coords, dtype=float),
                     technique=technique, params=params or {}, id=embedding_id)
