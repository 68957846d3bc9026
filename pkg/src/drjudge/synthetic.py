"""Seeded synthetic data: point clouds, trial corpora, and preference
generators used by the demos, the test suite, and the bundled pipeline
fixture. Everything here is deterministic given its seed.
"""

from __future__ import annotations

import numpy as np

from .data import Dataset
from .preferences import (HEART_BUDGET, MAX_HEARTS_PER_PROJECTION, TRIAL_SIZE,
                          TrialRecord)


def random_dataset(seed: int, n: int = 20, dim: int = 4, n_classes: int = 0,
                   dataset_id: str | None = None) -> Dataset:
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, dim))
    labels = None
    if n_classes >= 1:
        if n < 2 * n_classes:
            raise ValueError("need n >= 2 * n_classes for two members per class")
        base = np.tile(np.arange(n_classes), 2)   # every class gets >= 2 members
        rest = rng.integers(0, n_classes, size=n - len(base))
        labels = np.concatenate([base, rest])
    return Dataset(id=dataset_id or f"rand{seed}", points=pts, labels=labels)


def blob_dataset(seed: int, centers, per_class: int = 12, spread: float = 0.4,
                 dataset_id: str = "blobs") -> Dataset:
    rng = np.random.default_rng(seed)
    centers = np.asarray(centers, dtype=float)
    pts, labels = [], []
    for c, center in enumerate(centers):
        pts.append(center + rng.normal(scale=spread, size=(per_class, len(center))))
        labels.extend([c] * per_class)
    return Dataset(id=dataset_id, points=np.vstack(pts),
                   labels=np.asarray(labels))


def swiss_roll(seed: int, n: int = 300) -> Dataset:
    """The classic rolled 2D sheet in 3D; unrollable only by geodesics."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(1.5 * np.pi, 4.5 * np.pi, size=n)
    height = rng.uniform(0.0, 21.0, size=n)
    pts = np.column_stack([t * np.cos(t), height, t * np.sin(t)])
    return Dataset(id=f"swiss{seed}", points=pts)


def utility_weights(seed: int, n_features: int = 20, n_active: int = 5,
                    min_magnitude: float = 0.8):
    """A sparse ground-truth utility: n_active nonzero weights."""
    rng = np.random.default_rng(seed)
    w = np.zeros(n_features)
    active = rng.choice(n_features, size=n_active, replace=False)
    signs = rng.choice([-1.0, 1.0], size=n_active)
    w[active] = signs * rng.uniform(min_magnitude, 2.0, size=n_active)
    return w


def synthetic_preference_pairs(seed: int, w: np.ndarray, n_items: int = 60,
                               n_pairs: int = 5000, comparisons_per_pair: int = 9,
                               noise_scale: float = 1.0):
    """Pairwise preferences sampled from a logistic utility model.

    Returns (metric_vectors dict, prefs list). Feature rows are uniform in
    [0, 1]; each sampled pair is judged comparisons_per_pair times with
    P(a beats b) = sigmoid((u_a - u_b) / noise_scale).
    """
    from .preferences import PairwisePreference

    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n_items, len(w)))
    utility = X @ w
    ids = [f"syn{i:03d}" for i in range(n_items)]
    vectors = {ids[i]: X[i] for i in range(n_items)}
    counts: dict[tuple[int, int], list[int]] = {}
    for _ in range(n_pairs):
        a, b = rng.choice(n_items, size=2, replace=False)
        if ids[a] > ids[b]:
            a, b = b, a
        p = 1.0 / (1.0 + np.exp(-(utility[a] - utility[b]) / noise_scale))
        wins = int(np.sum(rng.uniform(size=comparisons_per_pair) < p))
        cell = counts.setdefault((int(a), int(b)), [0, 0])
        cell[0] += wins
        cell[1] += comparisons_per_pair
    prefs = [PairwisePreference(dataset_id="syn", emb_a=ids[a], emb_b=ids[b],
                                pct_a_over_b=wins / n, n_comparisons=n)
             for (a, b), (wins, n) in sorted(counts.items())]
    return vectors, prefs


# relevance template for a group of 8, best-to-worst by utility
RELEVANCE_TEMPLATE = (4, 3, 2, 1, 1, 0, 0, -1)


def synthetic_rank_corpus(seed: int, w: np.ndarray, n_datasets: int = 11,
                          groups_per_dataset: int = 6):
    """Rank groups whose relevance order follows a known utility.

    Returns a list of RankGroup spanning n_datasets synthetic datasets, for
    leave-one-dataset-out experiments.
    """
    from .ranker import RankGroup, RankItem

    rng = np.random.default_rng(seed)
    groups = []
    for d in range(n_datasets):
        ds_id = f"synds{d:02d}"
        for g in range(groups_per_dataset):
            X = rng.uniform(size=(TRIAL_SIZE, len(w)))
            utility = X @ w
            order = np.argsort(-utility)
            rel = np.empty(TRIAL_SIZE, dtype=int)
            rel[order] = RELEVANCE_TEMPLATE
            items = [RankItem(embedding_id=f"{ds_id}:g{g}:e{i}",
                              features=X[i], relevance=int(rel[i]))
                     for i in range(TRIAL_SIZE)]
            groups.append(RankGroup(group_id=f"{ds_id}:g{g}", items=items,
                                    dataset_id=ds_id))
    return groups


def synthetic_trials(seed: int, embedding_ids, dataset_id: str,
                     utility: dict, n_trials: int = 12,
                     n_users: int = 6) -> list[TrialRecord]:
    """Trials whose hearts follow a utility ordering with light noise."""
    rng = np.random.default_rng(seed)
    embedding_ids = list(embedding_ids)
    if len(embedding_ids) < TRIAL_SIZE:
        raise ValueError("need at least 8 embeddings for a trial")
    trials = []
    for t in range(n_trials):
        shown = list(rng.choice(embedding_ids, size=TRIAL_SIZE, replace=False))
        u = np.asarray([utility[e] for e in shown])
        u = u + rng.normal(scale=0.05 * (np.std(u) + 1e-9), size=TRIAL_SIZE)
        order = np.argsort(-u)
        hearts = np.zeros(TRIAL_SIZE, dtype=int)
        crossed = np.zeros(TRIAL_SIZE, dtype=bool)
        budget = HEART_BUDGET
        award = (4, 4, 3, 2, 1, 1, 0, 0)
        for pos, i in enumerate(order):
            h = min(award[pos], MAX_HEARTS_PER_PROJECTION, budget)
            hearts[i] = h
            budget -= h
        crossed[order[-1]] = True
        hearts[order[-1]] = 0
        trials.append(TrialRecord(
            trial_id=f"{dataset_id}:t{t:03d}",
            user_id=f"user{t % n_users:02d}",
            dataset_id=dataset_id,
            shown=tuple(shown),
            hearts=tuple(int(h) for h in hearts),
            crossed_out=tuple(bool(c) for c in crossed),
            difficulty=("easy", "medium", "hard")[t % 3],
            timestamp=f"2024-01-{(t % 28) + 1:02d}T12:00:00Z"))
    return trials
