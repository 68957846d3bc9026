"""Trial records, pairwise-preference aggregation, and disagreement stats.

One trial shows 8 projections of one dataset; the rater spends up to 15
hearts (4 per projection max) and may cross out projections instead. The
store is an append-only JSON-lines file with an in-memory index; no
database is needed at desk scale.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import ValidationError

TRIAL_SIZE = 8
HEART_BUDGET = 15
MAX_HEARTS_PER_PROJECTION = 4
DIFFICULTIES = ("easy", "medium", "hard")


@dataclass(frozen=True)
class TrialRecord:
    trial_id: str
    user_id: str
    dataset_id: str
    shown: tuple          # ordered embedding ids, length 8
    hearts: tuple         # per-embedding ints, aligned with shown
    crossed_out: tuple    # per-embedding bools, aligned with shown
    difficulty: str = "medium"
    timestamp: str = ""

    def __post_init__(self):
        object.__setattr__(self, "shown", tuple(self.shown))
        object.__setattr__(self, "hearts", tuple(int(h) for h in self.hearts))
        object.__setattr__(self, "crossed_out", tuple(bool(c) for c in self.crossed_out))
        if len(self.shown) != TRIAL_SIZE:
            raise ValidationError(
                f"trial size violation: {len(self.shown)} projections shown, "
                f"expected {TRIAL_SIZE}")
        if len(set(self.shown)) != TRIAL_SIZE:
            raise ValidationError("trial shows a duplicate embedding id")
        if len(self.hearts) != TRIAL_SIZE or len(self.crossed_out) != TRIAL_SIZE:
            raise ValidationError("hearts and crossed_out must align with shown")
        if any(h < 0 for h in self.hearts):
            raise ValidationError("negative hearts")
        if any(h > MAX_HEARTS_PER_PROJECTION for h in self.hearts):
            raise ValidationError(
                f"per-projection maximum violation: a projection has "
                f"{max(self.hearts)} hearts > {MAX_HEARTS_PER_PROJECTION}")
        if sum(self.hearts) > HEART_BUDGET:
            raise ValidationError(
                f"hearts budget violation: {sum(self.hearts)} > {HEART_BUDGET}")
        if any(c and h > 0 for c, h in zip(self.crossed_out, self.hearts)):
            raise ValidationError("crossed-out projection must have 0 hearts")
        if self.difficulty not in DIFFICULTIES:
            raise ValidationError(f"difficulty must be one of {DIFFICULTIES}")

    def to_json(self) -> str:
        d = asdict(self)
        d["shown"] = list(self.shown)
        d["hearts"] = list(self.hearts)
        d["crossed_out"] = list(self.crossed_out)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "TrialRecord":
        d = json.loads(line)
        return cls(**d)


@dataclass(frozen=True)
class PairwisePreference:
    """How often emb_a beat emb_b over their decided co-occurrences."""

    dataset_id: str
    emb_a: str
    emb_b: str
    pct_a_over_b: float
    n_comparisons: int


class PreferenceStore:
    """Append-only JSONL trial log with an in-memory index.

    Recording the same trial twice is a no-op; recording a different trial
    under an existing id is an error. Lines are fsynced so concurrent
    readers always see complete records.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._index: dict[str, TrialRecord] = {}
        self._order: list[str] = []
        if self.path.exists():
            for line in self.path.read_text().splitlines():
                if line.strip():
                    t = TrialRecord.from_json(line)
                    self._index[t.trial_id] = t
                    self._order.append(t.trial_id)

    def __len__(self):
        return len(self._order)

    def __contains__(self, trial_id):
        return trial_id in self._index

    def record_trial(self, t: TrialRecord) -> str:
        existing = self._index.get(t.trial_id)
        if existing is not None:
            if existing == t:
                return t.trial_id
            raise ValidationError(
                f"trial_id {t.trial_id!r} already recorded with different content")
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a") as f:
            f.write(t.to_json() + "\n")
            f.flush()
            os.fsync(f.fileno())
        self._index[t.trial_id] = t
        self._order.append(t.trial_id)
        return t.trial_id

    def trials(self) -> list[TrialRecord]:
        return [self._index[i] for i in self._order]


def _decide(trial: TrialRecord, i: int, j: int):
    """1 if shown[i] beats shown[j], -1 for the reverse, None for a tie."""
    hi, hj = trial.hearts[i], trial.hearts[j]
    if hi != hj:
        return 1 if hi > hj else -1
    ci, cj = trial.crossed_out[i], trial.crossed_out[j]
    if cj and not ci:
        return 1
    if ci and not cj:
        return -1
    return None


def aggregate_pairwise(trials) -> list[PairwisePreference]:
    """Percentages of decided comparisons per embedding pair."""
    if not trials:
        raise ValidationError("no trials to aggregate")
    wins: dict[tuple[str, str, str], list[int]] = {}
    for t in trials:
        for i in range(TRIAL_SIZE):
            for j in range(i + 1, TRIAL_SIZE):
                outcome = _decide(t, i, j)
                if outcome is None:
                    continue
                a, b = t.shown[i], t.shown[j]
                won = outcome == 1
                if a > b:
                    a, b = b, a
                    won = not won
                key = (t.dataset_id, a, b)
                cell = wins.setdefault(key, [0, 0])
                cell[0] += int(won)
                cell[1] += 1
    out = []
    for (ds, a, b) in sorted(wins):
        w, n = wins[(ds, a, b)]
        out.append(PairwisePreference(dataset_id=ds, emb_a=a, emb_b=b,
                                      pct_a_over_b=w / n, n_comparisons=n))
    return out


def disagreement(prefs) -> float:
    """Mean minority share over pairs, comparison-weighted; in [0, 0.5]."""
    if not prefs:
        return 0.0
    num = sum(p.n_comparisons * min(p.pct_a_over_b, 1.0 - p.pct_a_over_b)
              for p in prefs)
    den = sum(p.n_comparisons for p in prefs)
    return num / den


def technique_matrix(prefs, embeddings) -> tuple[list[str], np.ndarray]:
    """Fraction of decided comparisons won, aggregated by DR technique.

    Cell (i, j) is how often technique i's embedding beat technique j's.
    The diagonal and technique pairs with no comparisons sit at 0.5.
    """
    tech_of = {e.id: e.technique for e in embeddings}
    techniques = sorted(set(tech_of.values()))
    t_idx = {t: i for i, t in enumerate(techniques)}
    T = len(techniques)
    wins = np.zeros((T, T))
    for p in prefs:
        ta, tb = tech_of.get(p.emb_a), tech_of.get(p.emb_b)
        if ta is None or tb is None:
            continue
        wa = p.pct_a_over_b * p.n_comparisons
        wins[t_idx[ta], t_idx[tb]] += wa
        wins[t_idx[tb], t_idx[ta]] += p.n_comparisons - wa
    totals = wins + wins.T
    with np.errstate(invalid="ignore"):
        matrix = np.where(totals > 0, wins / np.where(totals > 0, totals, 1.0), 0.5)
    np.fill_diagonal(matrix, 0.5)
    return techniques, matrix


def binary_labels(trials) -> list[tuple[str, int, str]]:
    """Good/bad labels: hearts >= 1 is good, crossed out is bad.

    Projections with zero hearts that were not crossed out carry no label
    and are excluded. Conflicting labels across users stay as separate rows.
    """
    out = []
    for t in trials:
        for emb_id, h, c in zip(t.shown, t.hearts, t.crossed_out):
            if h >= 1:
                out.append((emb_id, 1, t.user_id))
            elif c:
                out.append((emb_id, 0, t.user_id))
    return out


def preferences_to_csv(prefs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["dataset_id", "emb_a", "emb_b", "pct_a_over_b", "n_comparisons"])
    for p in prefs:
        w.writerow([p.dataset_id, p.emb_a, p.emb_b, repr(p.pct_a_over_b),
                    p.n_comparisons])
    return buf.getvalue()
