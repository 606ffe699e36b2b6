"""Ranked candidate lists shared by every ranker."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .container import atomic_write_text
from .errors import ValidationError


class RankedEntry(NamedTuple):
    trial_id: str
    score: float
    rank: int


@dataclass(frozen=True)
class RankedList:
    review_id: str
    entries: tuple[RankedEntry, ...]
    excluded_ids: frozenset[str] = frozenset()
    meta: dict = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> list[str]:
        return [e.trial_id for e in self.entries]

    def rank_of(self) -> dict[str, int]:
        return {e.trial_id: e.rank for e in self.entries}

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# review_id: {self.review_id}\n")
        for key in sorted(self.meta):
            buf.write(f"# {key}: {self.meta[key]}\n")
        buf.write(f"# excluded: {len(self.excluded_ids)}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["rank", "trial_id", "score"])
        for e in self.entries:
            writer.writerow([e.rank, e.trial_id, repr(float(e.score))])
        return buf.getvalue()

    def save(self, path) -> None:
        atomic_write_text(path, self.to_csv())

    @classmethod
    def from_csv(cls, text: str, *, source="<ranked list>") -> "RankedList":
        meta = {}
        body = []
        for line in text.splitlines():
            if line.startswith("# "):
                key, _, value = line[2:].partition(": ")
                meta[key] = value
            else:
                body.append(line)
        review = meta.pop("review_id", None)
        meta.pop("excluded", None)
        if review is None:
            raise ValidationError(f"{source}: missing review_id header")
        rows = list(csv.DictReader(body))
        entries = tuple(RankedEntry(r["trial_id"], float(r["score"]), int(r["rank"])) for r in rows)
        return cls(review, entries, frozenset(), meta)

    @classmethod
    def load(cls, path) -> "RankedList":
        return cls.from_csv(Path(path).read_text(encoding="utf-8"), source=str(path))


def rank_arrays(
    ids: Sequence[str],
    scores: np.ndarray,
    excluded: Iterable[str] = (),
    *,
    review_id: str = "",
    meta: Mapping | None = None,
) -> RankedList:
    """Order by descending score, ties by ascending trial id; drop ``excluded``."""
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (len(ids),):
        raise ValidationError("scores and ids differ in length")
    if np.isnan(scores).any():
        raise ValidationError("scores contain NaN")
    excluded = frozenset(excluded)
    ids_arr = np.asarray(ids, dtype=object)
    keep = np.array([i not in excluded for i in ids], dtype=bool)
    kept_ids = ids_arr[keep]
    kept_scores = scores[keep]
    # lexsort: last key is primary
    order = np.lexsort((kept_ids.astype(str), -kept_scores))
    entries = tuple(
        RankedEntry(str(kept_ids[j]), float(kept_scores[j]), r) for r, j in enumerate(order, 1)
    )
    return RankedList(review_id, entries, excluded & set(ids), dict(meta or {}))


def rank(scores: Mapping[str, float], excluded: Iterable[str] = (), *, review_id: str = "",
         meta: Mapping | None = None) -> RankedList:
    """Rank a ``trial_id -> score`` mapping (higher is better)."""
    ids = list(scores)
    return rank_arrays(ids, np.array([scores[i] for i in ids], dtype=float), excluded,
                       review_id=review_id, meta=meta)
