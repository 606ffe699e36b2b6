"""Train/test link splits and ranking metrics (median rank, recall@N, WSS)."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .container import atomic_write_text
from .errors import ValidationError
from .matfac import LinkMatrix
from .ranking import RankedList
from .records import Corpus, ReviewLinkSet, date_sort_key

log = logging.getLogger(__name__)

SPLIT_FORMAT = "trialrank-split"
SPLIT_VERSION = 1
DEFAULT_GRID = (1, 5, 10, 25, 50, 100, 200, 400, 700, 1000, 2000, 5000, 10000, 20000, 50000, 100000)
WSS_VARIANTS = ("global_depth", "per_review_depth", "cohen")

# Published results on the full 128,392-registration snapshot (179 reviews).
# Kept for side-by-side reporting; not reproducible without that corpus.
REFERENCE_RESULTS = (
    {"method": "matfac, LDA topics (400), 50 latent factors", "wss_at_95": 0.992, "median_rank": 59.0,
     "recall_at_100": 0.609},
    {"method": "simrank, squared euclidean, full tf-idf", "wss_at_95": 0.995, "median_rank": 138.0,
     "recall_at_100": 0.428},
    {"method": "simrank, euclidean, full tf-idf", "wss_at_95": 0.995, "median_rank": 139.0,
     "recall_at_100": 0.426},
    {"method": "simrank, cosine, full tf-idf", "wss_at_95": 0.995, "median_rank": 154.0, "recall_at_100": 0.417},
)
REFERENCE_CANDIDATES = 128_392
RANDOM_MEDIAN_RANK = 64_196


# ---------------------------------------------------------------------------
# Splits


@dataclass(frozen=True)
class ReviewSplit:
    review_id: str
    train: tuple[str, ...]
    test: tuple[str, ...]


@dataclass(frozen=True)
class SplitSpec:
    reviews: tuple[ReviewSplit, ...]
    ordering_basis: str = "completion_date"
    min_train: int = 3
    train_fraction: float | None = None
    excluded_reviews: tuple[str, ...] = ()
    corpus_digest: str | None = None

    def __post_init__(self):
        if self.ordering_basis not in ("completion_date", "explicit"):
            raise ValidationError(f"unknown ordering_basis {self.ordering_basis!r}")
        for rs in self.reviews:
            if set(rs.train) & set(rs.test):
                raise ValidationError(f"review {rs.review_id}: train and test overlap")
            if len(rs.train) < self.min_train:
                raise ValidationError(f"review {rs.review_id} has fewer than {self.min_train} training links")

    @property
    def review_ids(self) -> tuple[str, ...]:
        return tuple(r.review_id for r in self.reviews)

    def __getitem__(self, review_id: str) -> ReviewSplit:
        for r in self.reviews:
            if r.review_id == review_id:
                return r
        raise KeyError(review_id)

    def link_matrix(self, trial_ids: Sequence[str]) -> LinkMatrix:
        review_ids = self.review_ids
        train = [(t, r.review_id) for r in self.reviews for t in r.train]
        test = [(t, r.review_id) for r in self.reviews for t in r.test]
        return LinkMatrix.from_pairs(trial_ids, review_ids, train, test)

    def to_json(self) -> str:
        doc = {
            "format": SPLIT_FORMAT,
            "format_version": SPLIT_VERSION,
            "ordering_basis": self.ordering_basis,
            "min_train": self.min_train,
            "train_fraction": self.train_fraction,
            "excluded_reviews": list(self.excluded_reviews),
            "corpus_digest": self.corpus_digest,
            "reviews": [{"review_id": r.review_id, "train": list(r.train), "test": list(r.test)}
                        for r in self.reviews],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        atomic_write_text(path, self.to_json())

    @classmethod
    def from_json(cls, text: str, *, source="<split>") -> "SplitSpec":
        doc = json.loads(text)
        if doc.get("format") != SPLIT_FORMAT or doc.get("format_version") != SPLIT_VERSION:
            raise ValidationError(f"{source}: not a trialrank split file")
        reviews = tuple(ReviewSplit(r["review_id"], tuple(r["train"]), tuple(r["test"])) for r in doc["reviews"])
        return cls(reviews, doc["ordering_basis"], doc["min_train"], doc.get("train_fraction"),
                   tuple(doc.get("excluded_reviews", ())), doc.get("corpus_digest"))

    @classmethod
    def load(cls, path) -> "SplitSpec":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ValidationError(f"cannot read split {path}: {exc}") from exc
        return cls.from_json(text, source=str(path))


def train_size(n_links: int, min_train: int, train_fraction: float | None) -> int:
    if train_fraction is None:
        return min_train
    return min(n_links - 1, max(min_train, math.floor(train_fraction * n_links + 0.5)))


def make_split(
    links: Sequence[ReviewLinkSet],
    corpus: Corpus,
    min_train: int = 3,
    train_fraction: float | None = 0.6,
) -> SplitSpec:
    """Date-ordered split: the oldest links of each review train, the newest test.

    The training share is ``round(train_fraction * n)`` clipped to
    ``[min_train, n - 1]``; ``train_fraction=None`` keeps exactly
    ``min_train``. Undated trials sort last and equal dates fall back to trial
    id. Reviews with ``<= min_train`` links cannot contribute a test link and
    are excluded with a warning.
    """
    if min_train < 1:
        raise ValidationError("min_train must be >= 1")
    if train_fraction is not None and not 0.0 < train_fraction < 1.0:
        raise ValidationError("train_fraction must lie in (0, 1)")
    out, excluded = [], []
    for ls in sorted(links, key=lambda x: x.review_id):
        if len(ls) <= min_train:
            excluded.append(ls.review_id)
            continue
        dated = []
        for tid, date in zip(ls.included_trial_ids, ls.completion_dates):
            if tid not in corpus:
                raise ValidationError(f"review {ls.review_id}: trial {tid} is not in the corpus")
            dated.append((date_sort_key(date or corpus[tid].completion_date), tid))
        ordered = [tid for _, tid in sorted(dated)]
        n_train = train_size(len(ordered), min_train, train_fraction)
        out.append(ReviewSplit(ls.review_id, tuple(ordered[:n_train]), tuple(ordered[n_train:])))
    if excluded:
        log.warning("excluded %d review(s) with <= %d links: %s", len(excluded), min_train, ", ".join(excluded))
    return SplitSpec(tuple(out), "completion_date", min_train, train_fraction, tuple(excluded), corpus.digest())


def explicit_split(assignments: Mapping[str, tuple[Sequence[str], Sequence[str]]], corpus: Corpus | None = None,
                   min_train: int = 1) -> SplitSpec:
    """Split from caller-supplied ``review_id -> (train_ids, test_ids)``."""
    reviews = []
    for rid in sorted(assignments):
        train, test = assignments[rid]
        if corpus is not None:
            missing = [t for t in (*train, *test) if t not in corpus]
            if missing:
                raise ValidationError(f"review {rid}: ids not in corpus: {missing[:10]}")
        reviews.append(ReviewSplit(rid, tuple(sorted(train)), tuple(sorted(test))))
    return SplitSpec(tuple(reviews), "explicit", min_train, None, (), corpus.digest() if corpus else None)


# ---------------------------------------------------------------------------
# Metrics


def median_rank(ranks: Sequence[float]) -> float:
    """Median of per-link ranks; an even count averages the two central values."""
    if len(ranks) == 0:
        raise ValidationError("median_rank of an empty rank list")
    return float(np.median(np.asarray(ranks, dtype=float)))


def recall_at(ranks: Sequence[int], n: int, total_test_links: int | None = None) -> float:
    """Share of test links ranked within the first ``n`` candidates."""
    if n < 1:
        raise ValidationError("N must be >= 1")
    total = len(ranks) if total_test_links is None else total_test_links
    if total == 0:
        return 0.0
    return int(np.sum(np.asarray(ranks) <= n)) / total


def recall_curve(ranks: Sequence[int], grid: Sequence[int], total_test_links: int | None = None) -> dict[int, float]:
    return {int(n): recall_at(ranks, n, total_test_links) for n in grid}


def _as_groups(ranks, n_candidates) -> tuple[list[np.ndarray], np.ndarray]:
    if isinstance(ranks, Mapping):
        keys = sorted(ranks)
        groups = [np.sort(np.asarray(ranks[k], dtype=np.int64)) for k in keys]
        if isinstance(n_candidates, Mapping):
            n = np.array([n_candidates[k] for k in keys], dtype=np.int64)
        else:
            n = np.full(len(keys), int(n_candidates), dtype=np.int64)
    else:
        groups = [np.sort(np.asarray(ranks, dtype=np.int64))]
        n = np.array([int(n_candidates)], dtype=np.int64)
    return groups, n


def wss_at_recall(ranks, recall_level: float = 0.95, n_candidates=None, *, variant: str = "global_depth") -> float:
    """Work saved over sampling at ``recall_level``.

    ``ranks`` is one review's test-link ranks or a mapping ``review_id ->
    ranks``; ``n_candidates`` is an int or a matching mapping.

    * ``global_depth``: the smallest depth ``d`` such that screening every
      review's list to ``d`` finds ``>= recall_level`` of all test links;
      WSS = 1 - screened / total candidates.
    * ``per_review_depth``: each review is screened to its own smallest depth
      reaching ``recall_level`` of its links.
    * ``cohen``: the ``global_depth`` value minus ``1 - recall_level``.
    """
    if not 0.0 < recall_level <= 1.0:
        raise ValidationError("recall_level must lie in (0, 1]")
    if variant not in WSS_VARIANTS:
        raise ValidationError(f"unknown WSS variant {variant!r}")
    if n_candidates is None:
        raise ValidationError("n_candidates is required")
    groups, n = _as_groups(ranks, n_candidates)
    total_links = sum(len(g) for g in groups)
    if total_links == 0:
        raise ValidationError("wss_at_recall needs at least one rank")
    for g, nv in zip(groups, n):
        if len(g) and (g[0] < 1 or g[-1] > nv):
            raise ValidationError("ranks must lie in [1, n_candidates]")
    total_candidates = int(n.sum())

    if variant == "per_review_depth":
        screened = 0
        for g in groups:
            if len(g):
                need = max(1, math.ceil(recall_level * len(g) - 1e-9))
                screened += int(g[need - 1])
        return 1.0 - screened / total_candidates

    need = max(1, math.ceil(recall_level * total_links - 1e-9))
    pooled = np.sort(np.concatenate(groups))
    depth = int(pooled[need - 1])
    screened = int(np.minimum(depth, n).sum())
    value = 1.0 - screened / total_candidates
    if variant == "cohen":
        value -= 1.0 - recall_level
    return value


# ---------------------------------------------------------------------------
# Reports


class LinkRank(NamedTuple):
    review_id: str
    trial_id: str
    rank: int


@dataclass(frozen=True)
class EvalReport:
    link_ranks: tuple[LinkRank, ...]
    median_rank: float
    recall_at: dict[int, float]
    wss95: float
    n_candidates: dict[str, int]
    wss_variants: dict[str, float] = field(default_factory=dict)
    label: str = ""

    def ranks(self) -> list[int]:
        return [lr.rank for lr in self.link_ranks]

    def ranks_by_review(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {r: [] for r in self.n_candidates}
        for lr in self.link_ranks:
            out[lr.review_id].append(lr.rank)
        return out

    def summary(self) -> dict:
        return {
            "method": self.label,
            "wss_at_95": self.wss95,
            "median_rank": self.median_rank,
            "recall_at_100": recall_at(self.ranks(), 100),
        }


def recall_grid(n_max: int, base: Sequence[int] = DEFAULT_GRID) -> list[int]:
    return [g for g in base if g < n_max] + [n_max]


def evaluate(rankings: Mapping[str, RankedList], split: SplitSpec, *, label: str = "",
             recall_level: float = 0.95, grid: Sequence[int] | None = None) -> EvalReport:
    """Locate every test link in its review's ranked list and aggregate."""
    link_ranks = []
    n_candidates = {}
    for rs in split.reviews:
        if rs.review_id not in rankings:
            raise ValidationError(f"no ranked list for review {rs.review_id}")
        rl = rankings[rs.review_id]
        positions = rl.rank_of()
        leaked = [t for t in rs.train if t in positions]
        if leaked:
            raise ValidationError(f"review {rs.review_id}: training links {leaked[:5]} appear in the ranking")
        n_candidates[rs.review_id] = len(rl)
        for t in rs.test:
            if t not in positions:
                raise ValidationError(f"review {rs.review_id}: test link {t} missing from the ranking")
            link_ranks.append(LinkRank(rs.review_id, t, positions[t]))
    if not link_ranks:
        raise ValidationError("split has no test links")
    ranks = [lr.rank for lr in link_ranks]
    by_review: dict[str, list[int]] = {r: [] for r in n_candidates}
    for lr in link_ranks:
        by_review[lr.review_id].append(lr.rank)
    grid = list(grid) if grid is not None else recall_grid(max(n_candidates.values()))
    variants = {v: wss_at_recall(by_review, recall_level, n_candidates, variant=v) for v in WSS_VARIANTS}
    return EvalReport(
        link_ranks=tuple(link_ranks),
        median_rank=median_rank(ranks),
        recall_at=recall_curve(ranks, grid),
        wss95=variants["global_depth"],
        n_candidates=n_candidates,
        wss_variants=variants,
        label=label,
    )


def _csv(rows: Sequence[Sequence], header: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(x) -> str:
    return repr(float(x))


def emit_report(reports: Sequence[EvalReport], out_dir) -> dict[str, Path]:
    """Write per-link ranks, the recall@N grid, WSS variants and the summary table."""
    out_dir = Path(out_dir)
    labels = [r.label for r in reports]
    if len(set(labels)) != len(labels):
        raise ValidationError("report labels must be unique")
    files = {
        "link_ranks": (
            ["method", "review_id", "trial_id", "rank"],
            [(r.label, lr.review_id, lr.trial_id, lr.rank) for r in reports for lr in r.link_ranks],
        ),
        "recall_grid": (
            ["method", "n", "recall"],
            [(r.label, n, _num(v)) for r in reports for n, v in sorted(r.recall_at.items())],
        ),
        "wss_variants": (
            ["method", "variant", "wss_at_95"],
            [(r.label, v, _num(r.wss_variants[v])) for r in reports for v in WSS_VARIANTS if v in r.wss_variants],
        ),
        "summary": (
            ["method", "wss_at_95", "median_rank", "recall_at_100"],
            [(s["method"], _num(s["wss_at_95"]), _num(s["median_rank"]), _num(s["recall_at_100"]))
             for s in (r.summary() for r in reports)],
        ),
        "reference_results": (
            ["method", "wss_at_95", "median_rank", "recall_at_100"],
            [(s["method"], _num(s["wss_at_95"]), _num(s["median_rank"]), _num(s["recall_at_100"]))
             for s in REFERENCE_RESULTS],
        ),
    }
    written = {}
    for name, (header, rows) in files.items():
        path = out_dir / f"{name}.csv"
        try:
            atomic_write_text(path, _csv(rows, header))
        except OSError as exc:
            raise ValidationError(f"cannot write {path}: {exc}") from exc
        written[name] = path
    return written
