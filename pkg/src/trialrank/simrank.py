"""Document-similarity baseline ranker.

Every candidate is scored against the set of trials already included in a
review. Distances are negated so that a higher score is always better.
"""

from __future__ import annotations

import enum
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError
from .ranking import RankedList, rank, rank_arrays
from .text import FeatureMatrix

__all__ = ["SimilarityMetric", "Aggregation", "score_candidates", "score_array", "rank", "rank_review"]


class SimilarityMetric(str, enum.Enum):
    COSINE = "cosine"
    EUCLIDEAN = "euclidean"
    SQUARED_EUCLIDEAN = "squared_euclidean"


class Aggregation(str, enum.Enum):
    MEAN = "mean"
    MAX = "max"
    CENTROID = "centroid"


def _dense_rows(X, idx) -> np.ndarray:
    sub = X[idx]
    return sub.toarray() if sp.issparse(sub) else np.asarray(sub, dtype=float)


def _row_norms_sq(X) -> np.ndarray:
    if sp.issparse(X):
        return np.asarray(X.multiply(X).sum(axis=1)).ravel()
    return np.einsum("ij,ij->i", X, X)


def _cosine(X, M: np.ndarray) -> np.ndarray:
    xn = np.sqrt(_row_norms_sq(X))
    mn = np.sqrt(np.einsum("ij,ij->i", M, M))
    dots = np.asarray(X @ M.T)
    denom = np.outer(xn, mn)
    # zero vectors score 0 by convention
    return np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)


def _squared_distance(X, M: np.ndarray) -> np.ndarray:
    d2 = _row_norms_sq(X)[:, None] + np.einsum("ij,ij->i", M, M)[None, :] - 2.0 * np.asarray(X @ M.T)
    return np.maximum(d2, 0.0)


def score_array(features, member_rows, metric=SimilarityMetric.COSINE, aggregation=Aggregation.MEAN) -> np.ndarray:
    """Scores for every row of ``features`` against rows ``member_rows``."""
    metric = SimilarityMetric(metric)
    aggregation = Aggregation(aggregation)
    X = features.values if isinstance(features, FeatureMatrix) else features
    if not sp.issparse(X):
        X = np.asarray(X, dtype=float)
    member_rows = np.asarray(member_rows, dtype=np.int64)
    if member_rows.size == 0:
        raise ValidationError("the included set is empty")
    M = _dense_rows(X, member_rows)
    if aggregation is Aggregation.CENTROID:
        M = M.mean(axis=0, keepdims=True)

    if metric is SimilarityMetric.COSINE:
        sim = _cosine(X, M)
    elif metric is SimilarityMetric.SQUARED_EUCLIDEAN:
        sim = -_squared_distance(X, M)
    else:
        sim = -np.sqrt(_squared_distance(X, M))

    if aggregation is Aggregation.MAX:
        return sim.max(axis=1)
    return sim.mean(axis=1)


def score_candidates(features: FeatureMatrix, included: Iterable[str], metric=SimilarityMetric.COSINE,
                     aggregation=Aggregation.MEAN) -> dict[str, float]:
    """Map every document id to its aggregated similarity with ``included``."""
    index = features.row_index()
    included = sorted(set(included))
    missing = [t for t in included if t not in index]
    if missing:
        raise ValidationError(f"included ids not in the feature matrix: {missing[:10]}")
    scores = score_array(features, [index[t] for t in included], metric, aggregation)
    return dict(zip(features.rows, scores.tolist()))


def rank_review(features: FeatureMatrix, review_id: str, included: Iterable[str],
                metric=SimilarityMetric.COSINE, aggregation=Aggregation.MEAN) -> RankedList:
    """Score and rank all documents for one review, excluding its included trials."""
    metric = SimilarityMetric(metric)
    aggregation = Aggregation(aggregation)
    included = sorted(set(included))
    index = features.row_index()
    missing = [t for t in included if t not in index]
    if missing:
        raise ValidationError(f"review {review_id}: ids not in the feature matrix: {missing[:10]}")
    scores = score_array(features, [index[t] for t in included], metric, aggregation)
    meta = {"method": "simrank", "metric": metric.value, "aggregation": aggregation.value}
    if features.vocab_hash:
        meta["vocab_hash"] = features.vocab_hash
    return rank_arrays(features.rows, scores, included, review_id=review_id, meta=meta)
