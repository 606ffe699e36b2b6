"""Latent Dirichlet allocation by collapsed Gibbs sampling.

Uniform variates are drawn from a numpy ``Generator`` outside the compiled
sweep, so a fixed seed reproduces the sampler state exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numba
import numpy as np
import scipy.sparse as sp

from . import container
from .errors import ValidationError
from .text import FeatureMatrix


@numba.njit(cache=True)
def _gibbs_sweep(docs, words, z, ndk, nkw, nk, alpha, beta, vbeta, u):
    n_topics = nk.shape[0]
    p = np.empty(n_topics)
    for i in range(docs.shape[0]):
        d = docs[i]
        w = words[i]
        k = z[i]
        ndk[d, k] -= 1
        nkw[k, w] -= 1
        nk[k] -= 1
        total = 0.0
        for t in range(n_topics):
            total += (ndk[d, t] + alpha) * (nkw[t, w] + beta) / (nk[t] + vbeta)
            p[t] = total
        target = u[i] * total
        k = 0
        while k < n_topics - 1 and p[k] <= target:
            k += 1
        z[i] = k
        ndk[d, k] += 1
        nkw[k, w] += 1
        nk[k] += 1


@numba.njit(cache=True)
def _foldin_sweep(words, z, nd, phi, alpha, u):
    n_topics = phi.shape[0]
    p = np.empty(n_topics)
    for i in range(words.shape[0]):
        w = words[i]
        k = z[i]
        nd[k] -= 1
        total = 0.0
        for t in range(n_topics):
            total += (nd[t] + alpha) * phi[t, w]
            p[t] = total
        target = u[i] * total
        k = 0
        while k < n_topics - 1 and p[k] <= target:
            k += 1
        z[i] = k
        nd[k] += 1


def _count_values(features) -> sp.csr_matrix:
    if isinstance(features, FeatureMatrix):
        if features.weighting != "frequency":
            raise ValidationError(f"LDA consumes word counts; got {features.weighting!r} features")
        X = features.values
    else:
        X = features
    X = sp.csr_matrix(X, dtype=float)
    if X.nnz and (X.data.min() < 0 or not np.all(X.data == np.round(X.data))):
        raise ValidationError("LDA input must be non-negative integer counts")
    return X


def _tokens(X: sp.csr_matrix) -> tuple[np.ndarray, np.ndarray]:
    """Expand a count matrix into parallel (document, word) token arrays."""
    X = X.tocsr()
    X.sort_indices()
    counts = X.data.astype(np.int64)
    rows = np.repeat(np.arange(X.shape[0]), np.diff(X.indptr))
    return np.repeat(rows, counts).astype(np.int64), np.repeat(X.indices.astype(np.int64), counts)


@dataclass(frozen=True)
class LdaModel:
    topic_term: np.ndarray  # k x J, rows sum to 1
    alpha: float
    beta: float
    iterations: int
    seed: int
    doc_topic: np.ndarray | None = field(default=None, compare=False)  # training documents

    @property
    def k(self) -> int:
        return self.topic_term.shape[0]

    def save(self, path, meta=None) -> str:
        header = {"kind": "lda_model", "k": self.k, "alpha": self.alpha, "beta": self.beta,
                  "iterations": self.iterations, "seed": self.seed, **(meta or {})}
        arrays = {"topic_term": self.topic_term}
        if self.doc_topic is not None:
            arrays["doc_topic"] = self.doc_topic
        return container.save(path, header, arrays)

    @classmethod
    def load(cls, path) -> "LdaModel":
        meta, arrays = container.load(path)
        if meta.get("kind") != "lda_model":
            raise ValidationError(f"{path}: not an LDA model container")
        return cls(arrays["topic_term"], meta["alpha"], meta["beta"], meta["iterations"], meta["seed"],
                   arrays.get("doc_topic"))


def fit_lda(
    features,
    k: int,
    alpha: float | None = None,
    beta: float = 0.01,
    sweeps: int = 1000,
    seed: int = 0,
) -> LdaModel:
    """Run ``sweeps`` full collapsed-Gibbs sweeps over every token.

    ``alpha`` defaults to ``50 / k``. The topic-term matrix and the training
    documents' topic distributions are point estimates from the final
    sampler state, smoothed by ``beta`` and ``alpha`` respectively.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    alpha = 50.0 / k if alpha is None else float(alpha)
    if alpha <= 0 or beta <= 0:
        raise ValidationError("alpha and beta must be positive")
    if sweeps < 0:
        raise ValidationError("sweeps must be >= 0")
    X = _count_values(features)
    n_docs, n_words = X.shape
    docs, words = _tokens(X)

    rng = np.random.default_rng(seed)
    z = rng.integers(0, k, size=docs.shape[0]).astype(np.int64)
    ndk = np.zeros((n_docs, k), dtype=np.int64)
    nkw = np.zeros((k, n_words), dtype=np.int64)
    np.add.at(ndk, (docs, z), 1)
    np.add.at(nkw, (z, words), 1)
    nk = nkw.sum(axis=1)

    for _ in range(sweeps):
        _gibbs_sweep(docs, words, z, ndk, nkw, nk, alpha, beta, n_words * beta, rng.random(docs.shape[0]))

    topic_term = (nkw + beta) / (nk[:, None] + n_words * beta)
    nd = ndk.sum(axis=1, keepdims=True)
    doc_topic = (ndk + alpha) / (nd + k * alpha)
    return LdaModel(topic_term, alpha, beta, sweeps, seed, doc_topic)


class TopicInference(NamedTuple):
    distribution: np.ndarray
    empty: bool


def infer_lda(model: LdaModel, doc_counts, *, sweeps: int = 100, burn_in: int | None = None,
              seed: int = 0) -> TopicInference:
    """Fold-in Gibbs inference of one document's topic distribution.

    ``topic_term`` stays fixed; the returned distribution averages the
    smoothed estimate over the post-burn-in sweeps. An empty document gives
    the uniform distribution with ``empty=True``.
    """
    counts = np.asarray(doc_counts.toarray() if sp.issparse(doc_counts) else doc_counts, dtype=float).ravel()
    if counts.shape[0] != model.topic_term.shape[1]:
        raise ValidationError("document length does not match the model vocabulary")
    if np.any(counts < 0) or not np.all(counts == np.round(counts)):
        raise ValidationError("document must be non-negative integer counts")
    k = model.k
    if counts.sum() == 0:
        return TopicInference(np.full(k, 1.0 / k), True)
    burn_in = sweeps // 2 if burn_in is None else burn_in
    if not 0 <= burn_in < sweeps:
        raise ValidationError("need 0 <= burn_in < sweeps")

    words = np.repeat(np.arange(counts.shape[0]), counts.astype(np.int64))
    rng = np.random.default_rng(seed)
    z = rng.integers(0, k, size=words.shape[0]).astype(np.int64)
    nd = np.bincount(z, minlength=k).astype(np.int64)
    phi = np.ascontiguousarray(model.topic_term)
    acc = np.zeros(k)
    for sweep in range(sweeps):
        _foldin_sweep(words, z, nd, phi, model.alpha, rng.random(words.shape[0]))
        if sweep >= burn_in:
            acc += (nd + model.alpha) / (words.shape[0] + k * model.alpha)
    dist = acc / (sweeps - burn_in)
    return TopicInference(dist / dist.sum(), False)


def transform_lda(model: LdaModel, features, *, sweeps: int = 100, seed: int = 0) -> FeatureMatrix | np.ndarray:
    """Infer a topic distribution for every row of a count matrix."""
    X = _count_values(features)
    seeds = np.random.SeedSequence(seed).spawn(X.shape[0])
    out = np.vstack([
        infer_lda(model, X[i], sweeps=sweeps, seed=int(s.generate_state(1)[0])).distribution
        for i, s in enumerate(seeds)
    ]) if X.shape[0] else np.zeros((0, model.k))
    if isinstance(features, FeatureMatrix):
        return FeatureMatrix(features.rows, out, "lda-topic", "none", features.vocab_hash,
                             {"reduction": "lda", "k": model.k, "seed": seed})
    return out


def training_topics(model: LdaModel, features: FeatureMatrix) -> FeatureMatrix:
    """Wrap the fitted documents' topic distributions as a reduced matrix."""
    if model.doc_topic is None or model.doc_topic.shape[0] != len(features.rows):
        raise ValidationError("model was not fitted on these documents")
    return FeatureMatrix(features.rows, np.array(model.doc_topic), "lda-topic", "none", features.vocab_hash,
                         {"reduction": "lda", "k": model.k, "seed": model.seed})
