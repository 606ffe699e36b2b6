"""Principal component analysis by truncated SVD.

Sparse input is mean-centred implicitly through a linear operator so the
documents x vocabulary matrix is never densified.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, svds

from . import container
from .errors import ValidationError
from .text import FeatureMatrix


@dataclass(frozen=True)
class PcaModel:
    components: np.ndarray  # k x J, orthonormal rows
    mean: np.ndarray  # J
    explained_variance: np.ndarray  # k, non-increasing
    seed: int = 0
    source_weighting: str = "none"

    @property
    def k(self) -> int:
        return self.components.shape[0]

    def save(self, path, meta=None) -> str:
        header = {"kind": "pca_model", "k": self.k, "seed": self.seed,
                  "source_weighting": self.source_weighting, **(meta or {})}
        return container.save(path, header, {
            "components": self.components, "mean": self.mean, "explained_variance": self.explained_variance,
        })

    @classmethod
    def load(cls, path) -> "PcaModel":
        meta, arrays = container.load(path)
        if meta.get("kind") != "pca_model":
            raise ValidationError(f"{path}: not a PCA model container")
        return cls(arrays["components"], arrays["mean"], arrays["explained_variance"], meta["seed"],
                   meta["source_weighting"])


def _values(features):
    if isinstance(features, FeatureMatrix):
        return features.values
    return features if sp.issparse(features) else np.asarray(features, dtype=float)


def _sign_flip(u: np.ndarray, vt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # make the largest-magnitude loading of each component positive
    idx = np.argmax(np.abs(vt), axis=1)
    signs = np.sign(vt[np.arange(vt.shape[0]), idx])
    signs[signs == 0] = 1.0
    return u * signs, vt * signs[:, None]


def fit_pca(features, k: int, *, seed: int = 0, solver: str = "auto") -> PcaModel:
    """Top-``k`` principal components of the mean-centred matrix.

    ``solver="dense"`` runs a full SVD; ``"arpack"`` runs an iterative
    truncated SVD seeded from ``seed``. ``"auto"`` picks dense for dense input
    or when ``k`` is close to the full rank.
    """
    if isinstance(features, FeatureMatrix) and features.weighting not in ("tfidf", "frequency"):
        raise ValidationError(f"PCA expects tf-idf or frequency features, got {features.weighting!r}")
    X = _values(features)
    n, d = X.shape
    if not 1 <= k <= min(n, d):
        raise ValidationError(f"k={k} out of range [1, {min(n, d)}]")
    mean = np.asarray(X.mean(axis=0)).ravel()

    if solver == "auto":
        solver = "dense" if (not sp.issparse(X) or k >= min(n, d) - 1 or min(n, d) <= 500) else "arpack"
    if solver == "dense":
        Xc = (X.toarray() if sp.issparse(X) else X) - mean
        u, s, vt = np.linalg.svd(Xc, full_matrices=False)
        u, s, vt = u[:, :k], s[:k], vt[:k]
    elif solver == "arpack":
        if k >= min(n, d):
            raise ValidationError("the arpack solver needs k < min(rows, features); use solver='dense'")
        if sp.issparse(X):
            Xs = sp.csr_matrix(X)
            op = LinearOperator(
                (n, d),
                matvec=lambda v: Xs @ np.ravel(v) - mean @ np.ravel(v),
                rmatvec=lambda v: Xs.T @ np.ravel(v) - mean * np.sum(v),
                matmat=lambda V: Xs @ V - np.outer(np.ones(n), mean @ V),
                rmatmat=lambda V: Xs.T @ V - np.outer(mean, np.ones(n) @ V),
                dtype=float,
            )
        else:
            op = X - mean
        v0 = np.random.default_rng(seed).uniform(-1.0, 1.0, size=min(n, d))
        u, s, vt = svds(op, k=k, v0=v0, solver="arpack")
        order = np.argsort(-s, kind="stable")
        u, s, vt = u[:, order], s[order], vt[order]
    else:
        raise ValidationError(f"unknown PCA solver {solver!r}")

    u, vt = _sign_flip(u, vt)
    var = s**2 / max(n - 1, 1)
    weighting = features.weighting if isinstance(features, FeatureMatrix) else "none"
    return PcaModel(np.ascontiguousarray(vt), mean, var, seed, weighting)


def project(model: PcaModel, X) -> np.ndarray:
    if X.shape[1] != model.components.shape[1]:
        raise ValidationError(
            f"feature dimension {X.shape[1]} does not match PCA model dimension {model.components.shape[1]}"
        )
    return np.asarray(X @ model.components.T) - model.mean @ model.components.T


def transform_pca(model: PcaModel, features) -> FeatureMatrix | np.ndarray:
    """``(X - mean) @ components.T``; FeatureMatrix in, FeatureMatrix out."""
    Z = project(model, _values(features))
    if isinstance(features, FeatureMatrix):
        return FeatureMatrix(features.rows, Z, "pca-component", "none", features.vocab_hash,
                             {"reduction": "pca", "k": model.k, "seed": model.seed})
    return Z


def inverse_transform(model: PcaModel, Z) -> np.ndarray:
    Z = Z.values if isinstance(Z, FeatureMatrix) else np.asarray(Z)
    return Z @ model.components + model.mean
