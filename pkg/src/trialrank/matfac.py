"""Joint factorisation of a trial-feature matrix and a trial-review link matrix.

Both matrices share the trial factor matrix ``P``::

    R ~ P Q^T        (U x J, text features)
    T ~ P W^T        (U x V, binary review links)

and the objective is::

    L = 1/2 sum_{u,j} (p_u.q_j - r_uj)^2
      + link_weight/2 sum_u sum_{v in T_u} (p_u.w_v - 1)^2
      + reg/2 (|P|^2 + |Q|^2 + |W|^2)

The link term runs over observed training links only; absent links are not
treated as negatives. Training is full-batch gradient descent, and the
iterate with the lowest RMSE is returned.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from . import container
from .container import atomic_write_text
from .errors import NumericalError, ValidationError
from .ranking import RankedList, rank_arrays
from .text import FeatureMatrix

log = logging.getLogger(__name__)

RMSE_TARGETS = ("both", "features", "links")
MODES = ("batch", "stochastic")


@dataclass(frozen=True)
class LinkMatrix:
    """Binary trials x reviews matrix with train/test designations.

    ``train`` and ``test`` are ``(n, 2)`` integer arrays of ``(u, v)``
    positions; every other cell is unknown.
    """

    trial_ids: tuple[str, ...]
    review_ids: tuple[str, ...]
    train: np.ndarray
    test: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    def __post_init__(self):
        for name in ("train", "test"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1, 2)
            if arr.size and (arr[:, 0].max() >= len(self.trial_ids) or arr[:, 1].max() >= len(self.review_ids)
                             or arr.min() < 0):
                raise ValidationError(f"{name} link index out of range")
            arr = arr[np.lexsort((arr[:, 1], arr[:, 0]))]
            if len(np.unique(arr, axis=0)) != len(arr):
                raise ValidationError(f"duplicate {name} links")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        both = {tuple(x) for x in self.train.tolist()} & {tuple(x) for x in self.test.tolist()}
        if both:
            raise ValidationError(f"{len(both)} link(s) marked both train and test")

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.trial_ids), len(self.review_ids)

    def dense(self, which: str = "all") -> np.ndarray:
        T = np.zeros(self.shape)
        parts = {"train": [self.train], "test": [self.test], "all": [self.train, self.test]}[which]
        for arr in parts:
            T[arr[:, 0], arr[:, 1]] = 1.0
        return T

    def mask(self, u: int, v: int) -> str:
        if any((self.train == (u, v)).all(axis=1)):
            return "train"
        if any((self.test == (u, v)).all(axis=1)):
            return "test"
        return "unknown"

    def train_ids(self, v: int) -> list[str]:
        return [self.trial_ids[u] for u in self.train[self.train[:, 1] == v, 0]]

    @classmethod
    def from_pairs(cls, trial_ids: Sequence[str], review_ids: Sequence[str],
                   train: Iterable[tuple[str, str]], test: Iterable[tuple[str, str]] = ()) -> "LinkMatrix":
        """Build from ``(trial_id, review_id)`` pairs."""
        ti = {t: i for i, t in enumerate(trial_ids)}
        ri = {r: i for i, r in enumerate(review_ids)}

        def idx(pairs):
            try:
                return np.array([(ti[t], ri[r]) for t, r in pairs], dtype=np.int64).reshape(-1, 2)
            except KeyError as exc:
                raise ValidationError(f"unknown id in link pairs: {exc.args[0]}") from exc

        return cls(tuple(trial_ids), tuple(review_ids), idx(train), idx(test))


@dataclass(frozen=True)
class Hyperparams:
    """``reg`` and ``link_weight`` are the regularisation weight and the
    link-loss weight of the objective."""

    k: int = 10
    reg: float = 0.001
    link_weight: float = 0.01
    learning_rate: float = 1e-3
    max_iterations: int = 5000
    seed: int = 0
    init_scale: float = 0.1
    rmse: str = "both"
    mode: str = "batch"

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.reg <= 0 or self.link_weight < 0 or self.learning_rate <= 0:
            raise ValidationError("reg and learning_rate must be > 0 and link_weight >= 0")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if self.init_scale <= 0:
            raise ValidationError("init_scale must be > 0")
        if self.rmse not in RMSE_TARGETS:
            raise ValidationError(f"rmse must be one of {RMSE_TARGETS}")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}")


@dataclass(frozen=True)
class FactorModel:
    P: np.ndarray  # U x K trial factors
    Q: np.ndarray  # J x K feature factors
    W: np.ndarray  # V x K review factors
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    trace: np.ndarray = field(default_factory=lambda: np.zeros(0))
    best_iteration: int = -1

    def __post_init__(self):
        k = self.P.shape[1]
        if self.Q.shape[1] != k or self.W.shape[1] != k:
            raise ValidationError("P, Q and W must have the same number of columns")

    @property
    def k(self) -> int:
        return self.P.shape[1]

    def trace_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# rmse: {self.hyperparams.rmse}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "rmse"])
        for i, v in enumerate(self.trace.tolist(), 1):
            w.writerow([i, repr(v)])
        return buf.getvalue()

    def save(self, path, meta=None) -> str:
        header = {"kind": "factor_model", "hyperparams": asdict(self.hyperparams),
                  "best_iteration": self.best_iteration, **(meta or {})}
        return container.save(path, header, {"P": self.P, "Q": self.Q, "W": self.W, "trace": self.trace})

    @classmethod
    def load(cls, path) -> "FactorModel":
        meta, arrays = container.load(path)
        if meta.get("kind") != "factor_model":
            raise ValidationError(f"{path}: not a factor model container")
        return cls(arrays["P"], arrays["Q"], arrays["W"], Hyperparams(**meta["hyperparams"]), arrays["trace"],
                   meta["best_iteration"])


def _frozen(*arrays):
    for a in arrays:
        a.setflags(write=False)
    return arrays


def init_model(R_dims: tuple[int, int], T_dims: tuple[int, int], hp: Hyperparams) -> FactorModel:
    """Uniform ``(0, init_scale)`` factors drawn from ``hp.seed``."""
    U, J = R_dims
    U2, V = T_dims
    if U != U2:
        raise ValidationError(f"R has {U} rows but T has {U2}")
    rng = np.random.default_rng(hp.seed)
    P = rng.uniform(0.0, hp.init_scale, size=(U, hp.k))
    Q = rng.uniform(0.0, hp.init_scale, size=(J, hp.k))
    W = rng.uniform(0.0, hp.init_scale, size=(V, hp.k))
    return FactorModel(P, Q, W, hp)


def _feature_values(R):
    if isinstance(R, FeatureMatrix):
        return R.values
    return R if sp.issparse(R) else np.asarray(R, dtype=float)


def _links(T) -> tuple[np.ndarray, np.ndarray, int]:
    if isinstance(T, LinkMatrix):
        return T.train[:, 0], T.train[:, 1], T.shape[1]
    T = np.asarray(T)
    u, v = np.nonzero(T)
    return u, v, T.shape[1]


def _check_dims(P, Q, W, R, V):
    if R.shape != (P.shape[0], Q.shape[0]):
        raise ValidationError(f"R shape {R.shape} does not match P/Q ({P.shape[0]}, {Q.shape[0]})")
    if V != W.shape[0]:
        raise ValidationError(f"T has {V} reviews but W has {W.shape[0]} rows")


class _Objective:
    """Residual bookkeeping for one (P, Q, W) point."""

    def __init__(self, R, lu, lv):
        self.R = R
        self.sparse = sp.issparse(R)
        self.lu = lu
        self.lv = lv
        if self.sparse:
            self.R = sp.csr_matrix(R)
            self.RT = self.R.T.tocsr()
            self.r_sq = float(self.R.multiply(self.R).sum())

    def evaluate(self, P, Q, W, *, want_grad: bool):
        if self.sparse:
            # expand |PQ^T - R|^2 so R is never densified
            PtP = P.T @ P
            QtQ = Q.T @ Q
            RQ = np.asarray(self.R @ Q)
            f_sq = float(np.sum(PtP * QtQ) - 2.0 * np.sum(RQ * P) + self.r_sq)
            f_sq = max(f_sq, 0.0)
            if want_grad:
                gP_feat = P @ QtQ - RQ
                gQ_feat = Q @ PtP - np.asarray(self.RT @ P)
        else:
            E = P @ Q.T - self.R
            f_sq = float(np.sum(E * E))
            if want_grad:
                gP_feat = E @ Q
                gQ_feat = E.T @ P
        e_link = np.einsum("ij,ij->i", P[self.lu], W[self.lv]) - 1.0
        l_sq = float(e_link @ e_link)
        if not want_grad:
            return f_sq, l_sq, None
        return f_sq, l_sq, (gP_feat, gQ_feat, e_link)


def _weighted_link_sum(idx_a, other, e, n_rows):
    # sum over links of e_l * other[idx_b] accumulated into rows idx_a
    out = np.zeros((n_rows, other.shape[1]))
    np.add.at(out, idx_a, e[:, None] * other)
    return out


def _loss_parts(model: FactorModel, R, T):
    P, Q, W = model.P, model.Q, model.W
    R = _feature_values(R)
    lu, lv, V = _links(T)
    _check_dims(P, Q, W, R, V)
    return _Objective(R, lu, lv), P, Q, W


def loss(model: FactorModel, R, T) -> float:
    """Value of the joint objective at ``model``'s factors."""
    obj, P, Q, W = _loss_parts(model, R, T)
    hp = model.hyperparams
    f_sq, l_sq, _ = obj.evaluate(P, Q, W, want_grad=False)
    penalty = float(np.sum(P * P) + np.sum(Q * Q) + np.sum(W * W))
    return 0.5 * f_sq + 0.5 * hp.link_weight * l_sq + 0.5 * hp.reg * penalty


def _gradients(obj: _Objective, P, Q, W, hp: Hyperparams):
    f_sq, l_sq, (gP, gQ, e_link) = obj.evaluate(P, Q, W, want_grad=True)
    lw = hp.link_weight
    dP = gP + lw * _weighted_link_sum(obj.lu, W[obj.lv], e_link, P.shape[0]) + hp.reg * P
    dQ = gQ + hp.reg * Q
    dW = lw * _weighted_link_sum(obj.lv, P[obj.lu], e_link, W.shape[0]) + hp.reg * W
    return (dP, dQ, dW), (f_sq, l_sq)


def gradients(model: FactorModel, R, T) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full-batch gradients of :func:`loss` with respect to P, Q and W.

    Row ``u`` of ``dP`` sums over that trial's features and its training links
    only; likewise for the rows of ``dQ`` and ``dW``.
    """
    obj, P, Q, W = _loss_parts(model, R, T)
    grads, _ = _gradients(obj, P, Q, W, model.hyperparams)
    return grads


def _rmse(f_sq, l_sq, n_feat, n_link, target) -> float:
    if target == "features":
        return float(np.sqrt(f_sq / n_feat)) if n_feat else 0.0
    if target == "links":
        return float(np.sqrt(l_sq / n_link)) if n_link else 0.0
    n = n_feat + n_link
    return float(np.sqrt((f_sq + l_sq) / n)) if n else 0.0


def rmse(model: FactorModel, R, T, target: str | None = None) -> float:
    obj, P, Q, W = _loss_parts(model, R, T)
    f_sq, l_sq, _ = obj.evaluate(P, Q, W, want_grad=False)
    return _rmse(f_sq, l_sq, P.shape[0] * Q.shape[0], len(obj.lu), target or model.hyperparams.rmse)


def _stochastic_epoch(obj: _Objective, P, Q, W, hp: Hyperparams, rng) -> None:
    # Per-trial updates. Not the reference path; kept for large corpora.
    R = obj.R
    lr, lw, reg = hp.learning_rate, hp.link_weight, hp.reg
    links_of = {}
    for n, u in enumerate(obj.lu):
        links_of.setdefault(int(u), []).append(int(obj.lv[n]))
    for u in rng.permutation(P.shape[0]):
        r_u = R[u].toarray().ravel() if obj.sparse else R[u]
        e_u = Q @ P[u] - r_u
        vs = links_of.get(int(u), [])
        gp = e_u @ Q + reg * P[u]
        if vs:
            e_l = W[vs] @ P[u] - 1.0
            gp = gp + lw * e_l @ W[vs]
            W[vs] -= lr * (lw * e_l[:, None] * P[u][None, :] + reg * W[vs])
        Q -= lr * (np.outer(e_u, P[u]) + reg * Q / P.shape[0])
        P[u] -= lr * gp


def fit(R, T, hp: Hyperparams, *, init: FactorModel | None = None) -> FactorModel:
    """Gradient descent for up to ``hp.max_iterations`` steps.

    RMSE is recorded after every step and the factors from the step with the
    lowest RMSE are returned (``best_iteration`` is a 0-based index into
    ``trace``). Raises :class:`NumericalError` if the objective diverges.
    """
    Rv = _feature_values(R)
    lu, lv, V = _links(T)
    if isinstance(T, LinkMatrix):
        lacking = sorted(set(range(V)) - set(lv.tolist()))
        if lacking:
            names = [T.review_ids[v] for v in lacking]
            raise ValidationError(f"review(s) without a training link: {names[:10]}")
    model = init or init_model(Rv.shape, (Rv.shape[0], V), hp)
    P, Q, W = (np.array(model.P, dtype=float), np.array(model.Q, dtype=float), np.array(model.W, dtype=float))
    _check_dims(P, Q, W, Rv, V)
    obj = _Objective(Rv, lu, lv)
    n_feat = P.shape[0] * Q.shape[0]
    n_link = len(lu)
    rng = np.random.default_rng(hp.seed + 1)

    trace = np.empty(hp.max_iterations)
    best = (np.inf, -1, None)
    lr = hp.learning_rate
    # overflow is reported as NumericalError below, not as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(hp.max_iterations):
            if hp.mode == "batch":
                (dP, dQ, dW), _ = _gradients(obj, P, Q, W, hp)
                P -= lr * dP
                Q -= lr * dQ
                W -= lr * dW
            else:
                _stochastic_epoch(obj, P, Q, W, hp, rng)
            f_sq, l_sq, _ = obj.evaluate(P, Q, W, want_grad=False)
            value = _rmse(f_sq, l_sq, n_feat, n_link, hp.rmse)
            if not np.isfinite(value) or not np.isfinite(f_sq + l_sq):
                raise NumericalError(
                    f"objective diverged at iteration {it + 1} (learning_rate={lr}); "
                    f"try a smaller learning_rate"
                )
            trace[it] = value
            if value < best[0]:
                best = (value, it, (P.copy(), Q.copy(), W.copy()))

    _, best_it, (bP, bQ, bW) = best
    log.debug("matfac: best rmse %.6g at iteration %d", best[0], best_it + 1)
    return FactorModel(*_frozen(bP, bQ, bW), hyperparams=hp, trace=_frozen(trace)[0], best_iteration=best_it)


def score_reviews(model: FactorModel) -> np.ndarray:
    """Reconstructed link scores ``P W^T`` (U x V)."""
    return model.P @ model.W.T


def rank_for_review(scores: np.ndarray, trial_ids: Sequence[str], excluded: Iterable[str], *,
                    review_id: str = "", meta: Mapping | None = None) -> RankedList:
    """Rank one column of :func:`score_reviews`; same contract as the baseline ranker."""
    base = {"method": "matfac"}
    base.update(meta or {})
    return rank_arrays(trial_ids, scores, excluded, review_id=review_id, meta=base)


def rank_all(model: FactorModel, links: LinkMatrix, meta: Mapping | None = None) -> dict[str, RankedList]:
    """Per-review ranked lists with each review's training links excluded."""
    That = score_reviews(model)
    out = {}
    for v, review in enumerate(links.review_ids):
        out[review] = rank_for_review(That[:, v], links.trial_ids, links.train_ids(v), review_id=review, meta=meta)
    return out


def trace_to_csv(model: FactorModel, path) -> None:
    atomic_write_text(path, model.trace_csv())
