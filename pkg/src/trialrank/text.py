"""Tokenization, vocabulary building and full-dimension document vectors."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import container
from .container import atomic_write_text, sha256_bytes
from .errors import ValidationError
from .porter import stem

STOPWORDS_VERSION = "en-318-v1"
_WEIGHTINGS = ("binary", "frequency", "tfidf")
AXES = ("vocabulary-term", "pca-component", "lda-topic")
_SPLIT_RE = re.compile(r"[^\W_]+")


@lru_cache(maxsize=None)
def load_stopwords(version: str = STOPWORDS_VERSION) -> frozenset[str]:
    if version != STOPWORDS_VERSION:
        raise ValidationError(f"unknown stop-word list {version!r} (available: {STOPWORDS_VERSION})")
    text = resources.files("trialrank").joinpath("data/stopwords_en_v1.txt").read_text("utf-8")
    return frozenset(w for w in text.split() if w)


@dataclass(frozen=True)
class Tokenizer:
    """Lowercase, split on non-alphanumerics, drop stop words, Porter-stem.

    Pure-digit tokens and single-character tokens are dropped before the
    stop-word check.
    """

    stopwords: str = STOPWORDS_VERSION
    min_length: int = 2
    drop_digits: bool = True
    stemmer: str = "porter"

    def __post_init__(self):
        if self.stemmer not in ("porter", "none"):
            raise ValidationError(f"unknown stemmer {self.stemmer!r}")
        load_stopwords(self.stopwords)

    def settings(self) -> dict:
        return {
            "stopwords": self.stopwords,
            "min_length": self.min_length,
            "drop_digits": self.drop_digits,
            "stemmer": self.stemmer,
        }

    def __call__(self, text: str) -> list[str]:
        stops = load_stopwords(self.stopwords)
        out = []
        for tok in _SPLIT_RE.findall(text.lower()):
            if len(tok) < self.min_length or (self.drop_digits and tok.isdigit()) or tok in stops:
                continue
            out.append(stem(tok) if self.stemmer == "porter" else tok)
        return out


DEFAULT_TOKENIZER = Tokenizer()


def tokenize(text: str, tokenizer: Tokenizer = DEFAULT_TOKENIZER) -> list[str]:
    return tokenizer(text)


def _documents(docs) -> list[str]:
    # Accepts a Corpus, a sequence of records, or plain strings.
    out = []
    for d in docs:
        out.append(d if isinstance(d, str) else d.text())
    return out


def _doc_ids(docs) -> tuple[str, ...]:
    ids = getattr(docs, "ids", None)
    if ids is not None:
        return tuple(ids)
    return tuple(d.id if hasattr(d, "id") else f"doc{i}" for i, d in enumerate(docs))


@dataclass(frozen=True)
class Vocabulary:
    terms: tuple[str, ...]
    document_frequency: tuple[int, ...]
    min_df: int
    n_documents: int
    tokenizer: Tokenizer = DEFAULT_TOKENIZER
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if list(self.terms) != sorted(set(self.terms)):
            raise ValidationError("vocabulary terms must be unique and sorted")
        if len(self.terms) != len(self.document_frequency):
            raise ValidationError("terms and document_frequency differ in length")
        if any(df < self.min_df for df in self.document_frequency):
            raise ValidationError("vocabulary contains a term below min_df")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.terms)})

    def __len__(self) -> int:
        return len(self.terms)

    def __contains__(self, term) -> bool:
        return term in self._index

    def index(self, term: str) -> int:
        return self._index[term]

    def dumps(self) -> str:
        settings = self.tokenizer.settings()
        header = " ".join(f"{k}={settings[k]}" for k in sorted(settings))
        lines = [
            "# trialrank-vocabulary v1",
            f"# min_df={self.min_df} n_documents={self.n_documents} {header}",
        ]
        lines += [f"{t}\t{df}" for t, df in zip(self.terms, self.document_frequency)]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return sha256_bytes(self.dumps().encode("utf-8"))

    def save(self, path) -> str:
        text = self.dumps()
        atomic_write_text(path, text)
        return sha256_bytes(text.encode("utf-8"))

    @classmethod
    def loads(cls, text: str, *, source="<vocabulary>") -> "Vocabulary":
        lines = text.splitlines()
        if len(lines) < 2 or lines[0] != "# trialrank-vocabulary v1":
            raise ValidationError(f"{source}: not a trialrank vocabulary file")
        params = dict(kv.split("=", 1) for kv in lines[1].lstrip("# ").split())
        tokenizer = Tokenizer(
            stopwords=params["stopwords"],
            min_length=int(params["min_length"]),
            drop_digits=params["drop_digits"] == "True",
            stemmer=params["stemmer"],
        )
        terms, dfs = [], []
        for line in lines[2:]:
            term, df = line.split("\t")
            terms.append(term)
            dfs.append(int(df))
        return cls(tuple(terms), tuple(dfs), int(params["min_df"]), int(params["n_documents"]), tokenizer)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ValidationError(f"cannot read vocabulary {path}: {exc}") from exc
        return cls.loads(text, source=str(path))


def build_vocabulary(docs, min_df: int = 5, tokenizer: Tokenizer = DEFAULT_TOKENIZER) -> Vocabulary:
    """Terms whose document frequency is at least ``min_df``, sorted."""
    texts = _documents(docs)
    if not texts:
        raise ValidationError("cannot build a vocabulary from an empty corpus")
    if min_df < 1:
        raise ValidationError("min_df must be >= 1")
    df = Counter()
    for text in texts:
        df.update(set(tokenizer(text)))
    terms = sorted(t for t, c in df.items() if c >= min_df)
    return Vocabulary(tuple(terms), tuple(df[t] for t in terms), min_df, len(texts), tokenizer)


@dataclass(frozen=True)
class FeatureMatrix:
    """Documents x features. Sparse CSR for full-dimension, dense for reduced."""

    rows: tuple[str, ...]
    values: sp.csr_matrix | np.ndarray
    axis: str = "vocabulary-term"
    weighting: str = "none"
    vocab_hash: str | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValidationError(f"unknown feature axis {self.axis!r}")
        if self.weighting not in _WEIGHTINGS + ("none",):
            raise ValidationError(f"unknown weighting {self.weighting!r}")
        if self.values.shape[0] != len(self.rows):
            raise ValidationError("row labels do not match matrix height")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.values)

    def dense(self) -> np.ndarray:
        return self.values.toarray() if self.is_sparse else np.asarray(self.values)

    def row_index(self) -> dict[str, int]:
        return {r: i for i, r in enumerate(self.rows)}

    def header(self) -> dict:
        return {
            "kind": "feature_matrix",
            "axis": self.axis,
            "weighting": self.weighting,
            "shape": list(self.shape),
            "layout": "sparse_triplet" if self.is_sparse else "dense_row_major",
            "vocab_hash": self.vocab_hash,
            "rows": list(self.rows),
            "settings": self.meta,
        }

    def save(self, path) -> str:
        if self.is_sparse:
            coo = self.values.tocoo()
            order = np.lexsort((coo.col, coo.row))
            arrays = {"row": coo.row[order], "col": coo.col[order], "data": coo.data[order]}
        else:
            arrays = {"values": np.asarray(self.values, dtype=float)}
        return container.save(path, self.header(), arrays)

    @classmethod
    def load(cls, path) -> "FeatureMatrix":
        meta, arrays = container.load(path)
        if meta.get("kind") != "feature_matrix":
            raise ValidationError(f"{path}: not a feature matrix container")
        shape = tuple(meta["shape"])
        if meta["layout"] == "sparse_triplet":
            values = sp.csr_matrix((arrays["data"], (arrays["row"], arrays["col"])), shape=shape)
            values.sort_indices()
        else:
            values = arrays["values"].reshape(shape)
        return cls(tuple(meta["rows"]), values, meta["axis"], meta["weighting"], meta["vocab_hash"],
                   meta.get("settings") or {})


def count_matrix(docs, vocab: Vocabulary) -> sp.csr_matrix:
    """Raw in-vocabulary term counts; terms outside ``vocab`` are dropped."""
    texts = _documents(docs)
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for text in texts:
        counts = Counter(t for t in vocab.tokenizer(text) if t in vocab)
        cols = sorted(vocab.index(t) for t in counts)
        indices.extend(cols)
        data.extend(float(counts[vocab.terms[c]]) for c in cols)
        indptr.append(len(indices))
    return sp.csr_matrix(
        (np.array(data, dtype=float), np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
        shape=(len(texts), len(vocab)),
    )


def idf_weights(vocab: Vocabulary, smooth: bool = True) -> np.ndarray:
    """``ln((1+N)/(1+df)) + 1`` when smoothed, ``ln(N/df) + 1`` otherwise."""
    df = np.asarray(vocab.document_frequency, dtype=float)
    n = float(vocab.n_documents)
    if smooth:
        return np.log((1.0 + n) / (1.0 + df)) + 1.0
    return np.log(n / df) + 1.0


def vectorize(
    docs,
    vocab: Vocabulary,
    weighting: str = "tfidf",
    *,
    smooth_idf: bool = True,
    normalize: bool = True,
) -> FeatureMatrix:
    """Binary, frequency or tf-idf document vectors over ``vocab``.

    tf-idf is raw count times idf (see :func:`idf_weights`) followed by
    row-wise L2 normalisation when ``normalize`` is true. Documents with no
    in-vocabulary token give an all-zero row.
    """
    if weighting not in _WEIGHTINGS:
        raise ValidationError(f"unknown weighting {weighting!r}; expected one of {_WEIGHTINGS}")
    counts = count_matrix(docs, vocab)
    meta = {"weighting": weighting, "min_df": vocab.min_df, **vocab.tokenizer.settings()}
    if weighting == "binary":
        values = counts.copy()
        values.data[:] = 1.0
    elif weighting == "frequency":
        values = counts
    else:
        values = sp.csr_matrix(counts.multiply(idf_weights(vocab, smooth_idf)[None, :]))
        if normalize:
            norms = np.sqrt(np.asarray(values.multiply(values).sum(axis=1)).ravel())
            scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
            values = sp.csr_matrix(sp.diags(scale) @ values)
        meta.update(smooth_idf=smooth_idf, normalize=normalize)
    values.sort_indices()
    return FeatureMatrix(_doc_ids(docs), values, "vocabulary-term", weighting, vocab.digest(), meta)


def document_lengths(docs, vocab: Vocabulary) -> np.ndarray:
    return np.asarray(count_matrix(docs, vocab).sum(axis=1)).ravel()


def top_terms(vocab: Vocabulary, weights: Sequence[float], n: int = 10) -> list[str]:
    order = sorted(range(len(weights)), key=lambda i: (-weights[i], vocab.terms[i]))
    return [vocab.terms[i] for i in order[:n]]
