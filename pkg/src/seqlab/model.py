"""Label alphabet, sequences, the joint feature map and the Hamming loss.

Feature layout for ``k`` labels and ``d`` binary input features
(``N = k*k + d*k`` dimensions)::

    [0, k*k)                 transition (a, b) at a*k + b
    [k*k + c*d, k*k+(c+1)*d) emission block of label c, input feature t at offset t

No start/stop transitions: a length-L labeling contributes L-1 bigrams.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import InvalidInputError

LabelSeq = tuple  # tuple[int, ...]; hashable so it can key active sets


def n_features(k: int, d: int) -> int:
    return k * k + d * k


def input_dim(w: np.ndarray, k: int) -> int:
    """Recover ``d`` from a weight vector of length ``k*k + d*k``."""
    n = w.shape[0]
    if k < 1 or n < k * k or (n - k * k) % k:
        raise InvalidInputError(f"weight length {n} is not k^2 + d*k for k={k}")
    return (n - k * k) // k


def split_weights(w: np.ndarray, k: int):
    """Views ``(transitions[k, k], emissions[k, d])`` into ``w``."""
    d = input_dim(w, k)
    return w[: k * k].reshape(k, k), w[k * k:].reshape(k, d)


@dataclass(frozen=True)
class LabelAlphabet:
    labels: tuple

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        if not labels:
            raise InvalidInputError("label alphabet must be non-empty")
        if len(set(labels)) != len(labels):
            raise InvalidInputError("labels must be distinct")
        object.__setattr__(self, "_index", {lab: i for i, lab in enumerate(labels)})

    @property
    def k(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self._index[label]

    def __contains__(self, label) -> bool:
        return label in self._index

    def __len__(self) -> int:
        return len(self.labels)


class TokenSequence:
    """Per-token sets of active input-feature indices (binary features).

    Stored in CSR form: the features of token ``j`` are
    ``indices[indptr[j]:indptr[j + 1]]``, sorted and deduplicated.
    """

    __slots__ = ("indptr", "indices", "_csr")

    def __init__(self, tokens: Iterable[Iterable[int]]):
        indptr = [0]
        indices = []
        for tok in tokens:
            feats = sorted({int(t) for t in tok})
            if feats and feats[0] < 0:
                raise InvalidInputError("feature indices must be non-negative")
            indices.extend(feats)
            indptr.append(len(indices))
        if len(indptr) < 2:
            raise InvalidInputError("a token sequence needs at least one token")
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self._csr = None

    def __len__(self) -> int:
        return self.indptr.shape[0] - 1

    def __eq__(self, other):
        if not isinstance(other, TokenSequence):
            return NotImplemented
        return np.array_equal(self.indptr, other.indptr) and np.array_equal(self.indices, other.indices)

    def __hash__(self):
        return hash((self.indptr.tobytes(), self.indices.tobytes()))

    def __repr__(self):
        return f"TokenSequence({self.tokens})"

    @property
    def tokens(self) -> list:
        p = self.indptr
        return [tuple(int(t) for t in self.indices[p[j]:p[j + 1]]) for j in range(len(self))]

    @property
    def positions(self) -> np.ndarray:
        """Token position of every stored feature (parallel to ``indices``)."""
        return np.repeat(np.arange(len(self)), np.diff(self.indptr))

    def max_feature(self) -> int:
        return int(self.indices.max()) if self.indices.size else -1

    def check(self, d: int):
        if self.max_feature() >= d:
            raise InvalidInputError(f"feature index {self.max_feature()} out of range for d={d}")

    def matrix(self, d: int) -> sp.csr_matrix:
        """Binary ``L x d`` incidence matrix."""
        m = self._csr
        if m is None or m.shape[1] != d:
            self.check(d)
            data = np.ones(self.indices.shape[0])
            m = sp.csr_matrix((data, self.indices, self.indptr), shape=(len(self), d))
            self._csr = m
        return m


class LabeledPair(NamedTuple):
    x: TokenSequence
    y: LabelSeq


def make_pair(tokens, labels: Sequence[int]) -> LabeledPair:
    x = tokens if isinstance(tokens, TokenSequence) else TokenSequence(tokens)
    y = tuple(int(c) for c in labels)
    if len(y) != len(x):
        raise InvalidInputError(f"{len(x)} tokens but {len(y)} labels")
    return LabeledPair(x, y)


def check_labels(y: Sequence[int], length: int, k: int):
    if len(y) != length:
        raise InvalidInputError(f"label sequence length {len(y)} != {length}")
    for c in y:
        if not 0 <= c < k:
            raise InvalidInputError(f"label index {c} out of range for k={k}")


class SparseVector:
    """Sorted index/value arrays over ``[0, dim)`` with no stored zeros."""

    __slots__ = ("indices", "values", "dim")

    def __init__(self, indices, values, dim: int):
        self.indices = indices
        self.values = values
        self.dim = dim

    @classmethod
    def from_pairs(cls, indices, values, dim: int) -> "SparseVector":
        """Sum duplicate indices and drop zeros."""
        indices = np.asarray(indices, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if indices.size and (indices.min() < 0 or indices.max() >= dim):
            raise InvalidInputError(f"sparse index out of range for dimension {dim}")
        uniq, inv = np.unique(indices, return_inverse=True)
        sums = np.zeros(uniq.shape[0])
        np.add.at(sums, inv, values)
        keep = sums != 0.0
        return cls(uniq[keep], sums[keep], dim)

    @classmethod
    def from_dict(cls, entries: dict, dim: int) -> "SparseVector":
        return cls.from_pairs(list(entries.keys()), list(entries.values()), dim)

    @classmethod
    def from_dense(cls, x: np.ndarray) -> "SparseVector":
        idx = np.flatnonzero(x)
        return cls(idx.astype(np.int64), x[idx].astype(np.float64), x.shape[0])

    @classmethod
    def zeros(cls, dim: int) -> "SparseVector":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0), dim)

    @property
    def nnz(self) -> int:
        return self.indices.shape[0]

    def as_dict(self) -> dict:
        return {int(i): float(v) for i, v in zip(self.indices, self.values)}

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    def dot(self, w: np.ndarray) -> float:
        if w.shape[0] != self.dim:
            raise InvalidInputError(f"dimension mismatch: {w.shape[0]} vs {self.dim}")
        return float(self.values @ w[self.indices])

    def add_to(self, w: np.ndarray, scale: float = 1.0):
        """In place ``w += scale * self``."""
        w[self.indices] += scale * self.values

    def norm_sq(self) -> float:
        return float(self.values @ self.values)

    def _combine(self, other: "SparseVector", sign: float) -> "SparseVector":
        if other.dim != self.dim:
            raise InvalidInputError(f"dimension mismatch: {self.dim} vs {other.dim}")
        return SparseVector.from_pairs(
            np.concatenate([self.indices, other.indices]),
            np.concatenate([self.values, sign * other.values]),
            self.dim,
        )

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __mul__(self, scale: float):
        if scale == 0:
            return SparseVector.zeros(self.dim)
        return SparseVector(self.indices, self.values * scale, self.dim)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __eq__(self, other):
        if not isinstance(other, SparseVector):
            return NotImplemented
        return (self.dim == other.dim and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.values, other.values))

    def __repr__(self):
        return f"SparseVector({self.as_dict()}, dim={self.dim})"


def joint_feature(x: TokenSequence, y: Sequence[int], k: int, d: int) -> SparseVector:
    """f(x, y): transition bigram counts followed by per-label emission counts."""
    L = len(x)
    check_labels(y, L, k)
    x.check(d)
    ya = np.asarray(y, dtype=np.int64)
    trans = ya[:-1] * k + ya[1:]
    emis = k * k + ya[x.positions] * d + x.indices
    idx = np.concatenate([trans, emis])
    return SparseVector.from_pairs(idx, np.ones(idx.shape[0]), n_features(k, d))


def delta_feature(pair: LabeledPair, y: Sequence[int], k: int, d: int) -> SparseVector:
    """f(x_i, y_i) - f(x_i, y)."""
    if len(y) != len(pair.x):
        raise InvalidInputError(f"labeling length {len(y)} != sequence length {len(pair.x)}")
    return joint_feature(pair.x, pair.y, k, d) - joint_feature(pair.x, y, k, d)


def score(w: np.ndarray, x: TokenSequence, y: Sequence[int], k: int) -> float:
    """w . f(x, y)."""
    d = input_dim(w, k)
    return joint_feature(x, y, k, d).dot(w)


def hamming_loss(y_true: Sequence[int], y: Sequence[int]) -> int:
    if len(y_true) != len(y):
        raise InvalidInputError(f"length mismatch: {len(y_true)} vs {len(y)}")
    return sum(1 for a, b in zip(y_true, y) if a != b)
