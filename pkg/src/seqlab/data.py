"""CoNLL-style column files, synthetic planted-weight data, and model files.

Column format: one token per line, ``<feature>... <label>``; a blank line
ends a sequence. Every field but the last is a binary feature name, so the
word itself is a feature only if the file lists it (e.g. ``w=the``).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidInputError
from .inference import viterbi_decode
from .model import LabelAlphabet, LabeledPair, TokenSequence, n_features

log = logging.getLogger(__name__)

MODEL_MAGIC = "seqlab"
MODEL_VERSION = 1


@dataclass
class Dataset:
    pairs: list
    alphabet: LabelAlphabet | None
    feature_names: list

    def __post_init__(self):
        self.feature_dict = {name: i for i, name in enumerate(self.feature_names)}
        if len(self.feature_dict) != len(self.feature_names):
            raise InvalidInputError("feature names must be distinct")

    @property
    def k(self) -> int:
        return 0 if self.alphabet is None else self.alphabet.k

    @property
    def d(self) -> int:
        return len(self.feature_names)

    @property
    def N(self) -> int:
        return n_features(self.k, self.d)

    @property
    def vocabulary(self):
        """``(alphabet, feature_names)`` for loading held-out files against this dataset."""
        return self.alphabet, self.feature_names

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    def __iter__(self):
        return iter(self.pairs)

    def n_tokens(self) -> int:
        return sum(len(p.y) for p in self.pairs)

    def subset(self, indices) -> "Dataset":
        return Dataset([self.pairs[int(i)] for i in indices], self.alphabet, self.feature_names)


def load_conll(path, vocabulary=None) -> Dataset:
    """Read a column file.

    With ``vocabulary=(alphabet, feature_names)`` the dictionaries are frozen:
    unseen feature names are dropped and an unseen label is a
    :class:`FormatError`. Otherwise both are built in first-appearance order.
    """
    path = Path(path)
    frozen = vocabulary is not None
    if frozen:
        alphabet, names = vocabulary
        labels = list(alphabet.labels)
        label_index = {lab: i for i, lab in enumerate(labels)}
        names = list(names)
        feat_index = {name: i for i, name in enumerate(names)}
    else:
        labels, label_index, names, feat_index = [], {}, [], {}

    pairs = []
    cur_feats, cur_labels = [], []

    def flush():
        pairs.append(LabeledPair(TokenSequence(cur_feats), tuple(cur_labels)))
        cur_feats.clear()
        cur_labels.clear()

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                if cur_labels:
                    flush()
                elif lineno > 1:
                    log.warning("%s:%d: empty sequence skipped", path, lineno)
                continue
            label = fields[-1]
            if label not in label_index:
                if frozen:
                    raise FormatError(f"unknown label {label!r}", path, lineno)
                label_index[label] = len(labels)
                labels.append(label)
            feats = []
            for name in fields[:-1]:
                idx = feat_index.get(name)
                if idx is None:
                    if frozen:
                        continue
                    idx = feat_index[name] = len(names)
                    names.append(name)
                feats.append(idx)
            cur_feats.append(feats)
            cur_labels.append(label_index[label])
    if cur_labels:
        flush()
    alphabet = LabelAlphabet(tuple(labels)) if labels else None
    return Dataset(pairs, alphabet, names)


def write_conll(dataset: Dataset, path):
    with open(path, "w", encoding="utf-8") as fh:
        for pair in dataset.pairs:
            for feats, c in zip(pair.x.tokens, pair.y):
                cols = [dataset.feature_names[t] for t in feats] + [dataset.alphabet.labels[c]]
                fh.write(" ".join(cols) + "\n")
            fh.write("\n")


def generate_synthetic(k: int, d: int, n: int, length_range=(5, 10), seed: int = 0,
                       planted_weight_scale: float = 1.0, features_per_token: int = 3,
                       label_noise: float = 0.0):
    """Sequences labeled by Viterbi under a random planted weight vector.

    Returns ``(dataset, w_star)``. With ``label_noise = 0`` the data is
    separable by ``w_star``; otherwise each label is replaced by a different
    uniformly drawn label with that probability.
    """
    if k < 1 or d < 1 or n < 1:
        raise InvalidInputError("k, d and n must be positive")
    lo, hi = length_range
    if not 1 <= lo <= hi:
        raise InvalidInputError("invalid length range")
    rng = np.random.default_rng(seed)
    w_star = rng.normal(0.0, 1.0, n_features(k, d)) * planted_weight_scale
    m = min(features_per_token, d)
    pairs = []
    for _ in range(n):
        L = int(rng.integers(lo, hi + 1))
        x = TokenSequence([rng.choice(d, size=m, replace=False) for _ in range(L)])
        y = list(viterbi_decode(w_star, x, k))
        if label_noise > 0 and k > 1:
            for j in range(L):
                if rng.random() < label_noise:
                    y[j] = (y[j] + int(rng.integers(1, k))) % k
        pairs.append(LabeledPair(x, tuple(y)))
    alphabet = LabelAlphabet(tuple(f"L{c}" for c in range(k)))
    return Dataset(pairs, alphabet, [f"f{t}" for t in range(d)]), w_star


# ---------------------------------------------------------------------------
# Model files


@dataclass
class ModelFile:
    labels: list
    features: list
    weights: np.ndarray
    version: int = MODEL_VERSION

    @property
    def k(self) -> int:
        return len(self.labels)

    @property
    def d(self) -> int:
        return len(self.features)

    @property
    def alphabet(self) -> LabelAlphabet:
        return LabelAlphabet(tuple(self.labels))

    @property
    def vocabulary(self):
        return self.alphabet, list(self.features)


def save_model(path, model: ModelFile):
    w = np.asarray(model.weights, dtype=np.float64)
    if w.shape[0] != n_features(model.k, model.d):
        raise InvalidInputError("weight length does not match k and d")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{MODEL_MAGIC} {MODEL_VERSION} {model.k} {model.d}\n")
        for name in list(model.labels) + list(model.features):
            fh.write(f"{name}\n")
        for i in np.flatnonzero(w):
            fh.write(f"{i} {w[i]:.17g}\n")


def load_model(path) -> ModelFile:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError("empty model file", path, 1)
    head = lines[0].split()
    if len(head) != 4 or head[0] != MODEL_MAGIC:
        raise FormatError("bad model header", path, 1)
    try:
        version, k, d = (int(v) for v in head[1:])
    except ValueError:
        raise FormatError("bad model header", path, 1) from None
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version}", path, 1)
    if len(lines) < 1 + k + d:
        raise FormatError("truncated model file", path, len(lines))
    labels = lines[1:1 + k]
    features = lines[1 + k:1 + k + d]
    dim = n_features(k, d)
    w = np.zeros(dim)
    for lineno, line in enumerate(lines[1 + k + d:], start=2 + k + d):
        parts = line.split()
        if not parts:
            continue
        try:
            idx, val = int(parts[0]), float(parts[1])
        except (ValueError, IndexError):
            raise FormatError("expected '<index> <value>'", path, lineno) from None
        if not 0 <= idx < dim:
            raise FormatError(f"weight index {idx} out of range", path, lineno)
        w[idx] = val
    return ModelFile(labels, features, w, version)
