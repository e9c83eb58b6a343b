"""Bag-of-n-grams logistic regression style classifier.

Label 1 is the target style. The same model scores sentences for bucketing
and measures transfer accuracy of generated outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import Sentence, StyleCorpus, EmptyCorpusError

CLASSIFIER_VERSION = 1


def ngram_features(tokens: Sequence[str], n_range: tuple[int, int]) -> dict[str, int]:
    lo, hi = n_range
    feats: dict[str, int] = {}
    for n in range(lo, hi + 1):
        for i in range(len(tokens) - n + 1):
            key = " ".join(tokens[i:i + n])
            feats[key] = feats.get(key, 0) + 1
    return feats


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class NgramClassifier:
    weights: dict[str, float]
    bias: float
    n_range: tuple[int, int] = (1, 2)
    label_map: dict[int, str] = field(default_factory=lambda: {0: "source", 1: "target"})
    loss_history: list[float] = field(default_factory=list, repr=False, compare=False)

    def logit(self, s: Sentence | Sequence[str]) -> float:
        tokens = s.tokens if isinstance(s, Sentence) else tuple(s)
        z = self.bias
        for key, c in ngram_features(tokens, self.n_range).items():
            z += c * self.weights.get(key, 0.0)
        return z

    def score(self, s: Sentence | Sequence[str]) -> float:
        return float(_sigmoid(self.logit(s)))

    __call__ = score

    def predict(self, s) -> int:
        return int(self.score(s) >= 0.5)

    def to_dict(self) -> dict:
        return {
            "version": CLASSIFIER_VERSION,
            "weights": self.weights,
            "bias": self.bias,
            "n_range": list(self.n_range),
            "label_map": {str(k): v for k, v in self.label_map.items()},
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "NgramClassifier":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        if d.get("version") != CLASSIFIER_VERSION:
            raise ValueError(f"{path}: unsupported classifier version {d.get('version')!r}")
        return cls(
            weights={k: float(v) for k, v in d["weights"].items()},
            bias=float(d["bias"]),
            n_range=tuple(d["n_range"]),
            label_map={int(k): v for k, v in d["label_map"].items()},
        )


def _design_matrix(docs: Sequence[Sequence[str]], n_range, index: dict[str, int]):
    rows, cols, vals = [], [], []
    for r, toks in enumerate(docs):
        for key, c in ngram_features(toks, n_range).items():
            j = index.get(key)
            if j is not None:
                rows.append(r)
                cols.append(j)
                vals.append(c)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(docs), len(index)), dtype=np.float64)


def train_classifier(
    pos: StyleCorpus | Sequence[Sentence],
    neg: StyleCorpus | Sequence[Sentence],
    epochs: int = 200,
    lr: float = 0.5,
    l2: float = 1e-4,
    n_range: tuple[int, int] = (1, 2),
    seed: int = 0,
    label_map: dict[int, str] | None = None,
) -> NgramClassifier:
    """Full-batch gradient descent on mean cross-entropy plus an L2 penalty.

    ``pos`` is label 1 (target style), ``neg`` label 0. Weights start at
    zero, so the result is fully determined by the data and hyperparameters;
    ``seed`` is accepted for interface symmetry with the other trainers.
    """
    pos_s = list(pos.sentences if isinstance(pos, StyleCorpus) else pos)
    neg_s = list(neg.sentences if isinstance(neg, StyleCorpus) else neg)
    if not pos_s or not neg_s:
        raise EmptyCorpusError("both classifier corpora must be non-empty")
    if label_map is None:
        label_map = {
            0: getattr(neg, "style_id", "source"),
            1: getattr(pos, "style_id", "target"),
        }

    docs = [s.tokens for s in pos_s] + [s.tokens for s in neg_s]
    y = np.concatenate([np.ones(len(pos_s)), np.zeros(len(neg_s))])
    vocab = sorted({k for toks in docs for k in ngram_features(toks, n_range)})
    index = {k: i for i, k in enumerate(vocab)}
    X = _design_matrix(docs, n_range, index)
    n = len(docs)

    w = np.zeros(len(vocab))
    b = 0.0
    history = []
    for _ in range(epochs):
        z = X @ w + b
        p = _sigmoid(z)
        # log(1 + e^z) - y z, computed stably
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * w @ w)
        history.append(loss)
        err = (p - y) / n
        w -= lr * (X.T @ err + l2 * w)
        b -= lr * float(err.sum())

    z = X @ w + b
    history.append(float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * w @ w))
    return NgramClassifier(
        weights={k: float(v) for k, v in zip(vocab, w)},
        bias=b,
        n_range=tuple(n_range),
        label_map=dict(label_map),
        loss_history=history,
    )


def score_sentence(c: NgramClassifier, s: Sentence) -> float:
    return c.score(s)


def transfer_accuracy(c: NgramClassifier, outputs: Iterable[Sentence | Sequence[str]],
                      target_label: int) -> float:
    """Fraction of outputs classified as ``target_label``.

    A score of exactly 0.5 counts as the target class for either label.
    """
    if target_label not in (0, 1):
        raise ValueError("target_label must be 0 or 1")
    scores = [c.score(o) for o in outputs]
    if not scores:
        raise ValueError("transfer_accuracy needs at least one output")
    if target_label == 1:
        hits = sum(s >= 0.5 for s in scores)
    else:
        hits = sum(s <= 0.5 for s in scores)
    return hits / len(scores)


def accuracy(c: NgramClassifier, pos: Iterable[Sentence], neg: Iterable[Sentence]) -> float:
    pos, neg = list(pos), list(neg)
    right = sum(c.score(s) >= 0.5 for s in pos) + sum(c.score(s) < 0.5 for s in neg)
    return right / (len(pos) + len(neg))


def safe_learning_rate(*corpora: Iterable[Sentence], n_range=(1, 2), l2: float = 1e-4) -> float:
    """A step size for which full-batch gradient descent cannot increase the loss.

    Uses the bound L <= max_row_norm^2 / 4 + l2 on the loss Hessian
    (bias column included).
    """
    max_sq = 0.0
    for corpus in corpora:
        for s in corpus:
            feats = ngram_features(s.tokens, n_range)
            max_sq = max(max_sq, 1.0 + sum(v * v for v in feats.values()))
    return 1.0 / (max_sq / 4.0 + l2) if max_sq else 1.0
