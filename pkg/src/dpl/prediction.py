"""Discriminative classifiers trained by distillation on soft labels.

Two model kinds share one flat parameter vector:

* ``logreg``: ``score = w.x + b``
* ``mlp1``: ``score = w2.tanh(W1 x + b1) + b2``

and ``p1 = sigmoid(score)``.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit, log_expit

from .data import Dataset
from .inference import MarginalTable
from .jsonio import dump_json

KINDS = ("logreg", "mlp1")


@dataclass
class TrainOptions:
    epochs: int = 10
    learning_rate: float = 0.01
    batch_size: int = 64
    seed: int = 0
    l2: float = 1e-4

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0 or self.l2 < 0:
            raise ValueError(f"invalid training options {self}")


@dataclass
class Classifier:
    kind: str
    d: int
    params: np.ndarray
    hidden: Optional[int] = None
    seed: int = 0
    trained_epochs: int = 0

    @classmethod
    def init(cls, kind: str = "logreg", d: int = 1, hidden: int = 16, seed: int = 0) -> "Classifier":
        if kind == "logreg":
            return cls(kind, d, np.zeros(d + 1), None, seed)
        if kind == "mlp1":
            rng = np.random.default_rng(seed)
            bound = 1.0 / np.sqrt(max(d, 1))
            W1 = rng.uniform(-bound, bound, size=(hidden, d))
            params = np.concatenate([W1.ravel(), np.zeros(hidden), np.zeros(hidden), [0.0]])
            return cls(kind, d, params, hidden, seed)
        raise ValueError(f"unknown classifier kind {kind!r}")

    def copy(self) -> "Classifier":
        return dataclasses.replace(self, params=self.params.copy())

    def _unpack(self, params=None):
        p = self.params if params is None else params
        h, d = self.hidden, self.d
        W1 = p[: h * d].reshape(h, d)
        b1 = p[h * d: h * d + h]
        w2 = p[h * d + h: h * d + 2 * h]
        return W1, b1, w2, p[-1]

    def scores(self, X) -> np.ndarray:
        X = _as_matrix(X, self.d)
        if self.kind == "logreg":
            return X @ self.params[:-1] + self.params[-1]
        W1, b1, w2, b2 = self._unpack()
        return np.tanh(X @ W1.T + b1) @ w2 + b2

    def predict_proba(self, X) -> np.ndarray:
        p1 = expit(self.scores(X))
        return np.column_stack([1.0 - p1, p1])

    def log_proba(self, X) -> np.ndarray:
        s = self.scores(X)
        return np.column_stack([log_expit(-s), log_expit(s)])


def _as_matrix(X, d: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != d:
        raise ValueError(f"dimension mismatch: got {X.shape[1]} features, classifier expects {d}")
    return X


def predict(c: Classifier, x) -> tuple:
    x = np.asarray(x, dtype=float)
    if x.shape != (c.d,):
        raise ValueError(f"dimension mismatch: got {x.shape}, classifier expects ({c.d},)")
    p1 = float(expit(c.scores(x)[0]))
    return 1.0 - p1, p1


def decide(p1, threshold: float = 0.5):
    """Label 1 iff ``p1 >= threshold`` (inclusive)."""
    if np.ndim(p1):
        return (np.asarray(p1) >= threshold).astype(int)
    return int(p1 >= threshold)


def _targets(q) -> np.ndarray:
    if isinstance(q, MarginalTable):
        return q.q1
    q = np.asarray(q, dtype=float)
    return q[:, 1] if q.ndim == 2 else q


def loss(c: Classifier, X, q, l2: float = 0.0, params=None) -> float:
    """Mean cross-entropy H(q, p) plus ``l2 * ||params||^2``."""
    c = c if params is None else dataclasses.replace(c, params=np.asarray(params, dtype=float))
    q1 = _targets(q)
    s = c.scores(X)
    ce = -(q1 * log_expit(s) + (1 - q1) * log_expit(-s))
    return float(np.mean(ce) + l2 * np.dot(c.params, c.params))


def gradient(c: Classifier, X, q, l2: float = 0.0) -> np.ndarray:
    """Gradient of :func:`loss` with respect to the flat parameter vector."""
    X = _as_matrix(X, c.d)
    q1 = _targets(q)
    n = len(X)
    if c.kind == "logreg":
        delta = (expit(X @ c.params[:-1] + c.params[-1]) - q1) / n
        g = np.concatenate([X.T @ delta, [delta.sum()]])
    else:
        W1, b1, w2, b2 = c._unpack()
        a = np.tanh(X @ W1.T + b1)
        delta = (expit(a @ w2 + b2) - q1) / n
        dz = np.outer(delta, w2) * (1.0 - a * a)
        g = np.concatenate([(dz.T @ X).ravel(), dz.sum(axis=0), a.T @ delta, [delta.sum()]])
    return g + 2.0 * l2 * c.params


def train_distill(c: Classifier, ds, q, opts: TrainOptions | None = None, history: list | None = None):
    """Fit ``c`` to soft targets ``q`` by mini-batch gradient descent.

    Returns ``(classifier, final_loss)``; the input classifier is untouched.
    When ``history`` is a list, the full-data loss after each epoch is
    appended to it.
    """
    opts = opts or TrainOptions()
    X = ds.X if isinstance(ds, Dataset) else _as_matrix(ds, c.d)
    q1 = _targets(q)
    if len(q1) != len(X):
        raise ValueError(f"{len(q1)} targets for {len(X)} instances")
    c = c.copy()
    rng = np.random.default_rng(opts.seed)
    n = len(X)
    for _ in range(opts.epochs):
        order = rng.permutation(n)
        for start in range(0, n, opts.batch_size):
            idx = order[start:start + opts.batch_size]
            c.params -= opts.learning_rate * gradient(c, X[idx], q1[idx], opts.l2)
        c.trained_epochs += 1
        if history is not None:
            history.append(loss(c, X, q1, opts.l2))
    final = loss(c, X, q1, opts.l2) if n else 0.0
    return c, final


def classifier_to_dict(c: Classifier) -> dict:
    doc = {
        "kind": c.kind,
        "d": c.d,
        "params": [float(v) for v in c.params],
        "seed": c.seed,
        "trainedEpochs": c.trained_epochs,
    }
    if c.hidden is not None:
        doc["hidden"] = c.hidden
    return doc


def classifier_from_dict(doc: dict) -> Classifier:
    kind = doc["kind"]
    if kind not in KINDS:
        raise ValueError(f"unknown classifier kind {kind!r}")
    d = int(doc["d"])
    hidden = doc.get("hidden")
    params = np.asarray(doc["params"], dtype=float)
    expected = d + 1 if kind == "logreg" else hidden * d + 2 * hidden + 1
    if params.shape != (expected,):
        raise ValueError(f"model has {params.size} parameters, expected {expected}")
    return Classifier(kind, d, params, hidden, int(doc.get("seed", 0)), int(doc.get("trainedEpochs", 0)))


def save_classifier(c: Classifier, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_json(classifier_to_dict(c)))


def load_classifier(path) -> Classifier:
    with open(path, encoding="utf-8") as fh:
        return classifier_from_dict(json.load(fh))
