"""Exact softmax regression: scores, probabilities, likelihood and gradients.

Everything here is computed over all C classes and serves as the ground
truth that the sampled estimators are measured against.

Weights are stored as a plain ``(C, D)`` float64 array; row ``c`` is the
weight vector of class ``c``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp


class ConfigurationError(ValueError):
    """Raised when shapes, sizes or settings are inconsistent."""


@dataclass
class OpCounter:
    """Tally of score evaluations, i.e. calculations of the form exp(w.x).

    A bare dot product also counts as one unit.
    """

    count: int = 0

    def add(self, n: int) -> None:
        self.count += int(n)


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    C: int

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ConfigurationError(
                f"{self.inputs.shape[0]} input rows but {self.labels.shape[0]} labels")
        if self.inputs.shape[0] < 1:
            raise ConfigurationError("dataset must contain at least one datapoint")
        if self.C < 1:
            raise ConfigurationError("class count must be positive")
        if self.labels.min() < 0 or self.labels.max() >= self.C:
            raise ConfigurationError(f"labels must lie in [0, {self.C})")

    @property
    def N(self) -> int:
        return self.inputs.shape[0]

    @property
    def D(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.C)


@dataclass
class SparseGradient:
    """Per-class weight gradients for the classes an estimator touched.

    ``classes`` are sorted and unique; ``rows[i]`` is the gradient of
    ``W[classes[i]]``. ``degenerate`` counts datapoints whose estimator fell
    back to a degenerate form (e.g. an empty Bernoulli draw).
    """

    classes: np.ndarray
    rows: np.ndarray
    op_count: int = 0
    degenerate: int = 0
    D: int = field(init=False)

    def __post_init__(self):
        self.classes = np.asarray(self.classes, dtype=np.int64)
        self.rows = np.asarray(self.rows, dtype=np.float64)
        self.D = self.rows.shape[1] if self.rows.ndim == 2 else 0

    @classmethod
    def from_weights(cls, class_idx, weights, inputs, op_count=0, degenerate=0):
        """Accumulate ``weights[j] * inputs[j]`` onto ``class_idx[j]``.

        ``class_idx`` and ``weights`` have shape ``(M, T)``; ``inputs`` is
        ``(M, D)``. Reduction is in a fixed order so results are repeatable.
        """
        class_idx = np.asarray(class_idx, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.float64)
        inputs = np.asarray(inputs, dtype=np.float64)
        flat_cls = class_idx.reshape(-1)
        touched, inverse = np.unique(flat_cls, return_inverse=True)
        contrib = (weights[:, :, None] * inputs[:, None, :]).reshape(-1, inputs.shape[1])
        rows = np.zeros((touched.size, inputs.shape[1]))
        np.add.at(rows, inverse, contrib)
        return cls(touched, rows, op_count, degenerate)

    def to_dense(self, C: int) -> np.ndarray:
        out = np.zeros((C, self.D))
        out[self.classes] = self.rows
        return out

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.rows)))


def _check_dims(W: np.ndarray, X: np.ndarray) -> None:
    if W.ndim != 2:
        raise ConfigurationError("weights must be a (C, D) matrix")
    if X.shape[-1] != W.shape[1]:
        raise ConfigurationError(
            f"input dimension {X.shape[-1]} does not match weight dimension {W.shape[1]}")


def scores(W, x, counter: OpCounter | None = None) -> np.ndarray:
    """Scores ``W @ x`` for a single input or a batch of inputs (rows)."""
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    _check_dims(W, x)
    out = x @ W.T
    if counter is not None:
        counter.add(out.size)
    return out


def softmax(s, axis: int = -1) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    shifted = s - np.max(s, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(s, axis: int = -1) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    return s - logsumexp(s, axis=axis, keepdims=True)


def predict_proba(W, X) -> np.ndarray:
    return softmax(scores(W, X), axis=-1)


def log_likelihood(W, data: Dataset, counter: OpCounter | None = None) -> float:
    """Sum over datapoints of log p(c_n | x_n)."""
    S = np.atleast_2d(scores(W, data.inputs, counter))
    log_z = logsumexp(S, axis=1)
    return float(np.sum(S[np.arange(data.N), data.labels] - log_z))


def gamma_exact(W, x, label: int, counter: OpCounter | None = None) -> np.ndarray:
    """Weights delta(c, label) - p(c|x) for every class c."""
    if not 0 <= label < np.shape(W)[0]:
        raise ConfigurationError(f"label {label} outside [0, {np.shape(W)[0]})")
    g = -softmax(scores(W, x, counter))
    g[label] += 1.0
    return g


def gradient_exact(W, batch: Dataset, counter: OpCounter | None = None) -> SparseGradient:
    """Exact minibatch gradient of the log-likelihood (dense over all classes)."""
    W = np.asarray(W, dtype=np.float64)
    C = W.shape[0]
    local = OpCounter()
    G = -softmax(scores(W, batch.inputs, local), axis=1)
    G[np.arange(batch.N), batch.labels] += 1.0
    if counter is not None:
        counter.add(local.count)
    return SparseGradient(np.arange(C), G.T @ batch.inputs, op_count=local.count)
