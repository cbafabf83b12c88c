"""Differentiable training objectives with mini-batch gradient oracles.

Three tiers stand in for a conv-net on images:

* ``QuadraticObjective`` -- ``0.5 * ||x - target||^2``, batch independent,
  with a known optimum.
* ``LogisticObjective`` -- binary logistic regression, parameters
  ``[w_1 .. w_d | b]``.
* ``MLPObjective`` -- one tanh hidden layer, softmax log loss. Parameters are
  ``[W1 | b1 | W2 | b2]`` flattened row-major, with ``W1`` of shape
  ``(n_features, hidden)`` and ``W2`` of shape ``(hidden, n_classes)``.

Every objective adds ``weight_decay / 2 * ||x||^2`` to the loss.
"""

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, DivergenceError, DomainError, IngestionError
from .numeric_core import as_vector

OBJECTIVE_KINDS = ("quadratic", "logistic", "mlp")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.float64).reshape(-1)
        if features.ndim != 2 or features.shape[0] == 0:
            raise DomainError("dataset must hold at least one example")
        if features.shape[0] != labels.shape[0]:
            raise DimensionError(
                f"{features.shape[0]} feature rows but {labels.shape[0]} labels"
            )
        features.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]


@dataclass(frozen=True)
class MiniBatch:
    indices: np.ndarray

    @property
    def size(self):
        return len(self.indices)


PLACEHOLDER_BATCH = MiniBatch(np.zeros(0, dtype=np.int64))


class Objective:
    kind = None

    def __init__(self, dim, dataset=None, weight_decay=0.0):
        if weight_decay < 0:
            raise DomainError("weight decay must be >= 0")
        self.dim = int(dim)
        self.dataset = dataset
        self.weight_decay = float(weight_decay)

    def _check(self, x):
        if x.shape != (self.dim,):
            raise DimensionError(f"expected {self.dim} parameters, got {x.shape[0]}")

    def loss(self, x, batch):
        return self.loss_and_gradient(x, batch)[0]

    def gradient(self, x, batch):
        return self.loss_and_gradient(x, batch)[1]

    def loss_and_gradient(self, x, batch):
        self._check(x)
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grad = self._data_term(x, batch)
            if self.weight_decay:
                loss += 0.5 * self.weight_decay * float(x @ x)
                grad = grad + self.weight_decay * x
        if not math.isfinite(loss):
            raise DivergenceError("loss is not finite")
        return loss, as_vector(grad)

    def _data_term(self, x, batch):
        raise NotImplementedError

    def sample_batch(self, r, size):
        """Draw ``size`` example indices uniformly with replacement."""
        if size < 1:
            raise DomainError(f"batch size must be >= 1, got {size}")
        idx = r.integers(0, len(self.dataset), size=size)
        return MiniBatch(idx)

    def full_batch(self):
        return MiniBatch(np.arange(len(self.dataset)))

    def init_params(self, r):
        raise NotImplementedError


class QuadraticObjective(Objective):
    kind = "quadratic"

    def __init__(self, target, weight_decay=0.0):
        target = as_vector(target)
        super().__init__(len(target), None, weight_decay)
        self.target = target

    def _data_term(self, x, batch):
        diff = x - self.target
        return 0.5 * float(diff @ diff), diff

    def sample_batch(self, r, size):
        if size < 1:
            raise DomainError(f"batch size must be >= 1, got {size}")
        return PLACEHOLDER_BATCH

    def full_batch(self):
        return PLACEHOLDER_BATCH

    def optimum(self):
        return as_vector(self.target / (1.0 + self.weight_decay))

    def init_params(self, r):
        return as_vector(r.normal(self.dim))


class LogisticObjective(Objective):
    kind = "logistic"

    def __init__(self, dataset, weight_decay=0.0):
        bad = ~np.isin(dataset.labels, (0.0, 1.0))
        if bad.any():
            raise DomainError("logistic regression needs labels in {0, 1}")
        super().__init__(dataset.dim + 1, dataset, weight_decay)

    def _data_term(self, x, batch):
        X = self.dataset.features[batch.indices]
        y = self.dataset.labels[batch.indices]
        w, b = x[:-1], x[-1]
        z = X @ w + b
        n = len(y)
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
        r = (_sigmoid(z) - y) / n
        grad = np.empty(self.dim)
        grad[:-1] = r @ X
        grad[-1] = r.sum()
        return loss, grad

    def predict(self, x, features):
        return (features @ x[:-1] + x[-1] > 0).astype(np.float64)

    def init_params(self, r):
        bound = 1.0 / math.sqrt(self.dataset.dim)
        return as_vector(r.uniform(-bound, bound, self.dim))


class MLPObjective(Objective):
    kind = "mlp"

    def __init__(self, dataset, hidden=16, n_classes=None, weight_decay=0.0):
        labels = dataset.labels
        if np.any(labels < 0) or np.any(labels != np.round(labels)):
            raise DomainError("mlp needs non-negative integer class labels")
        if n_classes is None:
            n_classes = max(2, int(labels.max()) + 1)
        self.n_in = dataset.dim
        self.hidden = int(hidden)
        self.n_classes = int(n_classes)
        dim = self.n_in * self.hidden + self.hidden + self.hidden * self.n_classes + self.n_classes
        super().__init__(dim, dataset, weight_decay)
        self._y = labels.astype(np.int64)

    def unpack(self, x):
        """Split a flat vector into ``(W1, b1, W2, b2)`` views."""
        n_in, h, k = self.n_in, self.hidden, self.n_classes
        i = 0
        W1 = x[i:i + n_in * h].reshape(n_in, h)
        i += n_in * h
        b1 = x[i:i + h]
        i += h
        W2 = x[i:i + h * k].reshape(h, k)
        i += h * k
        b2 = x[i:i + k]
        return W1, b1, W2, b2

    def _data_term(self, x, batch):
        W1, b1, W2, b2 = self.unpack(x)
        X = self.dataset.features[batch.indices]
        y = self._y[batch.indices]
        n = len(y)
        H = np.tanh(X @ W1 + b1)
        logits = H @ W2 + b2
        shift = logits.max(axis=1, keepdims=True)
        e = np.exp(logits - shift)
        s = e.sum(axis=1, keepdims=True)
        rows = np.arange(n)
        loss = float(np.mean(np.log(s[:, 0]) + shift[:, 0] - logits[rows, y]))

        d_logits = e / s
        d_logits[rows, y] -= 1.0
        d_logits /= n
        d_H = (d_logits @ W2.T) * (1.0 - H * H)
        grad = np.concatenate([
            (X.T @ d_H).ravel(),
            d_H.sum(axis=0),
            (H.T @ d_logits).ravel(),
            d_logits.sum(axis=0),
        ])
        return loss, grad

    def predict(self, x, features):
        W1, b1, W2, b2 = self.unpack(x)
        return np.argmax(np.tanh(features @ W1 + b1) @ W2 + b2, axis=1).astype(np.float64)

    def init_params(self, r):
        n_in, h, k = self.n_in, self.hidden, self.n_classes
        b_in = 1.0 / math.sqrt(n_in)
        b_h = 1.0 / math.sqrt(h)
        parts = [
            r.uniform(-b_in, b_in, n_in * h),
            r.uniform(-b_in, b_in, h),
            r.uniform(-b_h, b_h, h * k),
            r.uniform(-b_h, b_h, k),
        ]
        return as_vector(np.concatenate(parts))


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def make_objective(kind, dataset=None, dim=None, hidden=16, weight_decay=0.0, target=None):
    """Build an objective by name. Quadratic needs ``dim`` or ``target``."""
    if kind == "quadratic":
        if target is None:
            if dim is None:
                raise DomainError("quadratic objective needs a dimension")
            target = np.zeros(dim)
        return QuadraticObjective(target, weight_decay)
    if dataset is None:
        raise DomainError(f"{kind} objective needs a dataset")
    if kind == "logistic":
        return LogisticObjective(dataset, weight_decay)
    if kind == "mlp":
        return MLPObjective(dataset, hidden=hidden, weight_decay=weight_decay)
    raise DomainError(f"unknown objective kind {kind!r}; expected one of {OBJECTIVE_KINDS}")


def accuracy(obj, x, dataset=None):
    dataset = dataset or obj.dataset
    return float(np.mean(obj.predict(x, dataset.features) == dataset.labels))


# -- finite-difference oracle -------------------------------------------------

def finite_difference_gradient(obj, x, batch, h=1e-5):
    """Central differences of ``obj.loss``; touches nothing but the loss."""
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(len(x)):
        old = x[i]
        x[i] = old + h
        up = obj.loss(as_vector(x), batch)
        x[i] = old - h
        down = obj.loss(as_vector(x), batch)
        x[i] = old
        g[i] = (up - down) / (2.0 * h)
    return g


def relative_error(analytic, numeric, floor=1e-8):
    """Componentwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps near-zero components from turning round-off into a huge
    ratio.
    """
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def check_gradient(obj, r, probes=20, batch_size=8, h=1e-5):
    """Max relative error between analytic and finite-difference gradients
    over ``probes`` random ``(x, batch)`` pairs."""
    worst = 0.0
    for _ in range(probes):
        x = as_vector(r.normal(obj.dim))
        batch = obj.sample_batch(r, batch_size)
        err = relative_error(obj.gradient(x, batch), finite_difference_gradient(obj, x, batch, h))
        worst = max(worst, float(err.max()))
    return worst


# -- CSV ingestion -------------------------------------------------------------

def load_csv_dataset(path, label_column):
    """Read a numeric CSV with a header row.

    ``label_column`` is a header name or a 0-based column index; all other
    columns become features.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot open dataset ({exc.strerror})", path) from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise IngestionError("missing header row", path, 1)
        header = [h.strip() for h in header]
        label_idx = _resolve_label(header, label_column, path)
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IngestionError(
                    f"expected {len(header)} columns, found {len(row)}", path, lineno
                )
            try:
                values = [float(c) for c in row]
            except ValueError:
                bad = next(c for c in row if not _is_number(c))
                raise IngestionError(f"non-numeric cell {bad!r}", path, lineno) from None
            if not all(math.isfinite(v) for v in values):
                raise IngestionError("non-finite cell", path, lineno)
            labels.append(values.pop(label_idx))
            feats.append(values)
    if not feats:
        raise IngestionError("dataset is empty (header only)", path)
    return Dataset(np.array(feats, dtype=np.float64).reshape(len(feats), -1), np.array(labels))


def _resolve_label(header, label_column, path):
    if isinstance(label_column, int) or (isinstance(label_column, str) and label_column.lstrip("-").isdigit()
                                         and label_column not in header):
        idx = int(label_column)
        if not -len(header) <= idx < len(header):
            raise IngestionError(f"label column index {idx} out of range", path, 1)
        return idx % len(header)
    if label_column not in header:
        raise IngestionError(f"label column {label_column!r} not in header", path, 1)
    return header.index(label_column)


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True
