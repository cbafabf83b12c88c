"""Flat parameter-vector arithmetic and per-worker random streams.

A parameter vector is a 1-D float64 numpy array. Every public operation here
returns a fresh read-only array and refuses to hand back NaN or Inf.
"""

import numpy as np

from .errors import ConfigError, DimensionError, DivergenceError, DomainError

DTYPE = np.float64


def as_vector(values):
    """Copy ``values`` into a read-only, finite float64 vector."""
    x = np.array(values, dtype=DTYPE)
    if x.ndim != 1:
        x = x.reshape(-1)
    _freeze(x)
    return x


def _freeze(x):
    if not np.all(np.isfinite(x)):
        raise DivergenceError("non-finite value in parameter vector")
    x.flags.writeable = False
    return x


def _same_length(x, y):
    if x.shape != y.shape:
        raise DimensionError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")


def check_finite(x):
    return bool(np.all(np.isfinite(x)))


def axpy(a, x, y):
    """Return ``a * x + y``."""
    _same_length(x, y)
    with np.errstate(over="ignore", invalid="ignore"):
        return _freeze(a * x + y)


def convex_combine(w, x, y):
    """Return ``w * x + (1 - w) * y`` for ``w`` in [0, 1]."""
    if not 0.0 <= w <= 1.0:
        raise DomainError(f"convex weight must lie in [0, 1], got {w!r}")
    _same_length(x, y)
    with np.errstate(over="ignore", invalid="ignore"):
        return _freeze(w * x + (1.0 - w) * y)


def l2_distance(x, y):
    _same_length(x, y)
    return float(np.linalg.norm(x - y))


class RandomSource:
    """Deterministic random stream keyed by ``(seed, stream)``.

    Backed by the counter-based Philox generator. Streams derived from
    different ``stream`` ids (or different :meth:`child` keys) are
    statistically independent, and the sequence a worker sees does not
    depend on what any other worker draws or on thread interleaving.
    """

    def __init__(self, seed, stream=0, _key=()):
        self.seed = int(seed)
        self.stream = int(stream)
        self._key = (self.stream,) + tuple(_key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self._key)
        self.generator = np.random.Generator(np.random.Philox(ss))

    def child(self, k):
        """Independent sub-stream ``k`` of this stream."""
        return RandomSource(self.seed, self.stream, _key=self._key[1:] + (int(k),))

    def random(self):
        return float(self.generator.random())

    def integers(self, low, high, size=None):
        return self.generator.integers(low, high, size=size)

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def uniform(self, low, high, size=None):
        return self.generator.uniform(low, high, size)

    def __repr__(self):
        return f"RandomSource(seed={self.seed}, stream={self._key})"


def bernoulli(r, p):
    """Draw ``True`` with probability ``p``. Always consumes one uniform."""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"probability must lie in [0, 1], got {p!r}")
    # random() is in [0, 1): p=0 never fires, p=1 always does
    return r.random() < p


def uniform_peer(r, self_id, M):
    """Pick a worker id uniformly among the ``M - 1`` others."""
    if M < 2:
        raise ConfigError(f"peer selection needs at least 2 workers, got {M}")
    if not 0 <= self_id < M:
        raise DomainError(f"worker id {self_id} out of range for M={M}")
    j = int(r.integers(0, M - 1))
    return j + 1 if j >= self_id else j
