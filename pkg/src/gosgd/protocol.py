"""GoSGD worker state machine: local SGD plus push-only sum-weight gossip.

Each worker owns ``(x, alpha)`` and an inbox. One iteration is

1. fold every queued message into ``(x, alpha)`` in arrival order,
2. take one SGD step on a fresh mini-batch,
3. with probability ``p``, halve ``alpha`` and push ``(x, alpha)`` to one
   peer chosen uniformly among the others.

The sender's ``x`` is never rescaled by a push. The total weight carried by
workers plus undelivered messages stays exactly 1, and ``sum(alpha * x)``
over the same set only moves through gradient steps.
"""

import math
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DivergenceError, DomainError
from .numeric_core import (
    RandomSource,
    axpy,
    bernoulli,
    convex_combine,
    uniform_peer,
)

# sub-stream keys under each worker's RandomSource
DATA_STREAM = 0
GOSSIP_STREAM = 1
# stream id reserved for the shared initial point and the scheduler
INIT_STREAM = 2**63
SCHEDULE_STREAM = 2**63 + 1


def data_stream(seed, worker_id):
    return RandomSource(seed, worker_id).child(DATA_STREAM)


def gossip_stream(seed, worker_id):
    return RandomSource(seed, worker_id).child(GOSSIP_STREAM)


@dataclass(frozen=True)
class GossipMessage:
    x: np.ndarray
    alpha: float
    sender: int = -1

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"message weight must be positive, got {self.alpha}")


class Inbox:
    """FIFO message sink: many concurrent senders, one consumer.

    ``push`` never blocks. ``deque.append``/``popleft`` are atomic under
    CPython, and only the owning worker pops, so no lock is needed on the
    hot path. After :meth:`close`, pushes are dropped and counted.
    """

    def __init__(self):
        self._q = deque()
        self._closed = False
        self._lock = threading.Lock()
        self.dropped = 0
        self.dropped_alpha = 0.0

    def push(self, msg):
        if self._closed:
            with self._lock:
                self.dropped += 1
                self.dropped_alpha += msg.alpha
            return False
        self._q.append(msg)
        return True

    def pop(self):
        return self._q.popleft()

    def __len__(self):
        return len(self._q)

    def __bool__(self):
        return bool(self._q)

    def snapshot(self):
        return list(self._q)

    def close(self):
        """Stop accepting messages; anything still queued is dropped."""
        with self._lock:
            self._closed = True
            while self._q:
                msg = self._q.popleft()
                self.dropped += 1
                self.dropped_alpha += msg.alpha

    @property
    def closed(self):
        return self._closed


@dataclass
class GossipConfig:
    M: int = 8
    p: float = 0.02
    eta: float = 0.01
    batch_size: int = 128
    iterations: int = 1000
    seed: int = 0
    eta_schedule: Optional[Callable[[int], float]] = None

    def __post_init__(self):
        if self.M < 1:
            raise ConfigError(f"need at least one worker, got M={self.M}")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"exchange probability must lie in [0, 1], got {self.p}")
        if not self.eta > 0:
            raise ConfigError(f"learning rate must be positive, got {self.eta}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 unsigned bits")

    def lr(self, t):
        """Learning rate at (0-based) iteration ``t``."""
        if self.eta_schedule is None:
            return self.eta
        return self.eta_schedule(t)


@dataclass
class WorkerState:
    id: int
    x: np.ndarray
    alpha: float
    rng: RandomSource
    gossip_rng: RandomSource
    inbox: Inbox = field(default_factory=Inbox)
    t: int = 0
    velocity: Optional[np.ndarray] = None
    sent: int = 0
    received: int = 0


@dataclass
class StepResult:
    loss: float
    processed: int = 0
    pushed_to: Optional[int] = None


def init_workers(cfg, obj, x0=None):
    """Create ``cfg.M`` workers at one shared starting point, each with
    ``alpha = 1 / M`` and an empty inbox."""
    if x0 is None:
        x0 = obj.init_params(RandomSource(cfg.seed, INIT_STREAM))
    return [
        WorkerState(
            id=i,
            x=x0,
            alpha=1.0 / cfg.M,
            rng=data_stream(cfg.seed, i),
            gossip_rng=gossip_stream(cfg.seed, i),
        )
        for i in range(cfg.M)
    ]


def mixing_push(sender, inbox):
    sender.alpha = sender.alpha / 2.0
    delivered = inbox.push(GossipMessage(sender.x, sender.alpha, sender.id))
    sender.sent += 1
    return delivered


def mixing_process(worker):
    """Drain the inbox in FIFO order. Returns the number of messages folded in."""
    n = 0
    inbox = worker.inbox
    while inbox:
        msg = inbox.pop()
        total = worker.alpha + msg.alpha
        worker.x = convex_combine(msg.alpha / total, msg.x, worker.x)
        worker.alpha = total
        n += 1
    worker.received += n
    return n


def sgd_step(worker, obj, cfg):
    """One plain SGD step on a fresh mini-batch from the worker's data stream.

    Returns the mini-batch loss measured before the step.
    """
    batch = obj.sample_batch(worker.rng, cfg.batch_size)
    try:
        loss, grad = obj.loss_and_gradient(worker.x, batch)
        worker.x = axpy(-cfg.lr(worker.t), grad, worker.x)
    except DivergenceError as exc:
        raise DivergenceError(
            f"worker {worker.id} diverged at iteration {worker.t}",
            iteration=worker.t, worker=worker.id,
        ) from exc
    return loss


def worker_iteration(worker, obj, cfg, peers):
    """One GoSGD iteration. ``peers`` is indexable by worker id -> Inbox."""
    processed = mixing_process(worker)
    loss = sgd_step(worker, obj, cfg)
    pushed_to = None
    # a lone worker has nobody to talk to
    if cfg.M > 1 and bernoulli(worker.gossip_rng, cfg.p):
        pushed_to = uniform_peer(worker.gossip_rng, worker.id, cfg.M)
        mixing_push(worker, peers[pushed_to])
    worker.t += 1
    return StepResult(loss, processed, pushed_to)


def test_model(workers):
    """Unweighted average of the workers' parameters."""
    if not workers:
        raise DomainError("test model of an empty worker set")
    return np.mean(np.stack([w.x for w in workers]), axis=0)


# stops pytest collecting it when imported into a test module
test_model.__test__ = False


def in_flight(workers):
    return [m for w in workers for m in w.inbox.snapshot()]


def total_mass(workers, messages=None):
    """``(sum of alpha, sum of alpha * x)`` over workers and queued messages.

    Pass ``messages`` explicitly to override the inbox snapshot.
    """
    if messages is None:
        messages = in_flight(workers)
    holders = list(workers) + list(messages)
    alpha_sum = math.fsum(h.alpha for h in holders)
    weighted = np.sum(np.stack([h.alpha * h.x for h in holders]), axis=0)
    return alpha_sum, weighted


def consensus_distance(workers):
    """``max_i ||x_i - mean(x)||``."""
    X = np.stack([w.x for w in workers])
    return float(np.max(np.linalg.norm(X - X.mean(axis=0), axis=1)))
