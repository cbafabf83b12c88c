"""Comparison schemes run through the same worker loop as GoSGD.

EASGD here is the asynchronous per-worker form with local heavy-ball
momentum: every iteration a worker takes a momentum SGD step, and every
``tau``-th iteration it also performs the symmetric elastic exchange with
the centre variable::

    e = elastic_alpha * (x - center)
    x      <- x - e
    center <- center + e

The naive scheme takes plain SGD steps and never talks to anyone.
"""

import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DivergenceError
from .numeric_core import axpy, as_vector
from .protocol import GossipConfig, StepResult, sgd_step

CENTER_ID = -1


@dataclass
class EasgdConfig(GossipConfig):
    elastic_alpha: float = 0.887
    momentum: float = 0.99
    tau: Optional[int] = None

    def __post_init__(self):
        super().__post_init__()
        if self.tau is None:
            if self.p <= 0:
                raise ConfigError("cannot derive tau from p=0; pass tau explicitly")
            self.tau = max(1, round(1.0 / self.p))
        if self.tau < 1:
            raise ConfigError(f"tau must be >= 1, got {self.tau}")
        # 0 is allowed so the coupling can be switched off entirely
        if not 0.0 <= self.elastic_alpha < 2.0:
            raise ConfigError(f"elastic alpha must lie in [0, 2), got {self.elastic_alpha}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")


class CenterState:
    """The shared centre variable. All exchanges go through one lock."""

    def __init__(self, x0):
        self.x = as_vector(x0)
        self.lock = threading.Lock()
        self.exchanges = 0
        self.displacement = np.zeros_like(self.x)

    def exchange(self, x, elastic_alpha):
        """Apply one elastic exchange against worker parameters ``x``.

        Returns the worker's new parameters.
        """
        with self.lock:
            e = elastic_alpha * (x - self.x)
            self.x = axpy(1.0, e, self.x)
            self.displacement = self.displacement + e
            self.exchanges += 1
        return axpy(-1.0, e, x)


def easgd_worker_iteration(worker, center, cfg, obj):
    batch = obj.sample_batch(worker.rng, cfg.batch_size)
    if worker.velocity is None:
        worker.velocity = np.zeros_like(worker.x)
    try:
        loss, grad = obj.loss_and_gradient(worker.x, batch)
        worker.velocity = axpy(cfg.momentum, worker.velocity, -cfg.lr(worker.t) * grad)
        worker.x = axpy(1.0, worker.velocity, worker.x)
        pushed_to = None
        if (worker.t + 1) % cfg.tau == 0:
            worker.x = center.exchange(worker.x, cfg.elastic_alpha)
            worker.sent += 1
            pushed_to = CENTER_ID
    except DivergenceError as exc:
        raise DivergenceError(
            f"worker {worker.id} diverged at iteration {worker.t}",
            iteration=worker.t, worker=worker.id,
        ) from exc
    worker.t += 1
    return StepResult(loss, 0, pushed_to)


def naive_worker_iteration(worker, obj, cfg):
    loss = sgd_step(worker, obj, cfg)
    worker.t += 1
    return StepResult(loss)


def plain_sgd(obj, x0, eta, batch_size, iterations, rng):
    """Single-worker reference SGD. Returns ``(x, batch_losses)``."""
    x = as_vector(x0)
    losses = []
    for _ in range(iterations):
        batch = obj.sample_batch(rng, batch_size)
        losses.append(obj.loss(x, batch))
        x = as_vector(x - eta * obj.gradient(x, batch))
    return x, losses


def heavy_ball_spectral_radius(eta, momentum, curvature):
    """Spectral radius of momentum SGD on a 1-D quadratic of given curvature.

    The iteration is stable iff the result is below 1, i.e.
    ``0 < eta * curvature < 2 * (1 + momentum)``.
    """
    T = np.array([[1.0 + momentum - eta * curvature, -momentum], [1.0, 0.0]])
    return float(np.max(np.abs(np.linalg.eigvals(T))))
