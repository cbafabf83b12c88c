"""Experiment runner: deterministic simulation and real threads.

Simulation mode runs every worker on the calling thread, one iteration per
worker per round, in a seeded-random (or round-robin) order, with messages
landing in inboxes immediately. Its ``wall_s`` column is a virtual clock:
each gradient step costs one unit and each message sent costs
``ScheduleMode.message_cost`` units (an EASGD exchange waits for the reply,
so it costs two). The column reports the slowest worker's clock times
``ScheduleMode.step_seconds``. Everything it writes is a pure function of
the configuration.

Threaded mode starts one OS thread per worker; the calling thread collects
metrics and keeps a watchdog. ``wall_s`` is real elapsed time there, and
``alpha_mass`` is only filled in on the final row, after all threads have
stopped and inboxes have been drained.
"""

import csv
import math
import queue
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .baselines import CenterState, EasgdConfig, easgd_worker_iteration, naive_worker_iteration
from .errors import ConfigError, DeadlockError, DivergenceError, DomainError
from .numeric_core import RandomSource, as_vector, bernoulli, uniform_peer
from .protocol import (
    SCHEDULE_STREAM,
    GossipConfig,
    consensus_distance,
    init_workers,
    mixing_process,
    mixing_push,
    test_model,
    total_mass,
    worker_iteration,
)

ALGOS = ("gosgd", "easgd", "naive")
SMOOTHING_WINDOW = 50
CSV_HEADER = (
    "iter", "images_per_worker", "wall_s", "loss_raw", "loss_smooth50",
    "consensus_dist", "alpha_mass", "msgs_sent", "msgs_dropped",
)


@dataclass
class ScheduleMode:
    mode: str = "simulation"
    order: str = "random"
    message_cost: float = 0.0
    step_seconds: float = 1.0
    watchdog_s: float = 600.0

    def __post_init__(self):
        if self.mode not in ("simulation", "threaded"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.order not in ("random", "round-robin"):
            raise ConfigError(f"unknown interleaving policy {self.order!r}")
        if self.message_cost < 0:
            raise ConfigError("message cost must be >= 0")


@dataclass
class RunRecord:
    iter: int
    images_per_worker: int
    wall_s: float
    loss_raw: float
    loss_smooth50: float
    consensus_dist: float
    alpha_mass: Optional[float]
    msgs_sent: int
    msgs_dropped: int

    def row(self):
        return [_fmt(getattr(self, f.name)) for f in fields(self)]


def _fmt(v):
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


@dataclass
class RunResult:
    algo: str
    records: list
    test_model: np.ndarray
    workers: list
    center: Optional[CenterState] = None
    messages_sent: int = 0
    messages_dropped: int = 0
    alpha_mass: float = 1.0
    elapsed_s: float = 0.0

    @property
    def final(self):
        return self.records[-1]


class MetricsWriter:
    """CSV sink that flushes after every row."""

    def __init__(self, path):
        self.path = Path(path) if path is not None else None
        self._fh = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", newline="", encoding="utf-8")
            self._csv = csv.writer(self._fh, lineterminator="\n")
            self._csv.writerow(CSV_HEADER)
            self._fh.flush()
        self.records = []

    def write(self, rec):
        self.records.append(rec)
        if self._fh is not None:
            self._csv.writerow(rec.row())
            self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path):
    """Load a metrics CSV back into RunRecords."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(RunRecord(
                iter=int(row["iter"]),
                images_per_worker=int(row["images_per_worker"]),
                wall_s=float(row["wall_s"]),
                loss_raw=float(row["loss_raw"]),
                loss_smooth50=float(row["loss_smooth50"]),
                consensus_dist=float(row["consensus_dist"]),
                alpha_mass=float(row["alpha_mass"]) if row["alpha_mass"] else None,
                msgs_sent=int(row["msgs_sent"]),
                msgs_dropped=int(row["msgs_dropped"]),
            ))
    return out


def _alpha_mass(workers):
    return math.fsum([w.alpha for w in workers] + [m.alpha for w in workers for m in w.inbox.snapshot()])


def _stepper(algo, cfg, obj, workers):
    if algo == "gosgd":
        inboxes = [w.inbox for w in workers]
        return (lambda w: worker_iteration(w, obj, cfg, inboxes)), None
    if algo == "easgd":
        if not isinstance(cfg, EasgdConfig):
            raise ConfigError("easgd needs an EasgdConfig")
        center = CenterState(workers[0].x)
        return (lambda w: easgd_worker_iteration(w, center, cfg, obj)), center
    if algo == "naive":
        return (lambda w: naive_worker_iteration(w, obj, cfg)), None
    raise ConfigError(f"unknown algorithm {algo!r}; expected one of {ALGOS}")


def _settle(workers, drain):
    """Fold every in-flight message, or drop it if ``drain`` is off."""
    if drain:
        for w in workers:
            mixing_process(w)
    for w in workers:
        w.inbox.close()
    return sum(w.inbox.dropped for w in workers)


def run_experiment(algo, cfg, obj, mode=None, *, out=None, record_every=10, drain=True, x0=None):
    """Run ``cfg.M`` workers for ``cfg.iterations`` iterations each.

    Writes one metrics row every ``record_every`` iterations plus a final
    row after in-flight messages are settled. Returns a :class:`RunResult`
    whose ``test_model`` is the plain average of the workers' parameters.
    On divergence the partial rows are flushed and a
    :class:`DivergenceError` carrying them is raised.
    """
    mode = mode or ScheduleMode()
    if record_every < 1:
        raise ConfigError("record interval must be >= 1")
    workers = init_workers(cfg, obj, x0)
    step, center = _stepper(algo, cfg, obj, workers)
    runner = _run_simulation if mode.mode == "simulation" else _run_threaded
    with MetricsWriter(out) as writer:
        try:
            return runner(algo, cfg, mode, workers, step, center, writer, record_every, drain)
        except DivergenceError as exc:
            exc.records = list(writer.records)
            raise


def _run_simulation(algo, cfg, mode, workers, step, center, writer, record_every, drain):
    M, T = cfg.M, cfg.iterations
    sched = RandomSource(cfg.seed, SCHEDULE_STREAM)
    window = deque(maxlen=SMOOTHING_WINDOW)
    clock = [0.0] * M
    sent = 0
    round_losses = []
    start = time.perf_counter()

    def record(it, dist, mass, dropped):
        writer.write(RunRecord(
            iter=it,
            images_per_worker=it * cfg.batch_size,
            wall_s=max(clock) * mode.step_seconds,
            loss_raw=float(np.mean(round_losses)) if round_losses else math.nan,
            loss_smooth50=float(np.mean(window)) if window else math.nan,
            consensus_dist=dist,
            alpha_mass=mass,
            msgs_sent=sent,
            msgs_dropped=dropped,
        ))

    for it in range(T):
        order = sched.generator.permutation(M) if mode.order == "random" else range(M)
        round_losses = []
        for i in order:
            w = workers[i]
            res = step(w)
            window.append(res.loss)
            round_losses.append(res.loss)
            cost = 1.0
            if res.pushed_to is not None:
                sent += 1
                cost += mode.message_cost * (2 if algo == "easgd" else 1)
            clock[i] += cost
        done = it + 1
        if done % record_every == 0 and done < T:
            record(done, consensus_distance(workers), _alpha_mass(workers), 0)

    dropped = _settle(workers, drain)
    record(T, consensus_distance(workers), _alpha_mass(workers), dropped)
    return RunResult(
        algo, writer.records, test_model(workers), workers, center,
        sent, dropped, _alpha_mass(workers), time.perf_counter() - start,
    )


def _run_threaded(algo, cfg, mode, workers, step, center, writer, record_every, drain):
    M, T = cfg.M, cfg.iterations
    reports = queue.SimpleQueue()
    stop = threading.Event()
    barrier = threading.Barrier(M + 1)
    failures = []

    def body(w):
        try:
            barrier.wait()
            for _ in range(T):
                if stop.is_set():
                    return
                res = step(w)
                reports.put((res.loss, res.pushed_to is not None))
        except BaseException as exc:  # surfaced on the collector thread
            failures.append(exc)
            stop.set()
        finally:
            reports.put(None)

    threads = [threading.Thread(target=body, args=(w,), name=f"worker-{w.id}", daemon=True)
               for w in workers]
    window = deque(maxlen=SMOOTHING_WINDOW)
    since_last = []
    sent = 0
    completed = 0
    finished = 0
    next_row = record_every
    start = time.perf_counter()

    def record(it, mass, dropped):
        writer.write(RunRecord(
            iter=it,
            images_per_worker=it * cfg.batch_size,
            wall_s=time.perf_counter() - start,
            loss_raw=float(np.mean(since_last)) if since_last else math.nan,
            loss_smooth50=float(np.mean(window)) if window else math.nan,
            consensus_dist=consensus_distance(workers),
            alpha_mass=mass,
            msgs_sent=sent,
            msgs_dropped=dropped,
        ))

    for t in threads:
        t.start()
    barrier.wait()
    start = time.perf_counter()
    while finished < M:
        remaining = mode.watchdog_s - (time.perf_counter() - start)
        if remaining <= 0:
            stop.set()
            raise DeadlockError(f"watchdog expired after {mode.watchdog_s}s")
        try:
            item = reports.get(timeout=min(remaining, 1.0))
        except queue.Empty:
            continue
        if item is None:
            finished += 1
            continue
        loss, pushed = item
        window.append(loss)
        since_last.append(loss)
        sent += pushed
        completed += 1
        # a row once every worker has, on average, done `next_row` iterations
        if completed >= M * next_row and next_row < T:
            record(next_row, None, 0)
            since_last = []
            next_row += record_every
    for t in threads:
        t.join()
    if failures:
        exc = failures[0]
        if isinstance(exc, DivergenceError):
            raise exc
        raise RuntimeError("worker thread failed") from exc

    dropped = _settle(workers, drain)
    mass = _alpha_mass(workers)
    record(T, mass, dropped)
    return RunResult(
        algo, writer.records, test_model(workers), workers, center,
        sent, dropped, mass, time.perf_counter() - start,
    )


# -- consensus decay ------------------------------------------------------------

@dataclass
class DecayResult:
    rate_per_update: float
    rate_per_iteration: float
    r2: float
    samples: int
    short: bool
    distances: list = field(default_factory=list)
    updates: list = field(default_factory=list)
    rounds: list = field(default_factory=list)


def _fit(xs, ys):
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) < 2 or np.ptp(xs) == 0:
        return 0.0, math.nan
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = ys - (slope * xs + intercept)
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    if ss_tot == 0.0:
        return 0.0, math.nan
    return float(slope), 1.0 - float(np.sum(resid**2)) / ss_tot


def consensus_decay_experiment(M=8, p=1.0, dim=100, initial_spread=1.0, seed=0,
                               max_rounds=2000, floor=1e-12, min_samples=10,
                               order="random", x0=None):
    """Mixing-only run from distinct starting points.

    Workers start at ``x0`` (shape ``(M, dim)``) or at random points scaled
    so that ``max_i ||x_i - mean||`` equals ``initial_spread``. Each round
    every worker folds its inbox, then pushes with probability ``p``.
    Fits ``log(max_i ||x_i - mean||)`` against the cumulative number of
    folded messages (and separately against rounds) over the samples still
    above ``floor``. ``short`` is set when fewer than ``min_samples`` made it.
    """
    if initial_spread <= 0:
        raise DomainError("initial spread must be positive")
    cfg = GossipConfig(M=M, p=p, seed=seed, iterations=max_rounds)
    if x0 is None:
        pts = RandomSource(seed, SCHEDULE_STREAM).child(1).normal((M, dim))
        pts = pts - pts.mean(axis=0)
        pts *= initial_spread / np.max(np.linalg.norm(pts, axis=1))
    else:
        pts = np.asarray(x0, dtype=float)
    workers = init_workers(cfg, None, x0=as_vector(np.zeros(pts.shape[1])))
    for w, row in zip(workers, pts):
        w.x = as_vector(row)
    sched = RandomSource(seed, SCHEDULE_STREAM)

    dists = [consensus_distance(workers)]
    updates = [0]
    rounds = [0]
    folded = 0
    for r in range(1, max_rounds + 1):
        if dists[-1] <= floor:
            break
        order_ = sched.generator.permutation(M) if order == "random" else range(M)
        for i in order_:
            w = workers[i]
            folded += mixing_process(w)
            if M > 1 and bernoulli(w.gossip_rng, p):
                mixing_push(w, workers[uniform_peer(w.gossip_rng, w.id, M)].inbox)
        dists.append(consensus_distance(workers))
        updates.append(folded)
        rounds.append(r)

    keep = [k for k, d in enumerate(dists) if d > floor]
    logs = [math.log(dists[k]) for k in keep]
    per_update, r2 = _fit([updates[k] for k in keep], logs)
    per_iter, _ = _fit([rounds[k] for k in keep], logs)
    if p == 0:
        per_update = 0.0
    return DecayResult(per_update, per_iter, r2, len(keep), len(keep) < min_samples,
                       dists, updates, rounds)


# -- averaged-update decomposition ------------------------------------------------

class _GradientTap:
    """Wraps an objective and remembers the last gradient it handed out."""

    def __init__(self, obj):
        self._obj = obj
        self.last = None

    def __getattr__(self, name):
        return getattr(self._obj, name)

    def loss_and_gradient(self, x, batch):
        loss, grad = self._obj.loss_and_gradient(x, batch)
        self.last = grad
        return loss, grad


def lambda_trace(cfg, obj, rounds):
    """Empirical weights behind the averaged-model update.

    For each round (every worker does one GoSGD iteration) solve, in the
    least-squares sense, ``mean_after - mean_before = -eta * sum_i lam_i v_i``
    for ``lam``, where ``v_i`` is the gradient worker ``i`` used. Returns an
    array of shape ``(rounds, M)``. Diagnostic only: mixing also moves the
    plain mean, so ``lam`` absorbs that and no constraint on it is enforced.
    """
    tap = _GradientTap(obj)
    workers = init_workers(cfg, obj)
    inboxes = [w.inbox for w in workers]
    sched = RandomSource(cfg.seed, SCHEDULE_STREAM)
    out = []
    for _ in range(rounds):
        before = test_model(workers)
        grads = [None] * cfg.M
        etas = [0.0] * cfg.M
        for i in sched.generator.permutation(cfg.M):
            etas[i] = cfg.lr(workers[i].t)
            worker_iteration(workers[i], tap, cfg, inboxes)
            grads[i] = tap.last
        G = np.stack(grads, axis=1) * np.array(etas)
        lam, *_ = np.linalg.lstsq(-G, test_model(workers) - before, rcond=None)
        out.append(lam)
    return np.array(out)


# -- figure 1 ----------------------------------------------------------------------

def figure1_protocol(obj, M=8, p_list=(1.0, 0.02), algos=ALGOS, iterations=20000,
                     batch_size=128, eta=0.01, seed=0, out_dir=None, mode=None,
                     record_every=10, elastic_alpha=0.887, momentum=0.99):
    """Run every algorithm on one objective with identical seeds.

    EASGD uses ``tau = round(1 / p)`` for each ``p``; the naive scheme runs
    once. Returns ``{label: RunResult}`` with labels like ``gosgd_p0.02``.
    With ``out_dir`` each run gets its own metrics CSV, plus two joined
    tables: ``figure1_images.csv`` (loss against images per worker at
    ``max(p_list)``) and ``figure1_time.csv`` (loss against wall time at
    ``min(p_list)``).
    """
    out_dir = Path(out_dir) if out_dir is not None else None
    results = {}
    for algo in algos:
        ps = [None] if algo == "naive" else list(p_list)
        for p in ps:
            label = algo if p is None else f"{algo}_p{p:g}"
            common = dict(M=M, eta=eta, batch_size=batch_size, iterations=iterations, seed=seed)
            if algo == "easgd":
                cfg = EasgdConfig(p=p, elastic_alpha=elastic_alpha, momentum=momentum, **common)
            else:
                cfg = GossipConfig(p=0.0 if p is None else p, **common)
            out = out_dir / f"{label}.csv" if out_dir is not None else None
            results[label] = run_experiment(algo, cfg, obj, mode, out=out, record_every=record_every)
    if out_dir is not None:
        _write_joined(out_dir / "figure1_images.csv", results, max(p_list), "images_per_worker")
        _write_joined(out_dir / "figure1_time.csv", results, min(p_list), "wall_s")
    return results


def _write_joined(path, results, p, axis):
    labels = [k for k in results if k == "naive" or k.endswith(f"_p{p:g}")]
    n = min(len(results[k].records) for k in labels)
    header = ["iter"]
    for k in labels:
        if axis == "wall_s":
            header.append(f"{k}_wall_s")
        header.append(f"{k}_loss_smooth50")
    if axis == "images_per_worker":
        header.insert(1, "images_per_worker")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in range(n):
            first = results[labels[0]].records[r]
            row = [first.iter]
            if axis == "images_per_worker":
                row.append(first.images_per_worker)
            for k in labels:
                rec = results[k].records[r]
                if axis == "wall_s":
                    row.append(_fmt(rec.wall_s))
                row.append(_fmt(rec.loss_smooth50))
            wr.writerow(row)


def config_manifest(**kw):
    """JSON-ready dict of a resolved configuration."""
    out = {}
    for k, v in kw.items():
        if hasattr(v, "__dataclass_fields__"):
            v = {f: val for f, val in asdict(v).items() if not callable(val)}
        out[k] = v
    return out
