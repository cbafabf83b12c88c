"""Synthetic 2-D binary classification sets written as CSV."""

import csv
from pathlib import Path

import numpy as np

from .errors import DomainError
from .numeric_core import RandomSource

KINDS = ("two-cluster", "two-moons")


def _class_sizes(n):
    return n - n // 2, n // 2


def two_cluster(n, r):
    """Two blobs that a line through the origin always separates.

    Points are drawn uniformly from disks of radius 1.5 centred at (-2, -2)
    and (2, 2); both disks stay at least 1.3 away from ``x + y = 0``.
    """
    n0, n1 = _class_sizes(n)
    out = []
    for label, centre, k in ((0, -2.0, n0), (1, 2.0, n1)):
        theta = r.uniform(0.0, 2 * np.pi, k)
        rad = 1.5 * np.sqrt(r.uniform(0.0, 1.0, k))
        pts = np.column_stack([centre + rad * np.cos(theta), centre + rad * np.sin(theta)])
        out.append((pts, np.full(k, label)))
    return _stack(out)


def two_moons(n, r, noise=0.1):
    """Interleaving half circles with Gaussian jitter."""
    n0, n1 = _class_sizes(n)
    t0 = r.uniform(0.0, np.pi, n0)
    t1 = r.uniform(0.0, np.pi, n1)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    upper += noise * r.normal((n0, 2))
    lower += noise * r.normal((n1, 2))
    return _stack([(upper, np.zeros(n0)), (lower, np.ones(n1))])


def _stack(parts):
    X = np.concatenate([p[0] for p in parts])
    y = np.concatenate([p[1] for p in parts]).astype(int)
    return X, y


def generate(kind, n, seed):
    if n < 2:
        raise DomainError(f"need at least 2 examples, got {n}")
    r = RandomSource(seed, 0)
    if kind == "two-cluster":
        return two_cluster(n, r)
    if kind == "two-moons":
        return two_moons(n, r)
    raise DomainError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")


def gen_data(kind, n, seed, out):
    """Write a generated dataset to ``out`` with header ``x0,x1,label``."""
    X, y = generate(kind, n, seed)
    out = Path(out)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["x0", "x1", "label"])
        for row, label in zip(X, y):
            wr.writerow([repr(float(row[0])), repr(float(row[1])), int(label)])
    return out
