"""Farthest point sampling, ball query and KNN label propagation.

All routines are exact: distances are squared Euclidean computed as
``dx*dx + dy*dy + dz*dz`` and every tie goes to the lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np


@dataclass(frozen=True, eq=False)
class PointSet:
    positions: np.ndarray
    colors: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if len(pos) < 1:
            raise ValueError("a point set needs at least one point")
        if not np.all(np.isfinite(pos)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "positions", pos)
        if self.colors is not None:
            object.__setattr__(self, "colors", np.asarray(self.colors, dtype=np.float64).reshape(len(pos), 3))
        if self.labels is not None:
            object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64).reshape(len(pos)))

    def __len__(self):
        return len(self.positions)

    def take(self, idx):
        return PointSet(self.positions[idx],
                        None if self.colors is None else self.colors[idx],
                        None if self.labels is None else self.labels[idx])


def _positions(points):
    return points.positions if isinstance(points, PointSet) else np.asarray(points, dtype=np.float64)


def sq_dist(a, b):
    """(len(a), len(b)) squared distances."""
    d = a[:, None, :] - b[None, :, :]
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


@numba.njit(cache=True)
def _d2(p, i, q, j):
    dx = p[i, 0] - q[j, 0]
    dy = p[i, 1] - q[j, 1]
    dz = p[i, 2] - q[j, 2]
    return dx * dx + dy * dy + dz * dz


@numba.njit(cache=True)
def _fps_kernel(pos, m, start):
    n = pos.shape[0]
    out = np.empty(m, dtype=np.int64)
    best = np.full(n, np.inf)
    cur = start
    for i in range(m):
        out[i] = cur
        nxt = 0
        top = -np.inf
        for j in range(n):
            d = _d2(pos, j, pos, cur)
            if d < best[j]:
                best[j] = d
            if j == cur:
                best[j] = -1.0
            if best[j] > top:
                top = best[j]
                nxt = j
        cur = nxt
    return out


@numba.njit(cache=True)
def _ball_kernel(pos, ctr, r2, max_k):
    m = ctr.shape[0]
    n = pos.shape[0]
    out = np.empty((m, max_k), dtype=np.int64)
    counts = np.zeros(m, dtype=np.int64)
    for c in range(m):
        cnt = 0
        for j in range(n):
            if _d2(pos, j, ctr, c) <= r2:
                out[c, cnt] = j
                cnt += 1
                if cnt == max_k:
                    break
        if cnt == 0:
            best = np.inf
            arg = 0
            for j in range(n):
                d = _d2(pos, j, ctr, c)
                if d < best:
                    best = d
                    arg = j
            out[c, 0] = arg
            cnt = 1
        for s in range(cnt, max_k):
            out[c, s] = out[c, 0]
        counts[c] = cnt
    return out, counts


@numba.njit(cache=True)
def _knn_kernel(q, r, k):
    nq = q.shape[0]
    nr = r.shape[0]
    idx = np.empty((nq, k), dtype=np.int64)
    dist = np.empty((nq, k))
    for i in range(nq):
        for s in range(k):
            dist[i, s] = np.inf
            idx[i, s] = -1
        for j in range(nr):
            d = _d2(q, i, r, j)
            # strict comparison keeps the lower index first among equal distances
            if d < dist[i, k - 1]:
                s = k - 1
                while s > 0 and dist[i, s - 1] > d:
                    dist[i, s] = dist[i, s - 1]
                    idx[i, s] = idx[i, s - 1]
                    s -= 1
                dist[i, s] = d
                idx[i, s] = j
    return idx, dist


def fps(points, m, start=0):
    """Greedy max-min subsampling; returns ``m`` indices in selection order."""
    pos = np.ascontiguousarray(_positions(points), dtype=np.float64)
    n = len(pos)
    if not 1 <= m <= n:
        raise ValueError(f"cannot sample {m} of {n} points")
    if not 0 <= start < n:
        raise ValueError(f"start index {start} out of range")
    return _fps_kernel(pos, int(m), int(start))


def ball_query(points, centers, radius, max_k):
    """Per center, up to ``max_k`` indices within ``radius`` in index order.

    A center with nothing in range gets its nearest point, so no group is
    empty. Returns a list of int arrays.
    """
    padded, counts = ball_query_padded(points, centers, radius, max_k)
    return [padded[i, :counts[i]] for i in range(len(padded))]


def ball_query_padded(points, centers, radius, max_k):
    """Fixed-width variant: (M, max_k) indices, short rows padded with their
    first entry, plus the true count per row."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if max_k < 1:
        raise ValueError("max_k must be >= 1")
    pos = np.ascontiguousarray(_positions(points), dtype=np.float64)
    ctr = np.ascontiguousarray(_positions(centers), dtype=np.float64)
    return _ball_kernel(pos, ctr, float(radius) ** 2, int(max_k))


def knn(query, ref, k):
    """Indices (Q, k) of the k nearest ``ref`` points, ordered by (distance,
    index), and their squared distances."""
    q = np.ascontiguousarray(_positions(query), dtype=np.float64)
    r = np.ascontiguousarray(_positions(ref), dtype=np.float64)
    if not 1 <= k <= len(r):
        raise ValueError(f"k={k} outside [1, {len(r)}]")
    return _knn_kernel(q, r, int(k))


def knn_propagate(sampled: PointSet, full, k=3):
    """Majority label among the k nearest sampled points.

    Label ties go to whichever tied label occurs first in the (distance,
    index)-ordered neighbour list, i.e. the nearest point's label when it is
    among the tied ones.
    """
    if sampled.labels is None:
        raise ValueError("sampled point set carries no labels")
    idx, _ = knn(full, sampled, k)
    lab = sampled.labels[idx]
    n_lab = int(sampled.labels.max()) + 1
    counts = np.zeros((len(lab), n_lab), dtype=np.int64)
    np.add.at(counts, (np.repeat(np.arange(len(lab)), k), lab.ravel()), 1)
    top = counts.max(1)
    tied = counts[np.arange(len(lab))[:, None], lab] == top[:, None]
    first = np.argmax(tied, axis=1)
    return lab[np.arange(len(lab)), first]
