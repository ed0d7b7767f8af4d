"""Rating functions, tie-broken ordering, top-n selection and support sets.

The rating of a point against a dataset is a non-negative outlier score:
the distance to its nearest neighbor (``nn``) or the average distance to
its k nearest neighbors (``knn``). Scores are compared descending, with
ties resolved by the fixed total order ``DataPoint.tie_key`` (ascending),
so any two distinct points are strictly ordered.

The *support* of x over P is the smallest subset of P that pins x's score:
the nearest neighbor for ``nn``, the k nearest for ``knn`` (distance ties
resolved by the same total order). Everything the exchange protocol sends
is built from top-n selections and supports.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .points import DataPoint, DimensionMismatchError, rest_matrix

RATING_KINDS = ("nn", "knn")

# Pairwise-distance computations are chunked to bound peak memory.
_CHUNK_ROWS = 512


class RatingConfigError(ValueError):
    """Invalid rating configuration (unknown kind, bad k/n, ...)."""


@dataclass(frozen=True)
class RatingSpec:
    """Which rating to use plus its parameters.

    ``kind`` is ``"nn"`` or ``"knn"``; ``k`` is ignored for ``nn``.
    ``n`` is the number of outliers to report. ``weights`` optionally scales
    feature dimensions inside the Euclidean distance (default: unweighted).
    """

    kind: str = "nn"
    k: int = 1
    n: int = 1
    weights: Optional[tuple] = None

    def __post_init__(self):
        kind = self.kind.lower()
        if kind in ("lof", "local-outlier-factor"):
            # Density-ratio ratings break the monotonicity the protocol
            # depends on; refuse them outright.
            raise RatingConfigError("LOF-style ratings are not admissible")
        if kind not in RATING_KINDS:
            raise RatingConfigError(f"unknown rating kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.kind == "knn" and self.k < 1:
            raise RatingConfigError(f"knn rating requires k >= 1, got {self.k}")
        if self.n < 1:
            raise RatingConfigError(f"n must be >= 1, got {self.n}")
        if self.weights is not None:
            w = tuple(float(v) for v in self.weights)
            if any(v <= 0 for v in w):
                raise RatingConfigError("feature weights must be positive")
            object.__setattr__(self, "weights", w)

    @property
    def neighbors_used(self) -> int:
        return 1 if self.kind == "nn" else self.k


def _scaled(matrix: np.ndarray, spec: RatingSpec) -> np.ndarray:
    if spec.weights is None or matrix.size == 0:
        return matrix
    if len(spec.weights) != matrix.shape[1]:
        raise DimensionMismatchError(
            f"{len(spec.weights)} weights for {matrix.shape[1]}-dim features"
        )
    return matrix * np.sqrt(np.asarray(spec.weights))


def distances_to(x: DataPoint, pool: Sequence[DataPoint], spec: RatingSpec) -> np.ndarray:
    """Euclidean distances from x to each pool point (identity NOT excluded)."""
    mat = rest_matrix(list(pool))
    if mat.size == 0:
        return np.empty(0)
    row = rest_matrix([x])
    if row.shape[1] != mat.shape[1]:
        raise DimensionMismatchError(
            f"point {x.key} has {row.shape[1]} features, pool has {mat.shape[1]}"
        )
    diff = _scaled(mat, spec) - _scaled(row, spec)
    return np.sqrt((diff * diff).sum(axis=1))


def _score_from_distances(dists: np.ndarray, spec: RatingSpec) -> float:
    # The k smallest are averaged in ascending order so that every code
    # path (including the incremental engine) sums identically.
    if dists.size == 0:
        return float("inf")
    if spec.kind == "nn":
        return float(dists.min())
    if dists.size <= spec.k:
        return float(np.sort(dists).mean())
    smallest = np.sort(np.partition(dists, spec.k - 1)[: spec.k])
    return float(smallest.mean())


def rank(x: DataPoint, pool: Iterable[DataPoint], spec: RatingSpec) -> float:
    """Outlier score of x against ``pool``, excluding x itself.

    A point with no neighbors scores +inf: lone points are maximal
    outliers. With fewer than k neighbors the knn average runs over what
    exists, which keeps the score finite and total.
    """
    others = [p for p in pool if p.key != x.key]
    return _score_from_distances(distances_to(x, others, spec), spec)


def rank_all(points: Sequence[DataPoint], spec: RatingSpec) -> np.ndarray:
    """Scores of every point against the set itself (vectorized)."""
    m = len(points)
    if m == 0:
        return np.empty(0)
    mat = _scaled(rest_matrix(list(points)), spec)
    kk = spec.neighbors_used
    out = np.empty(m)
    for lo in range(0, m, _CHUNK_ROWS):
        hi = min(lo + _CHUNK_ROWS, m)
        diff = mat[lo:hi, None, :] - mat[None, :, :]
        d = np.sqrt((diff * diff).sum(axis=2))
        d[np.arange(lo, hi) - lo, np.arange(lo, hi)] = np.inf
        if m - 1 == 0:
            out[lo:hi] = np.inf
        elif spec.kind == "nn":
            out[lo:hi] = d.min(axis=1)
        else:
            take = min(kk, m - 1)
            smallest = np.sort(np.partition(d, take - 1, axis=1)[:, :take], axis=1)
            out[lo:hi] = smallest.mean(axis=1)
    return out


def _ordering(points: Sequence[DataPoint], ranks: np.ndarray) -> np.ndarray:
    """Indices sorted most-outlier-first: rank desc, then tie order asc."""
    m = len(points)
    if m == 0:
        return np.empty(0, dtype=int)
    mat = rest_matrix(list(points))
    origin = np.array([p.origin for p in points])
    epoch = np.array([p.epoch for p in points])
    keys = [epoch, origin]
    keys.extend(mat[:, d] for d in reversed(range(mat.shape[1])))
    keys.append(-ranks)
    return np.lexsort(tuple(keys))


def select_top(points: Sequence[DataPoint], ranks: np.ndarray, n: int) -> list[DataPoint]:
    """The n best of ``points`` given their precomputed ranks.

    Equivalent to taking the first n of the full ordering, but only the
    contenders around the cut get sorted.
    """
    m = len(points)
    if m <= n:
        order = sorted(range(m), key=lambda i: (-ranks[i], points[i].tie_key()))
        return [points[i] for i in order]
    boundary = np.partition(ranks, m - n)[m - n]
    contenders = np.nonzero(ranks >= boundary)[0]
    contenders = sorted(contenders, key=lambda i: (-ranks[i], points[i].tie_key()))
    return [points[i] for i in contenders[:n]]


def top_n(pool: Sequence[DataPoint], spec: RatingSpec, n: Optional[int] = None) -> list[DataPoint]:
    """The n most-outlying points of ``pool``, scored against ``pool``.

    Returns the whole pool (ordered) when it has fewer than n points.
    Deterministic: identical inputs give identical ordered output.
    """
    pts = list(pool)
    if n is None:
        n = spec.n
    return select_top(pts, rank_all(pts, spec), n)


def compare(x: DataPoint, y: DataPoint, pool: Sequence[DataPoint], spec: RatingSpec) -> int:
    """-1 if x is the stronger outlier w.r.t. ``pool``, +1 if y is.

    Scores compare descending; equal scores fall back to the total order,
    so distinct identities never compare equal.
    """
    if x.key == y.key:
        raise ValueError("compare() requires distinct point identities")
    kx = (-rank(x, pool, spec), x.tie_key())
    ky = (-rank(y, pool, spec), y.tie_key())
    return -1 if kx < ky else 1


class PoolView:
    """Precomputed arrays over one pool for repeated support queries.

    Support computations dominate the protocol's event handling; rebuilding
    the pool's feature matrix for every query is what made it quadratic in
    practice. A view is valid as long as the pool is unchanged.
    """

    def __init__(self, pool: Sequence[DataPoint], spec: RatingSpec):
        self.points = list(pool)
        self.spec = spec
        self.mat = _scaled(rest_matrix(self.points), spec)
        self.origin = np.array([p.origin for p in self.points], dtype=np.int64)
        self.epoch = np.array([p.epoch for p in self.points], dtype=np.int64)
        self._memo: dict = {}

    def support_of(self, x: DataPoint) -> list[DataPoint]:
        got = self._memo.get(x.key)
        if got is None:
            got = self._memo[x.key] = self._support_of(x)
        return got

    def _support_of(self, x: DataPoint) -> list[DataPoint]:
        m = len(self.points)
        if m == 0:
            return []
        row = _scaled(rest_matrix([x]), self.spec)
        if self.mat.size and row.shape[1] != self.mat.shape[1]:
            raise DimensionMismatchError(
                f"point {x.key} has {row.shape[1]} features, pool has {self.mat.shape[1]}"
            )
        diff = self.mat - row[0]
        d = np.sqrt((diff * diff).sum(axis=1))
        excluded = (self.origin == x.origin) & (self.epoch == x.epoch)
        d[excluded] = np.inf
        avail = m - int(excluded.sum())
        take = min(self.spec.neighbors_used, avail)
        if take <= 0:
            return []
        # Distance ties at the cut resolve by the total order; only the
        # contenders around the cut need sorting.
        boundary = np.partition(d, take - 1)[take - 1]
        contenders = np.nonzero(d <= boundary)[0]
        contenders = sorted(contenders, key=lambda i: (d[i], self.points[i].tie_key()))
        return [self.points[i] for i in contenders[:take]]

    def support_of_set(self, subset: Iterable[DataPoint]) -> list[DataPoint]:
        by_key = {}
        for x in subset:
            for s in self.support_of(x):
                by_key.setdefault(s.key, s)
        return sorted(by_key.values(), key=DataPoint.tie_key)


def min_support(pool: Sequence[DataPoint], x: DataPoint, spec: RatingSpec) -> list[DataPoint]:
    """The smallest subset of ``pool`` that preserves x's score.

    Nearest neighbor for ``nn``; the k nearest for ``knn``; distance ties
    resolved by the total order so the result is unique. Fewer than k
    candidates means all of them (the score then averages what exists).
    """
    return PoolView(pool, spec).support_of(x)


def support_of_set(pool: Sequence[DataPoint], subset: Iterable[DataPoint], spec: RatingSpec,
                   view: Optional[PoolView] = None) -> list[DataPoint]:
    """Union of per-point supports over ``subset``, deduplicated.

    Output is ordered by the total order for reproducibility. Callers with
    many queries against one unchanged pool pass a prebuilt ``view``.
    """
    if view is None:
        view = PoolView(pool, spec)
    return view.support_of_set(subset)
