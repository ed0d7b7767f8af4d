"""Incremental neighbor-distance maintenance for a mutating point set.

The simulator scores every held point against the node's whole pool on
every event; recomputing all pairwise distances each time is quadratic and
dominates runtime. This engine keeps, per point, the k smallest distances
(and which points realize them) so that inserts cost O(m*k) vector work and
evictions only recompute the rows that actually lost a contributor.

Results are cross-checked against ``rating.rank_all`` in the test suite;
this module must agree with it exactly (same arithmetic, same conventions).
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .points import DataPoint, DimensionMismatchError, PointKey
from .rating import RatingSpec, _scaled

_ORIGIN_SHIFT = 1 << 40
_NO_KEY = -1


def _encode(key: PointKey) -> int:
    origin, epoch = key
    if not (0 <= origin < (1 << 22) and 0 <= epoch < _ORIGIN_SHIFT):
        raise ValueError(f"point key {key} out of encodable range")
    return origin * _ORIGIN_SHIFT + epoch


class IncrementalRanker:
    """Maintains outlier scores for a set of points under insert/remove."""

    def __init__(self, spec: RatingSpec):
        self.spec = spec
        self.k = spec.neighbors_used
        self.version = 0
        self._points: list[DataPoint] = []
        self._row_of: dict[PointKey, int] = {}
        self._mat = np.empty((0, 0))
        self._nbr_d = np.empty((0, self.k))
        self._nbr_key = np.empty((0, self.k), dtype=np.int64)

    def __len__(self) -> int:
        return len(self._points)

    def __contains__(self, key: PointKey) -> bool:
        return key in self._row_of

    def points(self) -> list[DataPoint]:
        return list(self._points)

    def _ensure_dim(self, dim: int):
        if self._mat.shape[0] == 0:
            self._mat = np.empty((0, dim))
        elif self._mat.shape[1] != dim:
            raise DimensionMismatchError(
                f"point has {dim} features, ranker holds {self._mat.shape[1]}"
            )

    def _dists_from(self, row_vec: np.ndarray) -> np.ndarray:
        diff = self._mat - row_vec
        return np.sqrt((diff * diff).sum(axis=1))

    def insert(self, new_points: Sequence[DataPoint]):
        fresh = []
        batch_keys = set()
        for p in new_points:
            if p.key not in self._row_of and p.key not in batch_keys:
                fresh.append(p)
                batch_keys.add(p.key)
        if not fresh:
            return
        self.version += 1
        for p in fresh:
            vec = _scaled(np.asarray([p.rest], dtype=float), self.spec)[0]
            self._ensure_dim(vec.shape[0])
            m = len(self._points)
            if m:
                d = self._dists_from(vec)
                enc = _encode(p.key)
                # Fold the newcomer into every existing row's k-best list.
                improved = np.nonzero(d < self._nbr_d[:, -1])[0]
                if improved.size:
                    cat_d = np.column_stack([self._nbr_d[improved], d[improved]])
                    cat_k = np.column_stack(
                        [self._nbr_key[improved], np.full(improved.size, enc, dtype=np.int64)]
                    )
                    order = np.argsort(cat_d, axis=1, kind="stable")[:, : self.k]
                    rows = np.arange(improved.size)[:, None]
                    self._nbr_d[improved] = cat_d[rows, order]
                    self._nbr_key[improved] = cat_k[rows, order]
                take = min(self.k, m)
                order = np.argsort(d, kind="stable")[:take]
                row_d = np.full(self.k, np.inf)
                row_k = np.full(self.k, _NO_KEY, dtype=np.int64)
                row_d[:take] = d[order]
                for i, idx in enumerate(order):
                    row_k[i] = _encode(self._points[idx].key)
            else:
                row_d = np.full(self.k, np.inf)
                row_k = np.full(self.k, _NO_KEY, dtype=np.int64)
            self._row_of[p.key] = m
            self._points.append(p)
            self._mat = np.vstack([self._mat, vec[None, :]]) if self._mat.size else vec[None, :]
            self._nbr_d = np.vstack([self._nbr_d, row_d[None, :]])
            self._nbr_key = np.vstack([self._nbr_key, row_k[None, :]])

    def remove(self, keys: Iterable[PointKey]):
        gone = [k for k in keys if k in self._row_of]
        if not gone:
            return
        self.version += 1
        gone_enc = np.array([_encode(k) for k in gone], dtype=np.int64)
        keep = np.ones(len(self._points), dtype=bool)
        for k in gone:
            keep[self._row_of[k]] = False
        affected = np.isin(self._nbr_key, gone_enc).any(axis=1) & keep

        self._points = [p for p, k in zip(self._points, keep) if k]
        self._row_of = {p.key: i for i, p in enumerate(self._points)}
        self._mat = self._mat[keep]
        self._nbr_d = self._nbr_d[keep]
        self._nbr_key = self._nbr_key[keep]

        for row in np.nonzero(affected[keep])[0]:
            self._recompute_row(int(row))

    def _recompute_row(self, row: int):
        d = self._dists_from(self._mat[row])
        d[row] = np.inf
        m = len(self._points)
        take = min(self.k, m - 1)
        row_d = np.full(self.k, np.inf)
        row_k = np.full(self.k, _NO_KEY, dtype=np.int64)
        if take > 0:
            order = np.argsort(d, kind="stable")[:take]
            row_d[:take] = d[order]
            for i, idx in enumerate(order):
                row_k[i] = _encode(self._points[idx].key)
        self._nbr_d[row] = row_d
        self._nbr_key[row] = row_k

    def ranks(self) -> np.ndarray:
        """Scores aligned with points(), matching rating.rank_all exactly."""
        m = len(self._points)
        if m == 0:
            return np.empty(0)
        if m == 1:
            return np.array([np.inf])
        avail = min(self.k, m - 1)
        if self.spec.kind == "nn":
            return self._nbr_d[:, 0].copy()
        d = self._nbr_d[:, :avail]
        return d.mean(axis=1)

    def rank_of(self, key: PointKey) -> float:
        row = self._row_of[key]
        m = len(self._points)
        if m <= 1:
            return float("inf")
        avail = min(self.k, m - 1)
        if self.spec.kind == "nn":
            return float(self._nbr_d[row, 0])
        return float(self._nbr_d[row, :avail].mean())
