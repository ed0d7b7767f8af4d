"""Sensed data points and the total order used to break rating ties.

A point is identified network-wide by ``(origin, epoch)``: two copies with
the same identity always carry the same feature vector, and may differ only
in their ``hop`` field (hop-bounded mode rewrites hops in transit).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence, Tuple

import numpy as np

PointKey = Tuple[int, int]


class DimensionMismatchError(ValueError):
    """Feature vectors of different lengths were mixed in one computation."""


@dataclass(frozen=True)
class DataPoint:
    """One sensed sample.

    ``rest`` holds the features the rating functions see (e.g. temperature
    plus x/y coordinates). ``hop`` is 0 at birth and only ever increases on
    transmission; the global algorithm ignores it.
    """

    origin: int
    epoch: int
    timestamp: float
    rest: Tuple[float, ...]
    hop: int = 0

    def __post_init__(self):
        if not isinstance(self.rest, tuple):
            object.__setattr__(self, "rest", tuple(float(v) for v in self.rest))
        if self.hop < 0:
            raise ValueError(f"negative hop on point {self.key}")
        for v in self.rest:
            if not np.isfinite(v):
                raise ValueError(f"non-finite feature value in point {self.key}")

    @property
    def key(self) -> PointKey:
        return (self.origin, self.epoch)

    def with_hop(self, hop: int) -> "DataPoint":
        return replace(self, hop=hop)

    def tie_key(self) -> tuple:
        """Strict total order: lexicographic over (features, origin, epoch).

        Any fixed total order works for tie-breaking; this one is
        reproducible and effectively makes the rating one-to-one.
        """
        return (self.rest, self.origin, self.epoch)


def point(origin: int, epoch: int, *rest: float, timestamp: float = 0.0, hop: int = 0) -> DataPoint:
    """Shorthand constructor used heavily in tests and inline scenarios."""
    return DataPoint(origin=origin, epoch=epoch, timestamp=timestamp, rest=tuple(float(r) for r in rest), hop=hop)


def rest_matrix(points: Sequence[DataPoint]) -> np.ndarray:
    """Stack feature vectors into an (m, dim) float array.

    Raises DimensionMismatchError if the points disagree on dimensionality.
    """
    if not points:
        return np.empty((0, 0))
    dim = len(points[0].rest)
    for p in points:
        if len(p.rest) != dim:
            raise DimensionMismatchError(
                f"point {p.key} has {len(p.rest)} features, expected {dim}"
            )
    return np.array([p.rest for p in points], dtype=float)


def dedup_by_key(points: Iterable[DataPoint]) -> list[DataPoint]:
    """Keep the first copy seen per (origin, epoch), preserving order."""
    seen = set()
    out = []
    for p in points:
        if p.key not in seen:
            seen.add(p.key)
            out.append(p)
    return out
