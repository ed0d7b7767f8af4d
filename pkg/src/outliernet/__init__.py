"""In-network outlier detection for wireless sensor networks.

Library for kNN-style outlier ranking, the single-hop exchange protocol
that converges every sensor onto the network-wide (or hop-bounded) top-n
outliers, and a deterministic discrete-event simulator with an energy
model and a centralized baseline.
"""

from .points import DataPoint, DimensionMismatchError, point
from .rating import RatingSpec, RatingConfigError, compare, min_support, rank, support_of_set, top_n
from .protocol import (
    Init,
    LocalDataChange,
    NeighborhoodChange,
    NodeState,
    Packet,
    PacketArrival,
    ProtocolError,
    compute_sufficient_set,
    estimate,
    evict_expired,
    handle_event,
    ingest,
)
from .semiglobal import HopConfig, handle_event_semiglobal, hop_ball_oracle, min_hop_dedup

__all__ = [
    "DataPoint",
    "DimensionMismatchError",
    "HopConfig",
    "Init",
    "LocalDataChange",
    "NeighborhoodChange",
    "NodeState",
    "Packet",
    "PacketArrival",
    "ProtocolError",
    "RatingConfigError",
    "RatingSpec",
    "compare",
    "compute_sufficient_set",
    "estimate",
    "evict_expired",
    "handle_event",
    "handle_event_semiglobal",
    "hop_ball_oracle",
    "ingest",
    "min_hop_dedup",
    "min_support",
    "point",
    "rank",
    "support_of_set",
    "top_n",
]

__version__ = "0.1.0"
