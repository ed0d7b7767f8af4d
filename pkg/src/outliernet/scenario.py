"""Scenario files: what to simulate, validated before anything runs.

A scenario is a YAML mapping with the topology (inline coordinates or
taken from a trace file), the algorithm and rating parameters, the window
and schedule, the loss probability, the energy constants and the data
source. ``Scenario.validate`` collects every violation instead of stopping
at the first so a config can be repaired in one pass.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import yaml

from .ingest import TraceSchema, impute_missing, load_trace
from .points import DataPoint
from .rating import RatingConfigError, RatingSpec

ALGORITHMS = ("global", "semiglobal", "centralized")

DEFAULT_ENERGY = {
    "tx_w": 0.0159,
    "rx_w": 0.021,
    "idle_w": 3e-6,
    "voltage": 3.0,
    "bitrate": 250000,
    "header_bytes": 16,
}


class ScenarioError(ValueError):
    """Invalid scenario configuration; message lists the failing keys."""


@dataclass
class Scenario:
    name: str = "scenario"
    mode: str = "streaming"  # streaming | static
    algorithm: str = "global"
    rating: str = "nn"
    k: int = 1
    n: int = 1
    w: float = 20.0
    d: Optional[int] = None
    p_drop: float = 0.0
    seed: int = 1
    duration_s: float = 60.0
    sample_period_s: float = 1.0
    sink: Optional[int] = None
    measure_from_s: float = 0.0
    radio_range: float = 6.77
    coords: dict = field(default_factory=dict)  # node id -> (x, y)
    data: dict = field(default_factory=dict)
    energy: dict = field(default_factory=lambda: dict(DEFAULT_ENERGY))
    weights: Optional[tuple] = None
    link_changes: tuple = ()  # ((time, a, b, "up"|"down"), ...)

    # -- construction ---------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Optional[Path] = None) -> "Scenario":
        raw = dict(raw)
        topo = raw.pop("topology", {})
        sc = cls(
            name=raw.pop("name", "scenario"),
            mode=raw.pop("mode", "streaming"),
            algorithm=raw.pop("algorithm", "global"),
            rating=raw.pop("rating", "nn"),
            k=int(raw.pop("k", 1)),
            n=int(raw.pop("n", 1)),
            w=float(raw.pop("w", 20.0)),
            d=raw.pop("d", None),
            p_drop=float(raw.pop("p_drop", 0.0)),
            seed=int(raw.pop("seed", 1)),
            duration_s=float(raw.pop("duration_s", 60.0)),
            sample_period_s=float(raw.pop("sample_period_s", 1.0)),
            sink=raw.pop("sink", None),
            measure_from_s=float(raw.pop("measure_from_s", 0.0)),
            radio_range=float(topo.get("radio_range", 6.77)),
            coords={int(nid): (float(x), float(y)) for nid, x, y in topo.get("coords", [])},
            data=raw.pop("data", {}),
            energy={**DEFAULT_ENERGY, **raw.pop("energy", {})},
            weights=tuple(raw["weights"]) if raw.get("weights") else None,
            link_changes=tuple(
                (float(c["t"]), int(c["a"]), int(c["b"]), str(c["change"]))
                for c in raw.pop("link_changes", [])
            ),
        )
        raw.pop("weights", None)
        if raw:
            raise ScenarioError(f"unknown scenario keys: {sorted(raw)}")
        if sc.d is not None:
            sc.d = int(sc.d)
        if sc.sink is not None:
            sc.sink = int(sc.sink)
        if base_dir and sc.data.get("path"):
            p = Path(sc.data["path"])
            if not p.is_absolute():
                sc.data = {**sc.data, "path": str(base_dir / p)}
        return sc

    @classmethod
    def load(cls, path) -> "Scenario":
        path = Path(path)
        if not path.exists():
            raise ScenarioError(f"config file not found: {path}")
        with path.open() as fh:
            raw = yaml.safe_load(fh)
        if not isinstance(raw, dict):
            raise ScenarioError(f"config root must be a mapping: {path}")
        sc = cls.from_dict(raw, base_dir=path.parent)
        if sc.name == "scenario":
            sc.name = path.stem
        return sc

    def with_overrides(self, **kwargs) -> "Scenario":
        known = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **known)

    # -- validation -----------------------------------------------------

    def rating_spec(self) -> RatingSpec:
        return RatingSpec(kind=self.rating, k=self.k, n=self.n, weights=self.weights)

    def validate(self) -> list[str]:
        """All violations, empty when the scenario is runnable."""
        problems = []
        if self.mode not in ("streaming", "static"):
            problems.append(f"mode: unknown value {self.mode!r}")
        if self.algorithm not in ALGORITHMS:
            problems.append(f"algorithm: unknown value {self.algorithm!r}")
        try:
            self.rating_spec()
        except RatingConfigError as exc:
            problems.append(f"rating: {exc}")
        if self.w <= 0:
            problems.append(f"w: window must be positive, got {self.w}")
        if self.algorithm == "semiglobal" and (self.d is None or self.d < 1):
            problems.append(f"d: semiglobal needs a hop diameter >= 1, got {self.d}")
        if not 0.0 <= self.p_drop <= 1.0:
            problems.append(f"p_drop: must be within [0, 1], got {self.p_drop}")
        if self.mode == "streaming":
            if self.duration_s <= 0:
                problems.append(f"duration_s: must be positive, got {self.duration_s}")
            if self.sample_period_s <= 0:
                problems.append(f"sample_period_s: must be positive, got {self.sample_period_s}")
        if self.measure_from_s < 0 or (
            self.mode == "streaming" and self.measure_from_s >= self.duration_s
        ):
            problems.append(f"measure_from_s: outside the run, got {self.measure_from_s}")
        for key, value in self.energy.items():
            if key not in DEFAULT_ENERGY:
                problems.append(f"energy.{key}: unknown key")
            elif not isinstance(value, (int, float)) or value <= 0:
                problems.append(f"energy.{key}: must be positive, got {value}")

        source = self.data.get("source")
        if source not in ("inline", "trace", "synthetic"):
            problems.append(f"data.source: expected inline|trace|synthetic, got {source!r}")
        if source == "trace" and not self.data.get("path"):
            problems.append("data.path: required for trace data")
        if source == "inline" and not self.data.get("values"):
            problems.append("data.values: required for inline data")

        try:
            coords = self.resolve_coords()
        except (ScenarioError, OSError, ValueError) as exc:
            problems.append(f"topology: {exc}")
            coords = {}
        if coords:
            if self.radio_range <= 0:
                problems.append(f"topology.radio_range: must be positive, got {self.radio_range}")
            else:
                comps = connected_components(coords, self.radio_range)
                if len(comps) > 1:
                    named = "; ".join(str(sorted(c)) for c in comps)
                    problems.append(
                        f"topology: graph is disconnected at range {self.radio_range}: {named}"
                    )
            if self.algorithm == "centralized":
                if self.sink is None:
                    problems.append("sink: required for the centralized baseline")
                elif self.sink not in coords:
                    problems.append(f"sink: node {self.sink} not in topology")
        for t, a, b, change in self.link_changes:
            if change not in ("up", "down"):
                problems.append(f"link_changes: change must be up|down, got {change!r}")
            if coords and (a not in coords or b not in coords):
                problems.append(f"link_changes: unknown nodes {a},{b}")
        return problems

    def ensure_valid(self):
        problems = self.validate()
        if problems:
            raise ScenarioError("; ".join(problems))

    # -- data resolution --------------------------------------------------

    def resolve_coords(self) -> dict:
        if self.coords:
            return dict(self.coords)
        if self.data.get("source") == "trace":
            streams = self._trace_streams()
            return {
                sensor: (records[0].x, records[0].y)
                for sensor, records in streams.items()
            }
        raise ScenarioError("no topology.coords and no trace to take them from")

    def _trace_schema(self) -> TraceSchema:
        cols = self.data.get("columns", {})
        return TraceSchema(
            sensor_id=int(cols.get("sensor_id", 0)),
            epoch=int(cols.get("epoch", 1)),
            temperature=int(cols.get("temperature", 2)),
            x=int(cols.get("x", 3)),
            y=int(cols.get("y", 4)),
            delimiter=self.data.get("delimiter"),
        )

    def _trace_streams(self) -> dict:
        if getattr(self, "_trace_cache", None) is None:
            streams, _ = load_trace(self.data["path"], self._trace_schema())
            w_epochs = int(self.data.get("impute_window", max(1, round(self.w / self.sample_period_s))))
            lo = min(r[0].epoch for r in streams.values())
            hi = max(r[-1].epoch for r in streams.values())
            self._trace_cache = {
                sensor: impute_missing(records, w_epochs, epoch_range=(lo, hi))
                for sensor, records in streams.items()
            }
        return self._trace_cache

    def sample_streams(self) -> dict:
        """Per-node list of feature vectors, one per sampling epoch.

        Synthetic streams are deterministic per (seed, node). Inline data
        is static (all points preloaded at epoch 0) and handled elsewhere.
        """
        source = self.data.get("source")
        coords = self.resolve_coords()
        epochs = int(math.ceil(self.duration_s / self.sample_period_s))
        if source == "trace":
            features = self.data.get("features", ["temperature", "x", "y"])
            out = {}
            for sensor, records in self._trace_streams().items():
                vals = []
                for r in records[:epochs]:
                    row = {"temperature": r.temperature, "x": r.x, "y": r.y}
                    vals.append(tuple(float(row[f]) for f in features))
                out[sensor] = vals
            return out
        if source == "synthetic":
            base = float(self.data.get("base", 20.0))
            amp = float(self.data.get("amplitude", 2.0))
            period = float(self.data.get("period_s", 600.0))
            noise = float(self.data.get("noise", 0.3))
            spike_prob = float(self.data.get("spike_prob", 0.01))
            spike_size = float(self.data.get("spike_size", 8.0))
            include_coords = bool(self.data.get("include_coords", True))
            out = {}
            for node in sorted(coords):
                rng = random.Random((self.seed, node))
                phase = rng.uniform(0, period)
                x, y = coords[node]
                vals = []
                for e in range(epochs):
                    t = e * self.sample_period_s
                    v = base + amp * math.sin(2 * math.pi * (t + phase) / period)
                    v += rng.gauss(0.0, noise)
                    if rng.random() < spike_prob:
                        v += rng.uniform(0.5, 1.0) * spike_size
                    vals.append((v, x, y) if include_coords else (v,))
                out[node] = vals
            return out
        raise ScenarioError(f"data.source {source!r} has no sampled streams")

    def inline_points(self) -> dict:
        """Static per-node points from data.values (scalars or vectors)."""
        values = self.data.get("values", {})
        out = {}
        for node, rows in values.items():
            node = int(node)
            pts = []
            for epoch, row in enumerate(rows):
                rest = tuple(float(v) for v in (row if isinstance(row, (list, tuple)) else [row]))
                pts.append(DataPoint(origin=node, epoch=epoch, timestamp=0.0, rest=rest))
            out[node] = pts
        return out


# ---------------------------------------------------------------------------
# Geometry helpers
# ---------------------------------------------------------------------------

def connected_components(coords: dict, radio_range: float) -> list[set]:
    nodes = sorted(coords)
    seen: set = set()
    comps = []
    adj = disk_adjacency(coords, radio_range)
    for start in nodes:
        if start in seen:
            continue
        comp = {start}
        frontier = [start]
        while frontier:
            u = frontier.pop()
            for v in adj[u]:
                if v not in comp:
                    comp.add(v)
                    frontier.append(v)
        seen |= comp
        comps.append(comp)
    return comps


def disk_adjacency(coords: dict, radio_range: float) -> dict:
    nodes = sorted(coords)
    adj = {u: set() for u in nodes}
    for i, u in enumerate(nodes):
        for v in nodes[i + 1:]:
            du = coords[u]
            dv = coords[v]
            if math.dist(du, dv) <= radio_range:
                adj[u].add(v)
                adj[v].add(u)
    return adj


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

@dataclass
class SweepSpec:
    """One swept parameter over a base scenario, with per-cell repeats.

    ``series`` lets one sweep file carry several algorithm variants (the
    comparison curves of one figure); the swept parameter stays unique.
    Repeat r of any cell runs with seed base_seed + r.
    """

    name: str
    base: Scenario
    parameter: str
    values: tuple
    repeats: int = 4
    base_seed: int = 1
    series: tuple = ()  # ((label, {overrides}), ...)

    SWEEPABLE = ("w", "n", "k", "d", "p_drop")

    @classmethod
    def load(cls, path) -> "SweepSpec":
        path = Path(path)
        if not path.exists():
            raise ScenarioError(f"sweep file not found: {path}")
        with path.open() as fh:
            raw = yaml.safe_load(fh)
        if not isinstance(raw, dict):
            raise ScenarioError(f"sweep root must be a mapping: {path}")
        base_raw = raw.get("base")
        if isinstance(base_raw, str):
            base = Scenario.load((path.parent / base_raw))
        elif isinstance(base_raw, dict):
            base = Scenario.from_dict(base_raw, base_dir=path.parent)
        else:
            raise ScenarioError("sweep.base: inline scenario or path required")
        spec = cls(
            name=raw.get("name", path.stem),
            base=base,
            parameter=raw.get("parameter", ""),
            values=tuple(raw.get("values", ())),
            repeats=int(raw.get("repeats", 4)),
            base_seed=int(raw.get("base_seed", base.seed)),
            series=tuple(
                (str(s["label"]), dict(s.get("overrides", {})))
                for s in raw.get("series", [{"label": base.algorithm, "overrides": {}}])
            ),
        )
        return spec

    def validate(self) -> list[str]:
        problems = []
        if self.parameter not in self.SWEEPABLE:
            problems.append(f"parameter: must be one of {self.SWEEPABLE}, got {self.parameter!r}")
        if not self.values:
            problems.append("values: at least one value required")
        if self.repeats < 1:
            problems.append(f"repeats: must be >= 1, got {self.repeats}")
        for label, overrides in self.series:
            cell = self.cell(label, self.values[0], 0) if self.values else None
            if cell:
                for p in cell.validate():
                    problems.append(f"series {label}: {p}")
        return problems

    def cell(self, label: str, value, repeat: int) -> Scenario:
        overrides = dict(self.series_overrides(label))
        overrides[self.parameter] = value
        cell = self.base.with_overrides(**overrides)
        cell.seed = self.base_seed + repeat
        cell.name = f"{self.name}-{label}-{self.parameter}{value}-r{repeat}"
        return cell

    def series_overrides(self, label: str) -> dict:
        for lab, overrides in self.series:
            if lab == label:
                return overrides
        raise ScenarioError(f"unknown series label {label!r}")
