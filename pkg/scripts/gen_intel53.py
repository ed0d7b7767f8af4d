#!/usr/bin/env python3
"""Generate the bundled 53-sensor indoor-lab-style trace.

Synthesizes a connected 53-node layout on a 50m x 50m terrain (radio range
6.77m) and per-sensor temperature streams with diurnal-style drift, a mild
spatial gradient, AR(1) noise, occasional hot spikes (the outliers worth
finding) and ~2% missing epochs (exercising imputation). Deterministic:
re-running reproduces the committed file byte for byte.

Usage: python3 scripts/gen_intel53.py [out_path]
"""

import math
import sys
from pathlib import Path

import numpy as np

N_SENSORS = 53
EPOCHS = 200
RANGE_M = 6.77
TERRAIN = 50.0
SEED = 20260810


def connected(coords, radio):
    ids = sorted(coords)
    seen = {ids[0]}
    frontier = [ids[0]]
    while frontier:
        u = frontier.pop()
        for v in ids:
            if v not in seen and math.dist(coords[u], coords[v]) <= radio:
                seen.add(v)
                frontier.append(v)
    return len(seen) == len(ids)


def make_layout(rng):
    # Perturbed grid: dense enough for connectivity at 6.77m, irregular
    # enough to vary node degree. Repair passes pull stragglers inward.
    coords = {}
    cols = 8
    for i in range(N_SENSORS):
        gx, gy = i % cols, i // cols
        x = 3.0 + gx * 6.2 + rng.uniform(-2.2, 2.2)
        y = 3.0 + gy * 6.4 + rng.uniform(-2.2, 2.2)
        coords[i] = (min(max(x, 0.5), TERRAIN - 0.5), min(max(y, 0.5), TERRAIN - 0.5))
    for _ in range(100):
        if connected(coords, RANGE_M):
            break
        # move the farthest-from-centroid node toward the centroid
        cx = sum(p[0] for p in coords.values()) / N_SENSORS
        cy = sum(p[1] for p in coords.values()) / N_SENSORS
        worst = max(coords, key=lambda i: math.dist(coords[i], (cx, cy)))
        x, y = coords[worst]
        coords[worst] = (x + 0.4 * (cx - x), y + 0.4 * (cy - y))
    assert connected(coords, RANGE_M), "layout repair failed"
    return coords


def main(out_path):
    rng = np.random.default_rng(SEED)
    coords = make_layout(rng)
    lines = []
    for sensor in range(N_SENSORS):
        x, y = coords[sensor]
        base = 18.0 + 0.04 * (x + y) + rng.uniform(-0.5, 0.5)
        phase = rng.uniform(0, 2 * math.pi)
        ar = 0.0
        spike_left = 0
        spike_size = 0.0
        for epoch in range(EPOCHS):
            ar = 0.9 * ar + rng.normal(0.0, 0.12)
            value = base + 1.5 * math.sin(2 * math.pi * epoch / 240.0 + phase) + ar
            if spike_left > 0:
                value += spike_size
                spike_left -= 1
            elif rng.random() < 0.004:
                spike_left = int(rng.integers(1, 4))
                spike_size = rng.uniform(4.0, 9.0)
                value += spike_size
            if rng.random() < 0.02:
                continue  # lost sample: a gap for the imputer
            lines.append(f"{sensor}\t{epoch}\t{value:.3f}\t{x:.2f}\t{y:.2f}")
    Path(out_path).write_text("\n".join(lines) + "\n")
    print(f"{out_path}: {len(lines)} records, {N_SENSORS} sensors, {EPOCHS} epochs")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "scenarios/data/intel53.tsv")
