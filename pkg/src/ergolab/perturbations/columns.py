"""Collecting the names that tower columns carry."""

from __future__ import annotations

from collections import Counter

import numpy as np

from ..partitions import Partition
from ..rng import RngStream
from ..sampling import SamplingPlan, map_chunks
from ..systems import SystemSpec, sample_point
from ..towers import OK, KRTower, columns


def column_names(tower: KRTower, Q: Partition, point, lo: int, hi: int):
    """(start, height, name bytes) of every complete OK column inside [lo, hi]."""
    cols = columns(tower, point, lo, hi)
    keep = (cols.status == OK) & (cols.start >= lo) & (cols.start + cols.height - 1 <= hi)
    starts, heights = cols.start[keep], cols.height[keep]
    if starts.size == 0:
        return []
    a, b = int(starts[0]), int(starts[-1] + heights[-1] - 1)
    lab, unres = Q.labels(point, a, b)
    row = lab[0]
    bad = unres[0] if unres is not None else None
    out = []
    for s, h in zip(starts.tolist(), heights.tolist()):
        if bad is not None and bad[s - a:s - a + h].any():
            continue
        out.append((s, h, row[s - a:s - a + h].tobytes()))
    return out


def collect_column_names(tower: KRTower, Q: Partition, spec: SystemSpec, rng: RngStream,
                         n_columns: int, n_roots: int = 32) -> Counter:
    """Counts of (height, Q-name) over about ``n_columns`` columns on ``n_roots`` orbits."""
    per_root = max(1, -(-n_columns // n_roots))
    span = per_root * (tower.N + 1)
    counts: Counter = Counter()
    for j in range(n_roots):
        pt = sample_point(spec, rng.child(j))
        for _, h, name in column_names(tower, Q, pt, 0, span - 1):
            counts[(h, name)] += 1
    return counts


def observed_blocks(P: Partition, spec: SystemSpec, L: int, n_samples: int,
                    rng: RngStream) -> set[bytes]:
    """Distinct P-blocks of length L at time 0 over independent samples."""
    plan = SamplingPlan().resolve(P)

    def one(chunk):
        lab, bad = chunk.windows(P, 0, L - 1)
        return {r.tobytes() for r in np.ascontiguousarray(lab[~bad])}

    out: set[bytes] = set()
    for part in map_chunks(spec, n_samples, rng, one, plan):
        out |= part
    return out
