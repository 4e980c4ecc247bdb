"""Deterministic chunked sampling shared by all Monte Carlo estimators.

Samples are split by index into chunks of ``chunk_size`` (4096 by default).
Chunk ``c`` draws everything from ``rng.child(c)``, so its result does not
depend on how chunks are scheduled; results are always reduced in chunk
order, which makes every estimate byte-identical at any parallel width.

Two sampling modes exist:

``independent``
    every sample is its own µ-distributed point, evaluated at time 0.
``segment``
    each chunk draws one root point and samples ``size`` times uniformly
    from [0, size * stride) along its orbit, in increasing order.  By
    stationarity each sampled point T^t x is µ-distributed; samples inside a
    chunk are dependent, so confidence intervals use the between-chunk
    variance.  Random rather than evenly spaced times keep the sampled
    phases from locking onto periodic structure such as tower levels.  Tower-based partitions need this mode because locating a
    point costs a scan of up to two tower heights, which one segment shares
    across all its samples.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .rng import RngStream
from .systems import SystemSpec, sample_point, sample_points

CHUNK_SIZE = 4096
DEFAULT_STRIDE = 97
_OFFSET_CHILD = 1 << 32


@dataclass(frozen=True)
class SamplingPlan:
    mode: str = "auto"
    stride: int = DEFAULT_STRIDE
    workers: int = 1
    chunk_size: int = CHUNK_SIZE

    def __post_init__(self):
        if self.mode not in ("auto", "independent", "segment"):
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        if self.stride < 1 or self.workers < 1 or self.chunk_size < 1:
            raise ValueError("stride, workers and chunk_size must be positive")

    def resolve(self, *objs) -> "SamplingPlan":
        """Pick a concrete mode: segments whenever any object reads a tower."""
        if self.mode != "auto":
            return self
        seg = any(getattr(o, "uses_towers", lambda: False)() for o in objs)
        return replace(self, mode="segment" if seg else "independent")

    @property
    def clustered(self) -> bool:
        return self.mode == "segment"


class Chunk:
    """The points (and sample times) of one chunk."""

    def __init__(self, spec: SystemSpec, rng: RngStream, index: int, size: int, plan: SamplingPlan):
        self.index = index
        self.size = size
        self.plan = plan
        self.rng = rng.child(index)
        if plan.mode == "segment":
            self.point = sample_point(spec, self.rng.child(0))
            g = self.rng.child(_OFFSET_CHILD).generator()
            self.times = np.sort(g.integers(0, plan.stride * size, size=size, dtype=np.int64))
        else:
            self.point = sample_points(spec, self.rng, size)
            self.times = np.zeros(size, dtype=np.int64)

    @property
    def segment(self) -> bool:
        return self.plan.mode == "segment"

    def windows(self, partition, lo: int, hi: int) -> tuple[np.ndarray, np.ndarray]:
        """Labels of T^(t+i) for sample times t and i in [lo, hi].

        Returns ``(labels, unresolved)`` with shapes (size, hi-lo+1) and (size,).
        """
        W = hi - lo + 1
        if self.segment:
            t0 = int(self.times[0])
            lab, unres = partition.labels(self.point, t0 + lo, int(self.times[-1]) + hi)
            idx = (self.times - t0)[:, None] + np.arange(W)[None, :]
            out = lab[0][idx]
            bad = unres[0][idx].any(axis=1) if unres is not None else np.zeros(self.size, bool)
            return out, bad
        lab, unres = partition.labels(self.point, lo, hi)
        bad = unres.any(axis=1) if unres is not None else np.zeros(self.size, bool)
        return lab, bad

    def contains(self, query) -> np.ndarray:
        if self.segment:
            t0 = int(self.times[0])
            m = query.contains(self.point, t0, int(self.times[-1]))[0]
            return m[self.times - t0]
        return query.contains(self.point, 0, 0)[:, 0]


def chunk_sizes(n_samples: int, chunk_size: int = CHUNK_SIZE) -> list[int]:
    full, rest = divmod(int(n_samples), chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])


def map_chunks(spec: SystemSpec, n_samples: int, rng: RngStream,
               fn: Callable[[Chunk], object], plan: SamplingPlan) -> list:
    """Apply ``fn`` to every chunk; results come back in chunk order."""
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    if plan.mode == "auto":
        raise ValueError("resolve the sampling plan before mapping")
    sizes = chunk_sizes(n_samples, plan.chunk_size)

    def run(c):
        return fn(Chunk(spec, rng, c, sizes[c], plan))

    if plan.workers == 1 or len(sizes) == 1:
        return [run(c) for c in range(len(sizes))]
    with ThreadPoolExecutor(max_workers=plan.workers) as ex:
        return list(ex.map(run, range(len(sizes))))
