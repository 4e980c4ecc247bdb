"""A small perturbation that creates a fixed amount of past/future dependence.

Given a binary partition P and a tall tower of height M = 3 N^2, the
perturbed partition Q writes the marker 0^N 1 0^N at the bottom of every
column and a 1 on every (N/2)-th level from 5N/2 upward, so that the marker
occurs only at column bottoms.  Reading the marker in the recent past tells
how far up the column a point is, which pins down when the next column
starts.  The witness sets are

    C = {level in (2N, N^2]}                     (decided by the past)
    D = {next column starts in [n+2N, n+2N+N^2)}  (decided by the future)

each of measure just under 1/3 and disjoint, so |µ(C∩D) - µ(C)µ(D)| ≈ 1/9.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ScanBudgetExceeded
from ..partitions import LevelLayer, Partition
from ..queries import SetQuery
from ..rng import RngStream
from ..sampling import SamplingPlan, map_chunks
from ..stats import Moments, ProbEstimate, combine
from ..systems import SystemSpec
from ..towers import (OK, UNRESOLVED, KRTower, LevelSet, TowerLevels, build_tower,
                      default_base, locate_range)
from .markers import marker_mask


def marker_length(n: int, epsilon: float) -> int:
    """Smallest even N with N > n and 1/N < epsilon/10."""
    if not 0 < epsilon <= 1:
        raise ConfigError("epsilon must lie in (0, 1]")
    N = n + 1
    while N % 2 or not (1.0 / N < epsilon / 10.0):
        N += 1
    return N


@dataclass(frozen=True)
class WitnessPair:
    C: SetQuery
    D: SetQuery
    k: int
    n: int
    N: int


@dataclass(frozen=True)
class RosenblattResult:
    Q: Partition
    tower: KRTower
    witness: WitnessPair


def rosenblatt_layers(tower: KRTower, N: int) -> tuple[LevelLayer, ...]:
    """Marker at levels 0..2N and forced 1s at levels k*N/2, k >= 5."""
    half = N // 2
    return (
        LevelLayer(tower, LevelSet(ranges=((0, N), (N + 1, 2 * N + 1))), 0),
        LevelLayer(tower, LevelSet(ranges=((N, N + 1),)), 1),
        LevelLayer(tower, LevelSet(progressions=((5 * half, half, None),)), 1),
    )


def rosenblatt_breaker(P: Partition, spec: SystemSpec, n: int, epsilon: float,
                       rng: RngStream, base: SetQuery | None = None,
                       scan_budget: int | None = None) -> RosenblattResult:
    if P.label_count != 2:
        raise ConfigError("the breaker needs a binary partition")
    N = marker_length(n, epsilon)
    M = 3 * N * N
    A = base if base is not None else default_base(spec, M)
    tower = build_tower(spec, A, M, scan_budget, rng.child(0))
    Q = P.with_layers(*rosenblatt_layers(tower, N), name=f"{P.name}+markers(N={N})")
    k = N * N
    C = TowerLevels(tower, LevelSet(ranges=((2 * N + 1, k + 1),)))
    D = TowerLevels(tower, LevelSet(from_top=((n + 2 * N, n + 2 * N + k),)))
    return RosenblattResult(Q, tower, WitnessPair(C, D, k, n, N))


@dataclass(frozen=True)
class WitnessEstimate:
    muC: ProbEstimate
    muD: ProbEstimate
    muCD: ProbEstimate
    gap: float
    c_agreement: float
    n_compared: int
    n_unresolved: int


def past_marker_membership(names: np.ndarray, N: int) -> np.ndarray:
    """C-membership read from Q-names on [-N^2, 0] (one row per sample).

    A point is in C when a marker centre sits at window index c <= N^2 - N - 1,
    i.e. its column started between N^2 and 2N+1 steps ago.
    """
    k = N * N
    m = marker_mask(names, N)
    return m[:, : k - N].any(axis=1)


def evaluate_witness(Q: Partition, spec: SystemSpec, witness: WitnessPair, tower: KRTower,
                     n_samples: int, rng: RngStream,
                     plan: SamplingPlan | None = None) -> WitnessEstimate:
    """Estimate µ(C), µ(D), µ(C∩D) and compare name-based with located C-membership."""
    plan = (plan or SamplingPlan()).resolve(Q, witness.C)
    N, k = witness.N, witness.k

    def one(chunk):
        c = chunk.contains(witness.C)
        d = chunk.contains(witness.D)
        if chunk.segment:
            t0, t1 = int(chunk.times[0]), int(chunk.times[-1])
            st = locate_range(tower, chunk.point, t0, t1).status[chunk.times - t0]
        else:
            st = np.array([locate_range(tower, chunk.point.row(r), 0, 0).status[0]
                           for r in range(chunk.size)])
        names, bad = chunk.windows(Q, -k, 0)
        good = (st != UNRESOLVED) & ~bad
        c_name = past_marker_membership(names, N)
        agree = (c_name == c)[good]
        return (Moments.of(c[good], int((~good).sum())), Moments.of(d[good]),
                Moments.of((c & d)[good]), int(agree.sum()), int(good.sum()))

    parts = map_chunks(spec, n_samples, rng, one, plan)
    muC = combine([p[0] for p in parts], plan.clustered)
    muD = combine([p[1] for p in parts], plan.clustered)
    muCD = combine([p[2] for p in parts], plan.clustered)
    if muC.n_unresolved / n_samples > 0.01:
        raise ScanBudgetExceeded(f"{muC.n_unresolved} of {n_samples} witness samples unresolved")
    n_cmp = sum(p[4] for p in parts)
    agree = sum(p[3] for p in parts) / max(n_cmp, 1)
    gap = abs(muCD.mean - muC.mean * muD.mean)
    return WitnessEstimate(muC, muD, muCD, gap, agree, n_cmp, muC.n_unresolved)
