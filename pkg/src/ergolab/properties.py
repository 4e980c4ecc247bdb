"""Randomized property checks shared by the test suite and the ``properties`` experiment.

Each check draws one random instance from its ``RngStream`` and returns
True when the property holds on it.  Tolerances are stated per check.
"""

from __future__ import annotations

import functools
import math

import numpy as np

from . import estimators as est
from .partitions import Partition, partition_distance, rokhlin_metric, symbol_partition
from .queries import Interval, Word
from .rng import RngStream
from .sampling import SamplingPlan
from .systems import BernoulliShift, MarkovShift, Rotation, sample_point
from .towers import build_tower, locate_range

ROTATION = Rotation(math.sqrt(2.0) - 1.0)
FAIR = BernoulliShift((0.5, 0.5))


def random_probs(g: np.random.Generator, k: int, floor: float = 0.05) -> tuple[float, ...]:
    p = floor + (1 - k * floor) * g.dirichlet(np.ones(k))
    p = np.round(p, 6)
    p[-1] = 1.0 - p[:-1].sum()
    return tuple(float(v) for v in p)


def random_markov(g: np.random.Generator, k: int) -> MarkovShift:
    return MarkovShift(tuple(random_probs(g, k) for _ in range(k)))


def random_word_partition(g: np.random.Generator, alphabet: int, labels: int, width: int = 2) -> Partition:
    """Label = a random function of the symbols at times 0 .. width-1."""
    words = list(np.ndindex(*(alphabet,) * width))
    f = g.integers(labels, size=len(words))
    rules = tuple((Word(tuple(int(s) for s in w)), int(l)) for w, l in zip(words[:-1], f[:-1]))
    return Partition(labels, rules, int(f[-1]), name="random")


def entropy_lipschitz(rng: RngStream, samples: int, plan: SamplingPlan | None = None) -> bool:
    """|h_n(P) - h_n(Q)| <= rho(P, Q) + 3 * combined half widths, n in {1, 2, 4}."""
    g = rng.generator()
    spec = BernoulliShift(random_probs(g, 3))
    P = random_word_partition(g, 3, 2)
    Q = random_word_partition(g, 3, 2)
    rho = rokhlin_metric(P, Q, spec, samples, rng.child(0), plan)
    for n in (1, 2, 4):
        hp = est.block_entropy(P, spec, n, samples, rng.child(n), plan)
        hq = est.block_entropy(Q, spec, n, samples, rng.child(n), plan)
        slack = 3 * (rho.half_width + hp.half_width + hq.half_width)
        if abs(hp.mean - hq.mean) > rho.mean + slack:
            return False
    return True


def dbar_tolerance(bd: est.BlockDistribution) -> float:
    """sqrt(K / n): a bound on the expected total-variation error of the empirical law."""
    return math.sqrt(bd.a ** bd.n / bd.n_samples)


def dbar_monotone(rng: RngStream, samples: int, plan: SamplingPlan | None = None) -> bool:
    """dbar_1 <= dbar_2 <= dbar_4 up to the empirical-law tolerances."""
    g = rng.generator()
    s1, s2 = random_markov(g, 2), random_markov(g, 2)
    P = symbol_partition(2)
    vals, tols = [], []
    for n in (1, 2, 4):
        b1 = est.block_distribution(P, s1, n, samples, rng.child(2 * n), plan)
        b2 = est.block_distribution(P, s2, n, samples, rng.child(2 * n + 1), plan)
        vals.append(est.dbar_block(b1, b2))
        tols.append(dbar_tolerance(b1) + dbar_tolerance(b2))
    return all(vals[i] <= vals[i + 1] + tols[i] + tols[i + 1] for i in range(2))


def metric_axioms(rng: RngStream, samples: int, plan: SamplingPlan | None = None) -> bool:
    """Identity, symmetry and the triangle inequality for d and the Rokhlin metric."""
    g = rng.generator()
    spec = BernoulliShift(random_probs(g, 3))
    P, Q, R = (random_word_partition(g, 3, 3) for _ in range(3))
    r = rng.child(0)
    for metric in (partition_distance, rokhlin_metric):
        pp = metric(P, P, spec, samples, r, plan)
        pq, qp = metric(P, Q, spec, samples, r, plan), metric(Q, P, spec, samples, r, plan)
        qr, pr = metric(Q, R, spec, samples, r, plan), metric(P, R, spec, samples, r, plan)
        if abs(pp.mean) > 1e-12 or abs(pq.mean - qp.mean) > 1e-12:
            return False
        slack = 3 * (pq.half_width + qr.half_width + pr.half_width)
        if pr.mean > pq.mean + qr.mean + slack:
            return False
    return True


@functools.lru_cache(maxsize=None)
def _towers():
    rot = build_tower(ROTATION, Interval(0.0, 0.003), 21, rng=RngStream(11))
    shift = build_tower(FAIR, Word((1,) + (0,) * 16), 21, rng=RngStream(12))
    return rot, shift


def tower_equivariance(rng: RngStream, samples: int, plan: SamplingPlan | None = None) -> bool:
    """Locating T^s x equals locating x at time s, and levels climb by one per step."""
    g = rng.generator()
    tower = _towers()[int(g.integers(2))]
    x = sample_point(tower.system, rng.child(0))
    W = 2000
    loc = locate_range(tower, x, 0, W)
    ok = loc.ok[:-1] & loc.ok[1:]
    lv, nx, h = loc.level[:-1], loc.level[1:], loc.height[:-1]
    step = (nx == lv + 1) | ((nx == 0) & (lv == h - 1))
    if not step[ok].all():
        return False
    for s in g.integers(0, W, size=5).tolist():
        y = locate_range(tower, x.shifted(s), 0, 0)
        if (y.status[0], y.level[0], y.height[0]) != (loc.status[s], loc.level[s], loc.height[s]):
            return False
    return True


def alpha_ordering(rng: RngStream, samples: int, plan: SamplingPlan | None = None) -> bool:
    """lower <= upper + half width; with exact enumeration, ascent <= exact <= beta/2."""
    g = rng.generator()
    a = int(g.integers(2, 4))
    k = int(g.integers(0, 5 if a == 2 else 2))
    n = int(g.integers(1, 4))
    spec = random_markov(g, a)
    br = est.alpha_bracket(symbol_partition(a), spec, n, k, samples, rng.child(0), plan)
    if br.lower > br.upper + br.half_width:
        return False
    if br.exact is not None:
        return br.ascent_lower <= br.exact + 1e-12 and br.exact <= br.beta_upper + 1e-12
    return True


SUITES = {
    "entropy_lipschitz": entropy_lipschitz,
    "dbar_monotone": dbar_monotone,
    "metric_axioms": metric_axioms,
    "tower_equivariance": tower_equivariance,
    "alpha_ordering": alpha_ordering,
}
