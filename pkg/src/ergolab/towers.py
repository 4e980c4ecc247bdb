"""Kakutani-Rokhlin towers with heights N and N+1, located by orbit scanning.

A tower is specified by a base set A whose visits are well separated.  The
orbit between consecutive A-visits (an A-column of height H) is cut into
blocks: writing H = q*N + r with 0 <= r < N, the first r blocks have size
N+1 and the remaining q-r blocks have size N.  The tower base B is the set
of block starts.  B is never stored; a point is located by scanning its
orbit backward to the last A-visit and forward to the next one.

An A-column with q < r cannot be cut this way.  Such columns are reported
as *defective* and their points are treated as lying off the tower; a base
whose successive visits are at least N*(N-1) apart never produces them.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .errors import ConfigError, NotSeparated, ScanBudgetExceeded
from .queries import Interval, IsolatedWord, SetQuery, query_from_dict, register
from .rng import RngStream
from .sampling import SamplingPlan, map_chunks
from .systems import (TWO64, BernoulliShift, MarkovShift, Point, Rotation, SystemSpec,
                      component_paths, sample_point, spec_from_dict)

OK, UNRESOLVED, DEFECTIVE = 0, 1, 2


def block_sizes(H: int, N: int) -> list[int]:
    """Block sizes of an A-column of height H; empty when H does not split."""
    q, r = divmod(H, N)
    if q < r:
        return []
    return [N + 1] * r + [N] * (q - r)


@dataclass(frozen=True)
class LevelSet:
    """A set of tower levels.

    ``ranges`` are half-open level intervals, ``progressions`` are triples
    (start, step, stop) with ``stop=None`` meaning the column top, and
    ``from_top`` holds half-open ranges of ``height - level`` (the number of
    steps until the next base visit).
    """

    ranges: tuple[tuple[int, int], ...] = ()
    progressions: tuple[tuple[int, int, int | None], ...] = ()
    from_top: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "ranges", tuple(tuple(map(int, r)) for r in self.ranges))
        object.__setattr__(self, "from_top", tuple(tuple(map(int, r)) for r in self.from_top))
        object.__setattr__(self, "progressions", tuple(
            (int(a), int(s), None if e is None else int(e)) for a, s, e in self.progressions))
        if any(s < 1 for _, s, _ in self.progressions):
            raise ConfigError("progression step must be positive")

    def mask(self, level: np.ndarray, height: np.ndarray) -> np.ndarray:
        level = np.asarray(level)
        out = np.zeros(level.shape, dtype=bool)
        for a, b in self.ranges:
            out |= (level >= a) & (level < b)
        for a, s, e in self.progressions:
            top = height if e is None else np.minimum(height, e)
            out |= (level >= a) & (level < top) & ((level - a) % s == 0)
        for a, b in self.from_top:
            d = height - level
            out |= (d >= a) & (d < b)
        return out

    def levels(self, height: int) -> np.ndarray:
        """Sorted levels of a column of the given height that belong to the set."""
        lv = np.arange(height)
        return lv[self.mask(lv, np.full(height, height))]

    def to_dict(self):
        return {"ranges": [list(r) for r in self.ranges],
                "progressions": [list(p) for p in self.progressions],
                "from_top": [list(r) for r in self.from_top]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(map(tuple, d.get("ranges", ()))),
                   tuple(map(tuple, d.get("progressions", ()))),
                   tuple(map(tuple, d.get("from_top", ()))))


@dataclass(frozen=True)
class KRTower:
    system: SystemSpec
    base: SetQuery
    N: int
    scan_budget: int
    mu_base: float = float("nan")
    min_return: int = 0
    id: str = ""

    def __post_init__(self):
        if self.N < 1 or self.scan_budget < 1:
            raise ConfigError("tower needs N >= 1 and a positive scan budget")
        if not self.id:
            blob = json.dumps([self.system.to_dict(), self.base.to_dict(), self.N, self.scan_budget],
                              sort_keys=True)
            object.__setattr__(self, "id", hashlib.sha1(blob.encode()).hexdigest()[:12])

    def to_dict(self):
        return {"id": self.id, "system": self.system.to_dict(), "base": self.base.to_dict(),
                "N": self.N, "scan_budget": self.scan_budget, "mu_base": self.mu_base,
                "min_return": self.min_return}

    @classmethod
    def from_dict(cls, d):
        return cls(spec_from_dict(d["system"]), query_from_dict(d["base"]), int(d["N"]),
                   int(d["scan_budget"]), float(d.get("mu_base", float("nan"))),
                   int(d.get("min_return", 0)), d.get("id", ""))


@dataclass(frozen=True)
class Location:
    level: int
    height: int
    block_start: int
    a_visit: int
    return_time: int


@dataclass
class LocationArrays:
    """Per-time tower coordinates; ``status`` is OK, UNRESOLVED or DEFECTIVE."""

    times: np.ndarray
    level: np.ndarray
    height: np.ndarray
    block_start: np.ndarray
    a_visit: np.ndarray
    return_time: np.ndarray
    status: np.ndarray

    @property
    def ok(self) -> np.ndarray:
        return self.status == OK

    def take(self, idx) -> "LocationArrays":
        return LocationArrays(*(getattr(self, f)[idx] for f in
                                ("times", "level", "height", "block_start", "a_visit",
                                 "return_time", "status")))


class _Track:
    """A-visits found on the scanned time range [lo, hi] of one point."""

    def __init__(self):
        self.lo = 0
        self.hi = -1
        self.visits = np.empty(0, dtype=np.int64)


def _scan(tower: KRTower, point: Point, lo: int, hi: int) -> np.ndarray:
    m = tower.base.contains(point, lo, hi)[0]
    return lo + np.flatnonzero(m).astype(np.int64)


def _first_step(tower: KRTower) -> int:
    return max(1 << 12, 4 * max(tower.base.reach()), 2 * tower.N)


def _track(tower: KRTower, point: Point) -> _Track:
    if point.size != 1:
        raise ValueError("tower location works on single points")
    return point.cache.setdefault(("track", tower.id), _Track())


def _ensure(tower: KRTower, point: Point, lo: int, hi: int) -> _Track:
    """Scan until every time in [lo, hi] has its bracketing A-visits (or the budget is spent)."""
    tr = _track(tower, point)
    budget = tower.scan_budget
    cap = 1 << 23
    if tr.hi < tr.lo:
        tr.lo, tr.hi = lo, hi
        tr.visits = _scan(tower, point, lo, hi)
    step = _first_step(tower)
    while tr.lo > lo or (not (tr.visits.size and tr.visits[0] <= lo) and tr.lo > lo - budget):
        new_lo = max(min(tr.lo - step, lo), lo - budget)
        new_lo = min(new_lo, tr.lo - 1)
        v = _scan(tower, point, new_lo, tr.lo - 1)
        tr.visits = np.concatenate([v, tr.visits])
        tr.lo = new_lo
        step = min(2 * step, cap)
    step = _first_step(tower)
    while tr.hi < hi or (not (tr.visits.size and tr.visits[-1] > hi) and tr.hi < hi + budget):
        new_hi = min(max(tr.hi + step, hi), hi + budget)
        new_hi = max(new_hi, tr.hi + 1)
        v = _scan(tower, point, tr.hi + 1, new_hi)
        tr.visits = np.concatenate([tr.visits, v])
        tr.hi = new_hi
        step = min(2 * step, cap)
    return tr


def _locate_times(tower: KRTower, tr: _Track, t: np.ndarray) -> LocationArrays:
    N = tower.N
    v = tr.visits
    k = np.searchsorted(v, t, side="right") - 1
    if v.size:
        prev = v[np.clip(k, 0, v.size - 1)]
        nxt = v[np.clip(k + 1, 0, v.size - 1)]
    else:
        prev = nxt = np.zeros_like(t)
    ok = (k >= 0) & (k + 1 < v.size)
    ok &= (t - prev <= tower.scan_budget) & (nxt - t <= tower.scan_budget)
    H = np.where(ok, nxt - prev, N)
    o = np.where(ok, t - prev, 0)
    q, r = np.divmod(H, N)
    tall = o < r * (N + 1)
    level = np.where(tall, o % (N + 1), (o - r * (N + 1)) % N)
    height = np.where(tall, N + 1, N)
    status = np.where(~ok, UNRESOLVED, np.where(q < r, DEFECTIVE, OK)).astype(np.int8)
    level = np.where(status == OK, level, -1)
    height = np.where(status == OK, height, 0)
    return LocationArrays(t, level.astype(np.int64), height.astype(np.int64), t - level,
                          np.where(ok, prev, 0), np.where(ok, H, 0), status)


def locate_range(tower: KRTower, point: Point, lo: int, hi: int) -> LocationArrays:
    """Tower coordinates of T^t x for every t in [lo, hi]."""
    tr = _ensure(tower, point, lo, hi)
    return _locate_times(tower, tr, np.arange(lo, hi + 1, dtype=np.int64))


def locate_times(tower: KRTower, point: Point, times: np.ndarray) -> LocationArrays:
    times = np.asarray(times, dtype=np.int64)
    tr = _ensure(tower, point, int(times.min()), int(times.max()))
    return _locate_times(tower, tr, times)


def locate(tower: KRTower, x: Point) -> Location | None:
    """Level and column of x, or None when x cannot be placed.

    None covers both a scan that exceeds the tower's budget and a point whose
    A-column does not split into blocks of sizes N and N+1.
    """
    loc = locate_range(tower, x, 0, 0)
    if loc.status[0] != OK:
        return None
    return Location(int(loc.level[0]), int(loc.height[0]), int(loc.block_start[0]),
                    int(loc.a_visit[0]), int(loc.return_time[0]))


@dataclass
class Columns:
    """Blocks (tower columns) found on a time range, in time order."""

    start: np.ndarray
    height: np.ndarray
    status: np.ndarray


def columns(tower: KRTower, point: Point, lo: int, hi: int) -> Columns:
    """Every block that intersects [lo, hi], including those cut by its ends.

    Status is OK for blocks of resolved, splittable A-columns; a defective
    A-column is returned as one block of status DEFECTIVE, and a stretch
    without bracketing visits within budget as one UNRESOLVED block.
    """
    tr = _ensure(tower, point, lo, hi)
    v = tr.visits
    N, budget = tower.N, tower.scan_budget
    starts, heights, status = [], [], []
    i0 = max(int(np.searchsorted(v, lo, side="right")) - 1, 0)
    i1 = int(np.searchsorted(v, hi, side="right"))
    if v.size == 0 or v[0] > lo:
        first = int(v[0]) if v.size else hi + 1
        starts.append(np.array([lo], dtype=np.int64))
        heights.append(np.array([first - lo], dtype=np.int64))
        status.append(np.array([UNRESOLVED], dtype=np.int8))
    for i in range(i0, min(i1, v.size)):
        a = int(v[i])
        if i + 1 >= v.size:
            starts.append(np.array([a], dtype=np.int64))
            heights.append(np.array([hi - a + 1], dtype=np.int64))
            status.append(np.array([UNRESOLVED], dtype=np.int8))
            break
        H = int(v[i + 1]) - a
        sizes = block_sizes(H, N)
        if H > budget:
            st, sizes = UNRESOLVED, [H]
        elif not sizes:
            st, sizes = DEFECTIVE, [H]
        else:
            st = OK
        sz = np.asarray(sizes, dtype=np.int64)
        s = a + np.concatenate([[0], np.cumsum(sz)[:-1]])
        keep = (s <= hi) & (s + sz - 1 >= lo)
        starts.append(s[keep])
        heights.append(sz[keep])
        status.append(np.full(int(keep.sum()), st, dtype=np.int8))
    if not starts:
        return Columns(np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0, np.int8))
    return Columns(np.concatenate(starts), np.concatenate(heights), np.concatenate(status))


@dataclass(frozen=True)
class TowerLevels(SetQuery):
    """Points located in the tower at one of the given levels.

    ``heights`` optionally restricts to columns of those heights.  Points that
    cannot be located are outside the set.
    """

    tower: KRTower
    levels: LevelSet
    heights: tuple[int, ...] | None = None
    kind = "tower_levels"

    def contains(self, point, lo, hi):
        rows = [point] if point.size == 1 else [point.row(r) for r in range(point.size)]
        out = np.empty((len(rows), hi - lo + 1), dtype=bool)
        for r, p in enumerate(rows):
            loc = locate_range(self.tower, p, lo, hi)
            m = loc.ok & self.levels.mask(loc.level, loc.height)
            if self.heights is not None:
                m &= np.isin(loc.height, self.heights)
            out[r] = m
        return out

    def uses_towers(self):
        return True

    def towers(self):
        return [self.tower]

    def to_dict(self):
        return {"kind": "tower_levels", "tower": self.tower.id, "levels": self.levels.to_dict(),
                "heights": None if self.heights is None else list(self.heights)}


@register("tower_levels")
def _tower_levels(d, towers):
    if d["tower"] not in towers:
        raise ConfigError(f"tower {d['tower']!r} is not defined")
    h = d.get("heights")
    return TowerLevels(towers[d["tower"]], LevelSet.from_dict(d["levels"]),
                       None if h is None else tuple(h))


# ---------------------------------------------------------------------------
# Construction


def rotation_separation(alpha_fixed: int, g: int) -> int:
    """min over 1 <= i < g of the fixed-point circle distance of i*alpha from 0."""
    best = TWO64
    a = np.uint64(alpha_fixed)
    for start in range(1, g, 1 << 22):
        i = np.arange(start, min(g, start + (1 << 22)), dtype=np.uint64)
        with np.errstate(over="ignore"):
            c = i * a
            d = np.minimum(c, np.uint64(0) - c)
        best = min(best, int(d.min()))
    return best


def default_base(spec: SystemSpec, N: int) -> SetQuery:
    """A base set whose visits are at least N**2 steps apart.

    On a rotation this is the arc [0, m) with m the smallest circle distance
    of i*alpha, 0 < i < N**2, so the arc's first N**2 images are disjoint.  On
    a shift it is an unbordered word b c^(L-1) that has not occurred in the
    previous N**2 - 1 steps, with L chosen so the word has probability about
    1/N**2.  Products use their rotation factor.
    """
    g = N * N
    rot = component_paths(spec, Rotation)
    if rot:
        r = spec.component(rot[0])
        m = rotation_separation(r.alpha_fixed, g)
        return Interval(0.0, m / TWO64, rot[0])
    paths = component_paths(spec, (BernoulliShift, MarkovShift))
    if not paths:
        raise ConfigError("no component to build a tower base on")
    path = paths[0]
    s = spec.component(path)
    if isinstance(s, BernoulliShift):
        p = np.array(s.probs)
        c = int(np.argmax(p))
        q = p.copy()
        q[c] = -1
        b = int(np.argmax(q))
        prob = lambda L: p[b] * p[c] ** (L - 1)
    else:
        M = np.array(s.matrix)
        pi = np.array(s.stationary)
        c = int(np.argmax(np.diag(M)))
        w = pi * M[:, c]
        w[c] = -1
        b = int(np.argmax(w))
        prob = lambda L: pi[b] * M[b, c] * M[c, c] ** (L - 2)
    best = min(range(2, 200), key=lambda L: abs(math.log(g * prob(L))))
    return IsolatedWord((b,) + (c,) * (best - 1), g, path)


def build_tower(spec: SystemSpec, A: SetQuery, N: int, scan_budget: int | None = None,
                rng: RngStream | None = None, n_roots: int = 16, returns_per_root: int = 4,
                max_scan: int = 1 << 31) -> KRTower:
    """Validate base ``A`` on sampled orbits and return the tower it defines.

    Each validation orbit is scanned forward until it has shown
    ``returns_per_root`` returns to A.  The returns give the Kac estimate
    mu(A) = 1 / mean return, the smallest observed return, and the
    splittability check: every observed return H must satisfy
    H // N >= H % N, otherwise :class:`NotSeparated` is raised.  The default
    budget is ceil(20 / mu(A)) + 4 N.
    """
    if N < 1:
        raise ConfigError("N must be positive")
    rng = rng or RngStream(0)
    tmp = KRTower(spec, A, N, 1)
    step0 = _first_step(tmp)
    returns = []
    for j in range(n_roots):
        pt = sample_point(spec, rng.child(j))
        visits: list[int] = []
        pos, step, last = 0, step0, 0
        while len(visits) < returns_per_root + 1:
            v = _scan(tmp, pt, pos, pos + step - 1)
            visits.extend(int(x) for x in v)
            pos += step
            last = visits[-1] if visits else 0
            gap = pos - last
            if (scan_budget is not None and gap > scan_budget) or pos > max_scan:
                raise ScanBudgetExceeded(
                    f"validation scan found no return to the base within {gap} steps")
            step = min(2 * step, 1 << 23)
        returns.extend(np.diff(visits[:returns_per_root + 1]).tolist())
    returns = np.array(returns, dtype=np.int64)
    bad = [int(h) for h in returns if not block_sizes(int(h), N)]
    if bad:
        raise NotSeparated(f"return times {sorted(set(bad))[:5]} cannot be cut into blocks of "
                           f"sizes {N} and {N + 1}")
    mu = 1.0 / float(returns.mean())
    if scan_budget is None:
        scan_budget = math.ceil(20.0 / mu) + 4 * N
    return KRTower(spec, A, N, int(scan_budget), mu, int(returns.min()))


# ---------------------------------------------------------------------------
# Verification


@dataclass
class TowerReport:
    n_samples: int
    coverage: float
    unresolved_fraction: float
    scan_unresolved_fraction: float
    defective_fraction: float
    level_counts: list[int]
    level_uniformity_chi2: float
    chi2_critical: float
    chi2_df: int
    height_histogram: dict[int, int]
    disjointness_violations: int

    @property
    def chi2_pass(self) -> bool:
        return self.level_uniformity_chi2 < self.chi2_critical

    def to_dict(self):
        d = dict(self.__dict__)
        d["height_histogram"] = {str(k): v for k, v in sorted(self.height_histogram.items())}
        d["chi2_pass"] = self.chi2_pass
        return d

    def level_csv(self) -> str:
        return "level,count\n" + "".join(f"{i},{c}\n" for i, c in enumerate(self.level_counts))


def verify_tower(tower: KRTower, n_samples: int, rng: RngStream,
                 plan: SamplingPlan | None = None) -> TowerReport:
    """Monte Carlo check of a tower: coverage, heights, level uniformity, disjointness.

    The chi-square statistic compares the counts of levels 0..N-1, which every
    column has; level N only exists in the taller columns.  A disjointness
    violation is a sampled point with two base visits among its last N steps.
    """
    plan = (plan or SamplingPlan()).resolve()
    plan = SamplingPlan("segment", plan.stride, plan.workers, plan.chunk_size)
    N = tower.N

    def one(chunk):
        t = chunk.times
        t0, t1 = int(t[0]), int(t[-1])
        loc = locate_range(tower, chunk.point, t0 - N, t1)
        base = (loc.ok & (loc.level == 0)).astype(np.int64)
        cs = np.concatenate([[0], np.cumsum(base)])
        idx = t - (t0 - N)
        recent = cs[idx + 1] - cs[idx + 1 - N]
        s = loc.take(idx)
        ok = s.ok
        lv = np.bincount(s.level[ok], minlength=N + 1)[:N + 1]
        hs, hc = np.unique(s.height[ok], return_counts=True)
        return (int(ok.sum()), int((s.status == UNRESOLVED).sum()), int((s.status == DEFECTIVE).sum()),
                lv, dict(zip(hs.tolist(), hc.tolist())), int((recent > 1).sum()))

    parts = map_chunks(tower.system, n_samples, rng, one, plan)
    n_ok = sum(p[0] for p in parts)
    n_unres = sum(p[1] for p in parts)
    n_def = sum(p[2] for p in parts)
    counts = np.sum([p[3] for p in parts], axis=0)
    hist: dict[int, int] = {}
    for p in parts:
        for h, c in p[4].items():
            hist[h] = hist.get(h, 0) + c
    viol = sum(p[5] for p in parts)
    low = counts[:N].astype(np.float64)
    if N > 1 and low.sum() > 0:
        exp = low.sum() / N
        chi2 = float(((low - exp) ** 2 / exp).sum())
        crit = float(sps.chi2.ppf(0.999, N - 1))
    else:
        chi2, crit = 0.0, float("inf")
    n = n_ok + n_unres + n_def
    return TowerReport(n, n_ok / n, (n_unres + n_def) / n, n_unres / n, n_def / n,
                       counts.astype(int).tolist(), chi2, crit, N - 1,
                       {int(k): int(v) for k, v in sorted(hist.items())}, viol)
