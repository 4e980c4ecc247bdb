"""Samplable measure-preserving systems and their orbit points.

Four system kinds are available: an irrational circle rotation, an i.i.d.
(Bernoulli) shift, a stationary Markov shift, and the direct product of a
rotation with a shift.  Points are lazily evaluated: a shift point stores
the symbols of the window materialised so far and regenerates nothing, since
every symbol is a pure function of (stream key, global time).

Rotation coordinates live on the 64-bit fixed-point circle, x = c / 2**64
with c an unsigned 64-bit integer; T^t adds ``t * round(alpha * 2**64)``
modulo 2**64, so orbit steps are exact and the coordinate always lies in
[0, 1).  The fixed-point alpha is rational, which is invisible at the scan
depths used here (far below 2**52 steps).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Sequence

import numpy as np

from . import _kernels as K
from .errors import ConfigError, WindowTooLarge
from .rng import RngStream, child_keys

TWO64 = 1 << 64
_ROT_SALT = np.uint64(0x5851F42D4C957F2D)

# Maximum number of symbols (rows x width) held by one shift point.
WINDOW_CAP = 1 << 28


def set_window_cap(cap: int) -> None:
    global WINDOW_CAP
    WINDOW_CAP = int(cap)


# ---------------------------------------------------------------------------
# System specifications


class SystemSpec:
    """Base class for the system variants."""

    kind: str = ""

    def to_dict(self) -> dict:
        raise NotImplementedError

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @property
    def is_shift(self) -> bool:
        return False

    def component(self, path: Sequence[int] = ()) -> "SystemSpec":
        if path:
            raise ConfigError(f"{self.kind} system has no component {tuple(path)}")
        return self


def _check_probs(p: Sequence[float], what: str) -> tuple[float, ...]:
    p = tuple(float(v) for v in p)
    if len(p) < 2:
        raise ConfigError(f"{what}: need at least two symbols")
    if any(not math.isfinite(v) or v < 0 for v in p):
        raise ConfigError(f"{what}: entries must be finite and non-negative")
    if abs(math.fsum(p) - 1.0) > 1e-12:
        raise ConfigError(f"{what}: probabilities sum to {math.fsum(p)!r}, not 1")
    return p


def _cdf(p: Sequence[float]) -> np.ndarray:
    c = np.cumsum(np.asarray(p, dtype=np.float64))
    c[-1] = 1.0
    return c


@dataclass(frozen=True)
class Rotation(SystemSpec):
    alpha: float
    kind = "rotation"

    def __post_init__(self):
        a = float(self.alpha)
        if not (0.0 < a < 1.0) or not math.isfinite(a):
            raise ConfigError(f"rotation angle must lie in (0, 1), got {self.alpha!r}")
        object.__setattr__(self, "alpha", a)

    @property
    def alpha_fixed(self) -> int:
        return round(Fraction(self.alpha) * TWO64) % TWO64

    def to_dict(self):
        return {"kind": "rotation", "alpha": self.alpha}


@dataclass(frozen=True)
class BernoulliShift(SystemSpec):
    probs: tuple[float, ...]
    kind = "bernoulli"

    def __post_init__(self):
        p = _check_probs(self.probs, "bernoulli")
        if sum(v > 0 for v in p) < 2:
            raise ConfigError("bernoulli: a one-point marginal gives a trivial system")
        object.__setattr__(self, "probs", p)

    @property
    def is_shift(self):
        return True

    @property
    def alphabet(self) -> int:
        return len(self.probs)

    def to_dict(self):
        return {"kind": "bernoulli", "probs": list(self.probs)}


def stationary_vector(matrix) -> np.ndarray:
    """Left Perron eigenvector of a row-stochastic matrix, normalised to sum 1."""
    M = np.asarray(matrix, dtype=np.float64)
    w, v = np.linalg.eig(M.T)
    i = int(np.argmin(np.abs(w - 1.0)))
    pi = np.real(v[:, i])
    pi = pi / pi.sum()
    return np.clip(pi, 0.0, None) / np.clip(pi, 0.0, None).sum()


def _is_primitive(M: np.ndarray) -> bool:
    a = M.shape[0]
    B = (M > 0).astype(np.int64)
    P = B.copy()
    # Wielandt: a primitive matrix has a positive power at exponent (a-1)^2 + 1.
    for _ in range((a - 1) ** 2 + 1):
        if P.min() > 0:
            return True
        P = np.minimum(P @ B, 1)
    return bool(P.min() > 0)


@dataclass(frozen=True)
class MarkovShift(SystemSpec):
    matrix: tuple[tuple[float, ...], ...]
    stationary: tuple[float, ...] | None = None
    kind = "markov"

    def __post_init__(self):
        rows = tuple(_check_probs(r, "markov row") for r in self.matrix)
        a = len(rows)
        if any(len(r) != a for r in rows):
            raise ConfigError("markov: transition matrix must be square")
        M = np.array(rows)
        if not _is_primitive(M):
            raise ConfigError("markov: chain must be irreducible and aperiodic")
        if self.stationary is None:
            pi = tuple(float(v) for v in stationary_vector(M))
        else:
            pi = _check_probs(self.stationary, "markov stationary")
            if len(pi) != a:
                raise ConfigError("markov: stationary vector has the wrong length")
        if np.max(np.abs(np.array(pi) @ M - np.array(pi))) > 1e-10:
            raise ConfigError("markov: stationary vector is not invariant (|piM - pi| > 1e-10)")
        object.__setattr__(self, "matrix", rows)
        object.__setattr__(self, "stationary", pi)

    @property
    def is_shift(self):
        return True

    @property
    def alphabet(self) -> int:
        return len(self.matrix)

    def reversed_matrix(self) -> np.ndarray:
        M = np.array(self.matrix)
        pi = np.array(self.stationary)
        return (M.T * pi[None, :]) / pi[:, None]

    def to_dict(self):
        return {"kind": "markov", "matrix": [list(r) for r in self.matrix],
                "stationary": list(self.stationary)}


@dataclass(frozen=True)
class Product(SystemSpec):
    left: SystemSpec
    right: SystemSpec
    kind = "product"

    def __post_init__(self):
        kinds = {type(self.left), type(self.right)}
        # Whitelist: rotation (ergodic, zero entropy) times a weakly mixing shift.
        if not (Rotation in kinds and (BernoulliShift in kinds or MarkovShift in kinds)):
            raise ConfigError(
                "product must pair a rotation with a Bernoulli or Markov shift; "
                "other products are not known to be ergodic here")

    def component(self, path=()):
        if not path:
            return self
        side = (self.left, self.right)[path[0]]
        return side.component(tuple(path[1:]))

    def to_dict(self):
        return {"kind": "product", "left": self.left.to_dict(), "right": self.right.to_dict()}


def spec_from_dict(d: dict) -> SystemSpec:
    d = dict(d)
    kind = d.pop("kind", None)
    try:
        if kind == "rotation":
            return Rotation(**d)
        if kind == "bernoulli":
            return BernoulliShift(tuple(d.pop("probs")), **d)
        if kind == "markov":
            st = d.pop("stationary", None)
            return MarkovShift(tuple(tuple(r) for r in d.pop("matrix")),
                               None if st is None else tuple(st), **d)
        if kind == "product":
            return Product(spec_from_dict(d.pop("left")), spec_from_dict(d.pop("right")), **d)
    except TypeError as exc:
        raise ConfigError(f"bad {kind} system: {exc}") from None
    raise ConfigError(f"unknown system kind {kind!r}")


def spec_from_json(text: str) -> SystemSpec:
    return spec_from_dict(json.loads(text))


def component_paths(spec: SystemSpec, kind: type) -> list[tuple[int, ...]]:
    """Component paths of ``spec`` whose system is an instance of ``kind``."""
    if isinstance(spec, Product):
        return ([(0,) + p for p in component_paths(spec.left, kind)]
                + [(1,) + p for p in component_paths(spec.right, kind)])
    return [()] if isinstance(spec, kind) else []


# ---------------------------------------------------------------------------
# Points


class Point:
    """One or more sample points of a system (``size`` rows).

    Most callers hold a single point; batches of independent points share a
    common time window so that partitions can be evaluated in one pass.
    """

    spec: SystemSpec
    size: int

    def __init__(self):
        self.cache: dict = {}

    def component(self, path: Sequence[int] = ()) -> "Point":
        if path:
            raise ConfigError(f"{self.spec.kind} point has no component {tuple(path)}")
        return self

    def shifted(self, s: int) -> "Point":
        raise NotImplementedError

    def ensure(self, lo: int, hi: int) -> "Point":
        raise NotImplementedError

    def row(self, r: int) -> "Point":
        raise NotImplementedError


class RotationPoint(Point):
    def __init__(self, spec: Rotation, x0: np.ndarray):
        super().__init__()
        self.spec = spec
        self.x0 = np.asarray(x0, dtype=np.uint64).reshape(-1)
        self.size = self.x0.shape[0]
        self._alpha = np.uint64(spec.alpha_fixed)

    def coords_fixed(self, lo: int, hi: int) -> np.ndarray:
        t = np.arange(lo, hi + 1, dtype=np.int64).astype(np.uint64)
        with np.errstate(over="ignore"):
            return self.x0[:, None] + t[None, :] * self._alpha

    def coords(self, lo: int, hi: int) -> np.ndarray:
        c = self.coords_fixed(lo, hi)
        return (c >> np.uint64(11)).astype(np.float64) * 2.0**-53

    @property
    def coordinate(self) -> float:
        return float(self.coords(0, 0)[0, 0])

    def shifted(self, s):
        step = (int(s) * self.spec.alpha_fixed) % TWO64
        with np.errstate(over="ignore"):
            return RotationPoint(self.spec, self.x0 + np.uint64(step))

    def ensure(self, lo, hi):
        if lo > hi:
            raise ValueError("empty window")
        return self

    def row(self, r):
        return RotationPoint(self.spec, self.x0[r:r + 1])


class _SymbolBuffer:
    """Symbols of one batch of shift points on a global time range."""

    def __init__(self, spec, keys):
        self.spec = spec
        self.keys = keys
        self.glo = 0
        self.ghi = -1
        self.data = np.empty((keys.shape[0], 0), dtype=np.uint8)
        if isinstance(spec, MarkovShift):
            M = np.array(spec.matrix)
            self.cdf_fwd = np.cumsum(M, axis=1)
            self.cdf_fwd[:, -1] = 1.0
            self.cdf_bwd = np.cumsum(spec.reversed_matrix(), axis=1)
            self.cdf_bwd[:, -1] = 1.0
            self.cdf0 = _cdf(spec.stationary)
        else:
            self.thr = K.thresholds(_cdf(spec.probs))

    def _iid(self, g0, n):
        return K.iid_fill(self.keys, np.int64(g0), np.int64(n), self.thr)

    def _chain(self, g0, n, step, prev_col):
        out = np.empty((self.keys.shape[0], n), dtype=np.uint8)
        cdf = self.cdf_fwd if step > 0 else self.cdf_bwd
        for r in range(self.keys.shape[0]):
            out[r] = K.chain_walk(self.keys[r], np.int64(g0), np.int64(n), np.int64(step),
                                  np.int64(prev_col[r]), cdf)
        return out

    def ensure(self, glo, ghi):
        markov = isinstance(self.spec, MarkovShift)
        if markov:
            glo, ghi = min(glo, 0), max(ghi, 0)
        if self.ghi < self.glo:
            width = ghi - glo + 1
            self._check(width)
            if markov:
                x0 = np.array([np.searchsorted(self.cdf0, K.uniforms(k, 0, 1)[0], side="right")
                               for k in self.keys], dtype=np.uint8)
                x0 = np.minimum(x0, len(self.cdf0) - 1).astype(np.uint8)
                right = self._chain(1, ghi, 1, x0) if ghi > 0 else np.empty((len(x0), 0), np.uint8)
                left = self._chain(-1, -glo, -1, x0)[:, ::-1] if glo < 0 else np.empty((len(x0), 0), np.uint8)
                self.data = np.ascontiguousarray(np.concatenate([left, x0[:, None], right], axis=1))
            else:
                self.data = self._iid(glo, width)
            self.glo, self.ghi = glo, ghi
            return
        width = self.ghi - self.glo + 1
        grow = min(max(width, 1 << 12), 1 << 22)
        parts = []
        new_lo, new_hi = self.glo, self.ghi
        if glo < self.glo:
            new_lo = min(glo, self.glo - grow)
        if ghi > self.ghi:
            new_hi = max(ghi, self.ghi + grow)
        if new_lo == self.glo and new_hi == self.ghi:
            return
        self._check(new_hi - new_lo + 1)
        if new_lo < self.glo:
            n = self.glo - new_lo
            if markov:
                parts.append(self._chain(self.glo - 1, n, -1, self.data[:, 0])[:, ::-1])
            else:
                parts.append(self._iid(new_lo, n))
        parts.append(self.data)
        if new_hi > self.ghi:
            n = new_hi - self.ghi
            if markov:
                parts.append(self._chain(self.ghi + 1, n, 1, self.data[:, -1]))
            else:
                parts.append(self._iid(self.ghi + 1, n))
        self.data = np.ascontiguousarray(np.concatenate(parts, axis=1))
        self.glo, self.ghi = new_lo, new_hi

    def _check(self, width):
        if width * self.keys.shape[0] > WINDOW_CAP:
            raise WindowTooLarge(
                f"window of {width} steps x {self.keys.shape[0]} rows exceeds cap {WINDOW_CAP}")


class ShiftPoint(Point):
    def __init__(self, spec, keys: np.ndarray, offset: int = 0, buffer: _SymbolBuffer | None = None):
        super().__init__()
        self.spec = spec
        self.keys = np.asarray(keys, dtype=np.uint64).reshape(-1)
        self.size = self.keys.shape[0]
        self.offset = int(offset)
        self._buf = buffer if buffer is not None else _SymbolBuffer(spec, self.keys)

    def ensure(self, lo, hi):
        if lo > hi:
            raise ValueError("empty window")
        self._buf.ensure(lo + self.offset, hi + self.offset)
        return self

    def symbols(self, lo: int, hi: int) -> np.ndarray:
        """Symbols at local times lo..hi, shape (size, hi - lo + 1)."""
        self.ensure(lo, hi)
        b = self._buf
        i = lo + self.offset - b.glo
        return b.data[:, i:i + hi - lo + 1]

    def shifted(self, s):
        return ShiftPoint(self.spec, self.keys, self.offset + int(s), self._buf)

    def row(self, r):
        return ShiftPoint(self.spec, self.keys[r:r + 1], self.offset)


class ProductPoint(Point):
    def __init__(self, spec: Product, left: Point, right: Point):
        super().__init__()
        self.spec = spec
        self.left, self.right = left, right
        self.size = left.size

    def component(self, path=()):
        if not path:
            return self
        return (self.left, self.right)[path[0]].component(tuple(path[1:]))

    def ensure(self, lo, hi):
        self.left.ensure(lo, hi)
        self.right.ensure(lo, hi)
        return self

    def shifted(self, s):
        return ProductPoint(self.spec, self.left.shifted(s), self.right.shifted(s))

    def row(self, r):
        return ProductPoint(self.spec, self.left.row(r), self.right.row(r))


def _make_point(spec: SystemSpec, keys: np.ndarray) -> Point:
    if isinstance(spec, Rotation):
        return RotationPoint(spec, K.mix64_array(keys ^ _ROT_SALT))
    if isinstance(spec, (BernoulliShift, MarkovShift)):
        return ShiftPoint(spec, keys)
    if isinstance(spec, Product):
        return ProductPoint(spec, _make_point(spec.left, child_keys(keys, 0)),
                            _make_point(spec.right, child_keys(keys, 1)))
    raise ConfigError(f"unsupported system {spec!r}")


def sample_point(spec: SystemSpec, rng: RngStream) -> Point:
    """A single µ-distributed point drawn from ``rng``."""
    return _make_point(spec, np.array([rng.key], dtype=np.uint64))


def sample_points(spec: SystemSpec, rng: RngStream, count: int, start: int = 0) -> Point:
    """Batch whose row j equals ``sample_point(spec, rng.child(start + j))``."""
    return _make_point(spec, rng.keys(start, count))


def rotation_point(spec: Rotation, x: float | Sequence[float]) -> RotationPoint:
    """Rotation point(s) at explicit coordinate(s) in [0, 1)."""
    xs = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if np.any((xs < 0) | (xs >= 1)):
        raise ValueError("rotation coordinates must lie in [0, 1)")
    c = [round(Fraction(float(v)) * TWO64) % TWO64 for v in xs]
    return RotationPoint(spec, np.array(c, dtype=np.uint64))


def orbit_window(point: Point, lo: int, hi: int) -> Point:
    """Materialise the orbit of ``point`` on times lo..hi (idempotent)."""
    if lo > hi:
        raise ValueError("orbit_window needs lo <= hi")
    return point.ensure(lo, hi)


UNRESOLVED_TIME = np.iinfo(np.int64).min


def first_entry_times(point: Point, query, direction: str = "forward", budget: int = 1 << 20) -> np.ndarray:
    """Per-row first entry time into ``query``; UNRESOLVED_TIME marks rows unresolved within budget.

    The returned time is the smallest |t| >= 1 in the requested direction with
    T^t x in the set, signed (negative for backward scans).
    """
    if budget < 1:
        raise ValueError("budget must be positive")
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    sign = 1 if direction == "forward" else -1
    out = np.full(point.size, UNRESOLVED_TIME, dtype=np.int64)
    open_rows = np.ones(point.size, dtype=bool)
    done = 0
    step = max(256, 4 * max(query.reach()))
    while done < budget and open_rows.any():
        n = min(step, budget - done)
        if sign > 0:
            m = query.contains(point, done + 1, done + n)
        else:
            m = query.contains(point, -(done + n), -(done + 1))[:, ::-1]
        hit = m.any(axis=1) & open_rows
        first = np.argmax(m, axis=1)
        out[hit] = (done + 1 + first[hit]) * sign
        open_rows &= ~hit
        done += n
        step = min(step * 2, 1 << 22)
    return out


def first_entry_time(point: Point, query, direction: str = "forward", budget: int = 1 << 20):
    """First entry time of a single point, or None when unresolved within ``budget``."""
    t = int(first_entry_times(point, query, direction, budget)[0])
    return None if t == UNRESOLVED_TIME else t
