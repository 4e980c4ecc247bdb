"""Measurable sets described by predicates on orbit points.

A query answers ``contains(point, lo, hi)``: a boolean array of shape
(point.size, hi - lo + 1) whose entry [r, j] says whether T^(lo + j) of row
r lies in the set.  Queries on product systems name the component they read
through a ``component`` path (0 = left factor, 1 = right factor).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from . import _kernels as K
from .errors import ConfigError
from .systems import TWO64, RotationPoint, ShiftPoint

_REGISTRY: dict[str, Callable[[dict, dict], "SetQuery"]] = {}


def register(kind: str):
    def deco(fn):
        _REGISTRY[kind] = fn
        return fn
    return deco


class SetQuery:
    kind = ""

    def contains(self, point, lo: int, hi: int) -> np.ndarray:
        raise NotImplementedError

    def reach(self) -> tuple[int, int]:
        """Largest backward and forward time offsets the predicate reads."""
        return (0, 0)

    def uses_towers(self) -> bool:
        return False

    def towers(self) -> list:
        return []

    def to_dict(self) -> dict:
        raise NotImplementedError

    def __and__(self, other):
        return And((self, other))

    def __or__(self, other):
        return Or((self, other))

    def __invert__(self):
        return Not(self)


def query_from_dict(d: dict, towers: dict | None = None) -> SetQuery:
    kind = d.get("kind")
    if kind not in _REGISTRY:
        raise ConfigError(f"unknown set query kind {kind!r}")
    return _REGISTRY[kind](d, towers or {})


def _to_fixed(v: float) -> int:
    return math.ceil(Fraction(float(v)) * TWO64)


@dataclass(frozen=True)
class Whole(SetQuery):
    kind = "whole"

    def contains(self, point, lo, hi):
        return np.ones((point.size, hi - lo + 1), dtype=bool)

    def to_dict(self):
        return {"kind": "whole"}


@register("whole")
def _whole(d, towers):
    return Whole()


@dataclass(frozen=True)
class Interval(SetQuery):
    """Half-open circle arc [lo, hi); wraps through 0 when lo > hi."""

    lo: float
    hi: float
    component: tuple[int, ...] = ()
    kind = "interval"

    def __post_init__(self):
        for v in (self.lo, self.hi):
            if not (0.0 <= v <= 1.0):
                raise ConfigError("interval endpoints must lie in [0, 1]")
        object.__setattr__(self, "component", tuple(self.component))

    def _fixed(self):
        u = _to_fixed(self.lo) % TWO64
        length = (_to_fixed(self.hi) - _to_fixed(self.lo)) % TWO64
        if self.hi == 1.0 and self.lo == 0.0:
            length = TWO64
        return u, length

    @property
    def length(self) -> float:
        u, n = self._fixed()
        return n / TWO64

    def contains(self, point, lo, hi):
        p = point.component(self.component)
        if not isinstance(p, RotationPoint):
            raise ConfigError("interval queries need a rotation component")
        u, n = self._fixed()
        if n >= TWO64:
            return np.ones((p.size, hi - lo + 1), dtype=bool)
        c = p.coords_fixed(lo, hi)
        with np.errstate(over="ignore"):
            return (c - np.uint64(u)) < np.uint64(n)

    def to_dict(self):
        return {"kind": "interval", "lo": self.lo, "hi": self.hi, "component": list(self.component)}


@register("interval")
def _interval(d, towers):
    return Interval(float(d["lo"]), float(d["hi"]), tuple(d.get("component", ())))


def _shift_component(point, path):
    p = point.component(path)
    if not isinstance(p, ShiftPoint):
        raise ConfigError("symbol queries need a shift component")
    return p


@dataclass(frozen=True)
class Cylinder(SetQuery):
    """Symbol ``symbol`` at relative time ``time``."""

    time: int
    symbol: int
    component: tuple[int, ...] = ()
    kind = "cylinder"

    def __post_init__(self):
        object.__setattr__(self, "component", tuple(self.component))

    def contains(self, point, lo, hi):
        p = _shift_component(point, self.component)
        return p.symbols(lo + self.time, hi + self.time) == self.symbol

    def reach(self):
        return (max(0, -self.time), max(0, self.time))

    def to_dict(self):
        return {"kind": "cylinder", "time": self.time, "symbol": self.symbol,
                "component": list(self.component)}


@register("cylinder")
def _cylinder(d, towers):
    return Cylinder(int(d["time"]), int(d["symbol"]), tuple(d.get("component", ())))


def _word_mask(point, path, word: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """mask[r, j] True iff the word occurs starting at time lo + j."""
    p = _shift_component(point, path)
    L = len(word)
    syms = p.symbols(lo, hi + L - 1)
    W = hi - lo + 1
    if L <= 8 and W <= 64:
        # many short rows: compare column blocks directly
        out = syms[:, :W] == word[0]
        for j in range(1, L):
            out &= syms[:, j:j + W] == word[j]
        return out
    out = np.empty((p.size, W), dtype=bool)
    for r in range(p.size):
        out[r] = K.word_starts(syms[r], word)
    return out


@dataclass(frozen=True)
class Word(SetQuery):
    """The word occupies times ``time .. time + len(word) - 1``."""

    word: tuple[int, ...]
    time: int = 0
    component: tuple[int, ...] = ()
    kind = "word"

    def __post_init__(self):
        if len(self.word) == 0:
            raise ConfigError("empty word")
        object.__setattr__(self, "word", tuple(int(s) for s in self.word))
        object.__setattr__(self, "component", tuple(self.component))

    def contains(self, point, lo, hi):
        w = np.asarray(self.word, dtype=np.uint8)
        return _word_mask(point, self.component, w, lo + self.time, hi + self.time)

    def reach(self):
        return (max(0, -self.time), max(0, self.time + len(self.word) - 1))

    def to_dict(self):
        return {"kind": "word", "word": list(self.word), "time": self.time,
                "component": list(self.component)}


@register("word")
def _word(d, towers):
    return Word(tuple(d["word"]), int(d.get("time", 0)), tuple(d.get("component", ())))


@dataclass(frozen=True)
class IsolatedWord(SetQuery):
    """The word starts at time 0 and did not start at any time in (-gap, 0).

    Successive visits to this set are at least ``gap`` steps apart, so the
    images T^i A for 0 <= i < gap are pairwise disjoint.
    """

    word: tuple[int, ...]
    gap: int
    component: tuple[int, ...] = ()
    kind = "isolated_word"

    def __post_init__(self):
        if len(self.word) == 0 or self.gap < 1:
            raise ConfigError("isolated word needs a non-empty word and gap >= 1")
        object.__setattr__(self, "word", tuple(int(s) for s in self.word))
        object.__setattr__(self, "component", tuple(self.component))

    def contains(self, point, lo, hi):
        w = np.asarray(self.word, dtype=np.uint8)
        g = self.gap
        occ = _word_mask(point, self.component, w, lo - g + 1, hi)
        out = np.zeros((occ.shape[0], hi - lo + 1), dtype=bool)
        for r in range(occ.shape[0]):
            p = np.flatnonzero(occ[r])
            if p.size == 0:
                continue
            prev = np.concatenate([[-g], p[:-1]])
            keep = (p >= g - 1) & (p - prev >= g)
            out[r, p[keep] - (g - 1)] = True
        return out

    def reach(self):
        return (self.gap, len(self.word) - 1)

    def to_dict(self):
        return {"kind": "isolated_word", "word": list(self.word), "gap": self.gap,
                "component": list(self.component)}


@register("isolated_word")
def _isolated(d, towers):
    return IsolatedWord(tuple(d["word"]), int(d["gap"]), tuple(d.get("component", ())))


@dataclass(frozen=True)
class And(SetQuery):
    args: tuple[SetQuery, ...]
    kind = "and"

    def contains(self, point, lo, hi):
        out = self.args[0].contains(point, lo, hi).copy()
        for q in self.args[1:]:
            out &= q.contains(point, lo, hi)
        return out

    def reach(self):
        r = [q.reach() for q in self.args]
        return (max(a for a, _ in r), max(b for _, b in r))

    def uses_towers(self):
        return any(q.uses_towers() for q in self.args)

    def towers(self):
        return [t for q in self.args for t in q.towers()]

    def to_dict(self):
        return {"kind": "and", "args": [q.to_dict() for q in self.args]}


@dataclass(frozen=True)
class Or(And):
    kind = "or"

    def contains(self, point, lo, hi):
        out = self.args[0].contains(point, lo, hi).copy()
        for q in self.args[1:]:
            out |= q.contains(point, lo, hi)
        return out

    def to_dict(self):
        return {"kind": "or", "args": [q.to_dict() for q in self.args]}


@dataclass(frozen=True)
class Not(SetQuery):
    arg: SetQuery
    kind = "not"

    def contains(self, point, lo, hi):
        return ~self.arg.contains(point, lo, hi)

    def reach(self):
        return self.arg.reach()

    def uses_towers(self):
        return self.arg.uses_towers()

    def towers(self):
        return self.arg.towers()

    def to_dict(self):
        return {"kind": "not", "arg": self.arg.to_dict()}


@register("and")
def _and(d, towers):
    return And(tuple(query_from_dict(q, towers) for q in d["args"]))


@register("or")
def _or(d, towers):
    return Or(tuple(query_from_dict(q, towers) for q in d["args"]))


@register("not")
def _not(d, towers):
    return Not(query_from_dict(d["arg"], towers))
