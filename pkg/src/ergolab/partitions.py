"""Labelled partitions, their names along orbits, and partition metrics.

A partition is an ordered rule list (first matching query wins, otherwise
the default label) followed by override layers.  Layers relabel chosen tower
levels and are applied in order, so later layers win.  Off the tower, or
where a layer does not apply, the base-rule label stands.
"""

from __future__ import annotations

import hashlib
import json
import math
import string
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ScanBudgetExceeded, UnresolvedError
from .queries import Cylinder, Interval, SetQuery, query_from_dict
from .rng import RngStream
from .sampling import SamplingPlan, map_chunks
from .stats import Moments, ProbEstimate, Z975, combine
from .systems import Point, SystemSpec
from .towers import KRTower, LevelSet, locate_range, UNRESOLVED

_DIGITS = string.digits + string.ascii_lowercase
_LAYERS: dict[str, Callable] = {}


def register_layer(kind: str):
    def deco(fn):
        _LAYERS[kind] = fn
        return fn
    return deco


class Layer:
    """An override that relabels some levels of a tower."""

    kind = ""
    tower: KRTower

    def apply(self, point: Point, lo: int, hi: int, labels: np.ndarray) -> None:
        raise NotImplementedError

    def sources(self) -> list["Partition"]:
        return []

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class LevelLayer(Layer):
    """Constant ``label`` on the levels in ``levels`` (optionally only in columns of given heights)."""

    tower: KRTower
    levels: LevelSet
    label: int
    heights: tuple[int, ...] | None = None
    kind = "levels"

    def apply(self, point, lo, hi, labels):
        loc = locate_range(self.tower, point, lo, hi)
        m = loc.ok & self.levels.mask(loc.level, loc.height)
        if self.heights is not None:
            m &= np.isin(loc.height, self.heights)
        labels[m] = self.label

    def to_dict(self):
        return {"kind": "levels", "tower": self.tower.id, "levels": self.levels.to_dict(),
                "label": self.label, "heights": None if self.heights is None else list(self.heights)}


@register_layer("levels")
def _level_layer(d, towers, parts):
    h = d.get("heights")
    return LevelLayer(towers[d["tower"]], LevelSet.from_dict(d["levels"]), int(d["label"]),
                      None if h is None else tuple(h))


@dataclass(frozen=True)
class Partition:
    label_count: int
    rules: tuple[tuple[SetQuery, int], ...] = ()
    default: int = 0
    layers: tuple[Layer, ...] = ()
    name: str = ""

    def __post_init__(self):
        if self.label_count < 2:
            raise ConfigError("a partition needs at least two labels")
        object.__setattr__(self, "rules", tuple((q, int(l)) for q, l in self.rules))
        object.__setattr__(self, "layers", tuple(self.layers))
        for _, l in self.rules:
            self._check_label(l)
        self._check_label(self.default)
        for layer in self.layers:
            if hasattr(layer, "label"):
                self._check_label(layer.label)

    def _check_label(self, l):
        if not 0 <= l < self.label_count:
            raise ConfigError(f"label {l} outside [0, {self.label_count})")

    def with_layers(self, *layers: Layer, name: str | None = None) -> "Partition":
        return replace(self, layers=self.layers + tuple(layers),
                       name=self.name if name is None else name)

    def towers(self) -> list[KRTower]:
        seen: dict[str, KRTower] = {}
        for q, _ in self.rules:
            for t in q.towers():
                seen.setdefault(t.id, t)
        for layer in self.layers:
            seen.setdefault(layer.tower.id, layer.tower)
            for src in layer.sources():
                for t in src.towers():
                    seen.setdefault(t.id, t)
        return list(seen.values())

    def uses_towers(self) -> bool:
        return bool(self.layers) or any(q.uses_towers() for q, _ in self.rules)

    def labels(self, point: Point, lo: int, hi: int) -> tuple[np.ndarray, np.ndarray | None]:
        """Labels of T^t x for t in [lo, hi], shape (point.size, hi-lo+1).

        The second value marks times where a tower could not be located
        within its scan budget (None when the partition reads no tower).
        """
        W = hi - lo + 1
        lab = np.full((point.size, W), self.default, dtype=np.uint8)
        done = np.zeros((point.size, W), dtype=bool)
        for q, l in self.rules:
            m = q.contains(point, lo, hi) & ~done
            lab[m] = l
            done |= m
        if not self.uses_towers():
            return lab, None
        if point.size != 1:
            raise ValueError("tower-based partitions are evaluated one point at a time")
        unres = np.zeros((1, W), dtype=bool)
        for t in self.towers():
            unres[0] |= locate_range(t, point, lo, hi).status == UNRESOLVED
        for layer in self.layers:
            layer.apply(point, lo, hi, lab[0])
        return lab, unres

    def to_dict(self) -> dict:
        towers = {t.id: t.to_dict() for t in self.towers()}
        d = {"label_count": self.label_count, "default": self.default, "name": self.name,
             "rules": [{"query": q.to_dict(), "label": l} for q, l in self.rules],
             "layers": [layer.to_dict() for layer in self.layers],
             "towers": towers}
        sources = {partition_key(src): src.to_dict() for layer in self.layers
                   for src in layer.sources()}
        if sources:
            d["sources"] = sources
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Partition":
        known = {"label_count", "default", "name", "rules", "layers", "towers", "sources"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown partition fields {sorted(extra)}")
        towers = {k: KRTower.from_dict(v) for k, v in d.get("towers", {}).items()}
        sources = {k: Partition.from_dict(v) for k, v in d.get("sources", {}).items()}
        rules = tuple((query_from_dict(r["query"], towers), int(r["label"])) for r in d.get("rules", ()))
        layers = []
        for ld in d.get("layers", ()):
            if ld.get("kind") not in _LAYERS:
                raise ConfigError(f"unknown layer kind {ld.get('kind')!r}")
            layers.append(_LAYERS[ld["kind"]](ld, towers, sources))
        return cls(int(d["label_count"]), rules, int(d.get("default", 0)), tuple(layers),
                   d.get("name", ""))


def partition_key(P: Partition) -> str:
    """Short content hash used to reference a partition inside a serialized parent."""
    blob = json.dumps(P.to_dict(), sort_keys=True)
    return hashlib.sha1(blob.encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# Common partitions


def symbol_partition(alphabet: int, component: Sequence[int] = (), time: int = 0,
                     offset: int = 0, label_count: int | None = None) -> Partition:
    """Label = symbol at ``time`` (plus ``offset``) of a shift component."""
    a = label_count or alphabet + offset
    rules = tuple((Cylinder(time, s, tuple(component)), s + offset) for s in range(alphabet - 1))
    return Partition(a, rules, alphabet - 1 + offset, name=f"symbol@{time}")


def interval_partition(lo: float, hi: float, component: Sequence[int] = (),
                       inside: int = 0, outside: int = 1, label_count: int = 2) -> Partition:
    """Two-cell circle partition: ``inside`` on [lo, hi), ``outside`` elsewhere."""
    return Partition(label_count, ((Interval(lo, hi, tuple(component)), inside),), outside,
                     name=f"arc[{lo},{hi})")


def sturmian_partition(alpha: float, component: Sequence[int] = (),
                       labels: tuple[int, int] = (0, 1), label_count: int = 2) -> Partition:
    """Coding of a rotation by the arc [0, 1 - alpha) (first label) and its complement."""
    return interval_partition(0.0, 1.0 - alpha, component, labels[0], labels[1], label_count)


# ---------------------------------------------------------------------------
# Names


@dataclass(frozen=True)
class NameWindow:
    """Labels of T^(offset + i) x for i = 0 .. len(labels) - 1."""

    offset: int
    labels: tuple[int, ...]

    def __len__(self):
        return len(self.labels)

    def array(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=np.uint8)

    def digits(self) -> str:
        return "".join(_DIGITS[l] for l in self.labels)

    def csv_row(self) -> str:
        return f"{self.offset},{self.digits()}"

    @classmethod
    def from_csv_row(cls, row: str) -> "NameWindow":
        off, digits = row.strip().split(",")
        return cls(int(off), tuple(_DIGITS.index(c) for c in digits))


def windows_to_csv(windows: Sequence[NameWindow]) -> str:
    return "offset,labels\n" + "".join(w.csv_row() + "\n" for w in windows)


def label_at(P: Partition, x: Point, i: int) -> int:
    lab, unres = P.labels(x, i, i)
    if unres is not None and unres[0, 0]:
        raise UnresolvedError(f"tower location of time {i} exceeded its scan budget")
    return int(lab[0, 0])


def name_window(P: Partition, x: Point, m: int, n: int) -> NameWindow:
    if m > n:
        raise ValueError("name_window needs m <= n")
    lab, unres = P.labels(x, m, n)
    if unres is not None and unres[0].any():
        raise UnresolvedError("tower location inside the window exceeded its scan budget")
    return NameWindow(m, tuple(int(v) for v in lab[0]))


# ---------------------------------------------------------------------------
# Metrics

MAX_UNRESOLVED = 0.01


def _check_unresolved(n_bad: int, n: int, what: str) -> None:
    if n and n_bad / n > MAX_UNRESOLVED:
        raise ScanBudgetExceeded(f"{what}: {n_bad} of {n} samples unresolved (> 1%)")


def partition_distance(P: Partition, Q: Partition, spec: SystemSpec, n_samples: int,
                       rng: RngStream, plan: SamplingPlan | None = None) -> ProbEstimate:
    """Estimate µ{x : P(x) != Q(x)}."""
    if P.label_count != Q.label_count:
        raise ConfigError("partitions must have equal label counts")
    plan = (plan or SamplingPlan()).resolve(P, Q)

    def one(chunk):
        lp, bp = chunk.windows(P, 0, 0)
        lq, bq = chunk.windows(Q, 0, 0)
        bad = bp | bq
        return Moments.of((lp[:, 0] != lq[:, 0])[~bad], int(bad.sum()))

    parts = map_chunks(spec, n_samples, rng, one, plan)
    est = combine(parts, plan.clustered)
    _check_unresolved(est.n_unresolved, n_samples, "partition_distance")
    return est


def joint_label_counts(P: Partition, Q: Partition, spec: SystemSpec, n_samples: int,
                       rng: RngStream, plan: SamplingPlan) -> list[tuple[np.ndarray, int]]:
    """Per-chunk joint count tables of (P label, Q label) at time 0."""
    a, b = P.label_count, Q.label_count

    def one(chunk):
        lp, bp = chunk.windows(P, 0, 0)
        lq, bq = chunk.windows(Q, 0, 0)
        bad = bp | bq
        idx = lp[~bad, 0].astype(np.int64) * b + lq[~bad, 0]
        return np.bincount(idx, minlength=a * b).reshape(a, b), int(bad.sum())

    return map_chunks(spec, n_samples, rng, one, plan)


def rokhlin_metric(P: Partition, Q: Partition, spec: SystemSpec, n_samples: int,
                   rng: RngStream, plan: SamplingPlan | None = None,
                   miller_madow: bool = True) -> ProbEstimate:
    """Estimate H(Q|P) + H(P|Q) in bits from the joint law of the time-0 labels.

    Each of the three entropies in 2 H(P,Q) - H(P) - H(Q) receives the
    Miller-Madow correction when enabled.  The half width uses the
    delta-method influence -2 log p(i,j) + log p(i) + log q(j).
    """
    plan = (plan or SamplingPlan()).resolve(P, Q)
    parts = joint_label_counts(P, Q, spec, n_samples, rng, plan)
    J = np.sum([c for c, _ in parts], axis=0).astype(np.float64)
    n_bad = sum(b for _, b in parts)
    _check_unresolved(n_bad, n_samples, "rokhlin_metric")
    n = J.sum()
    pj = J / n
    pp = pj.sum(axis=1)
    pq = pj.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        infl = np.where(pj > 0, -2 * np.log2(pj) + np.log2(pp)[:, None] + np.log2(pq)[None, :], 0.0)
    rho = float((pj * infl).sum())
    if miller_madow:
        k = lambda v: int((v > 0).sum()) - 1
        rho += (2 * k(pj) - k(pp) - k(pq)) / (2 * n * math.log(2))
    rho = max(rho, 0.0)
    var = float((pj * infl ** 2).sum() - (pj * infl).sum() ** 2)
    v = max(var, 0.0) / n
    if plan.clustered:
        means = [((c * infl).sum() / c.sum(), c.sum()) for c, _ in parts if c.sum() > 0]
        K = len(means)
        if K > 1:
            m0 = float((pj * infl).sum())
            v = max(v, K / (K - 1) * sum((w / n) ** 2 * (m - m0) ** 2 for m, w in means))
    return ProbEstimate(rho, Z975 * math.sqrt(v), int(n), n_bad)
