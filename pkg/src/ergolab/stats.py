"""Monte Carlo estimates with normal-approximation confidence intervals."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

Z975 = 1.959963984540054


@dataclass(frozen=True)
class ProbEstimate:
    """A sample mean with a 95% normal-approximation half width.

    For independent samples ``half_width = z * sqrt(s^2 / n)`` with ``s^2``
    the sample variance.  When samples come in correlated chunks (orbit
    segments) the variance term is the larger of ``s^2 / n`` and the
    between-chunk estimate ``K/(K-1) * sum_c w_c^2 (m_c - m)^2`` with chunk
    weights ``w_c = n_c / n`` and chunk means ``m_c``.
    """

    mean: float
    half_width: float
    n_samples: int
    n_unresolved: int = 0

    @property
    def lower(self) -> float:
        return self.mean - self.half_width

    @property
    def upper(self) -> float:
        return self.mean + self.half_width

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Moments:
    """Per-chunk sums used to build a :class:`ProbEstimate`."""

    n: int = 0
    total: float = 0.0
    m2: float = 0.0  # sum of squared deviations from the chunk mean
    unresolved: int = 0

    @classmethod
    def of(cls, values: np.ndarray, unresolved: int = 0) -> "Moments":
        v = np.asarray(values, dtype=np.float64)
        m2 = float(((v - v.mean()) ** 2).sum()) if v.size else 0.0
        return cls(int(v.size), float(v.sum()), m2, int(unresolved))


def combine(parts: Sequence[Moments], clustered: bool = False) -> ProbEstimate:
    """Reduce chunk moments (in the given order) to an estimate."""
    n = sum(p.n for p in parts)
    unresolved = sum(p.unresolved for p in parts)
    if n == 0:
        return ProbEstimate(float("nan"), float("nan"), 0, unresolved)
    total = math.fsum(p.total for p in parts)
    mean = total / n
    # pooled deviations (Chan et al.), stable for near-constant samples
    m2 = math.fsum(p.m2 + p.n * (p.total / p.n - mean) ** 2 for p in parts if p.n > 0)
    var = m2 / max(n - 1, 1)
    v = var / n
    k = sum(1 for p in parts if p.n > 0)
    if clustered and k > 1:
        dev = math.fsum((p.n / n) ** 2 * (p.total / p.n - mean) ** 2 for p in parts if p.n > 0)
        v = max(v, dev * k / (k - 1))
    return ProbEstimate(mean, Z975 * math.sqrt(v), n, unresolved)


def entropy_bits(counts: Iterable[int] | np.ndarray, miller_madow: bool = True) -> tuple[float, float]:
    """Plug-in Shannon entropy (bits) of a count vector and its delta-method std error.

    With ``miller_madow`` the bias correction (K - 1) / (2 n) nats is added,
    K being the number of non-empty cells.
    """
    c = np.asarray(list(counts) if not isinstance(counts, np.ndarray) else counts, dtype=np.float64)
    c = c[c > 0]
    n = c.sum()
    if n == 0:
        return 0.0, 0.0
    p = c / n
    lp = np.log2(p)
    h = float(-(p * lp).sum())
    var = float((p * lp * lp).sum() - h * h)
    if miller_madow:
        h += (c.size - 1) / (2.0 * n) / math.log(2.0)
    return h, math.sqrt(max(var, 0.0) / n)
