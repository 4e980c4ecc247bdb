"""Statistical functionals of the processes defined by partitions.

All estimators read names through :mod:`ergolab.sampling`, so they are
deterministic given the seed and chunking, and they accept tower-based
partitions (sampled along orbit segments).
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import CapacityExceeded, ConfigError
from .partitions import Partition, _check_unresolved
from .rng import RngStream
from .sampling import SamplingPlan, map_chunks
from .stats import Moments, ProbEstimate, Z975, combine, entropy_bits
from .systems import SystemSpec

DEFAULT_CAP = 1 << 20
ATOM_CAP = 1 << 12
OT_CAP = 4096
EXACT_ALPHA_ATOMS = 16


# ---------------------------------------------------------------------------
# Block distributions


@dataclass
class BlockDistribution:
    """Empirical law of the n-block X_0 .. X_(n-1); rows of ``words`` are sorted."""

    n: int
    a: int
    words: np.ndarray
    counts: np.ndarray
    n_unresolved: int = 0

    @property
    def n_samples(self) -> int:
        return int(self.counts.sum())

    @property
    def probs(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    @property
    def support(self) -> int:
        return len(self.counts)

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {tuple(int(v) for v in w): float(p) for w, p in zip(self.words, self.probs)}

    def to_csv(self) -> str:
        rows = ["word,frequency"]
        rows += ["".join(str(int(v)) if self.a <= 10 else f"{int(v)}." for v in w).rstrip(".")
                 + f",{p:.12g}" for w, p in zip(self.words, self.probs)]
        return "\n".join(rows) + "\n"


def _merge_words(parts, n: int) -> tuple[np.ndarray, np.ndarray]:
    acc: dict[bytes, int] = {}
    for words, counts in parts:
        for w, c in zip(words, counts.tolist()):
            k = w.tobytes()
            acc[k] = acc.get(k, 0) + c
    keys = sorted(acc)
    words = np.frombuffer(b"".join(keys), dtype=np.uint8).reshape(len(keys), n)
    return words, np.array([acc[k] for k in keys], dtype=np.int64)


def block_distribution(P: Partition, spec: SystemSpec, n: int, n_samples: int, rng: RngStream,
                       plan: SamplingPlan | None = None, cap: int = DEFAULT_CAP) -> BlockDistribution:
    """Empirical law of the P-name on [0, n-1]; raises when more than ``cap`` words appear."""
    if n < 1:
        raise ConfigError("block length must be positive")
    plan = (plan or SamplingPlan()).resolve(P)

    def one(chunk):
        lab, bad = chunk.windows(P, 0, n - 1)
        w, c = np.unique(lab[~bad], axis=0, return_counts=True)
        return w, c, int(bad.sum())

    parts = map_chunks(spec, n_samples, rng, one, plan)
    n_bad = sum(p[2] for p in parts)
    _check_unresolved(n_bad, n_samples, "block_distribution")
    words, counts = _merge_words([(p[0], p[1]) for p in parts], n)
    if len(counts) > cap:
        raise CapacityExceeded(f"{len(counts)} distinct {n}-blocks exceed the cap {cap}")
    return BlockDistribution(n, P.label_count, words, counts, n_bad)


def block_entropy(P: Partition, spec: SystemSpec, n: int, n_samples: int, rng: RngStream,
                  plan: SamplingPlan | None = None, cap: int = DEFAULT_CAP) -> ProbEstimate:
    """Miller-Madow block entropy per symbol, H(n)/n in bits."""
    bd = block_distribution(P, spec, n, n_samples, rng, plan, cap)
    h, se = entropy_bits(bd.counts, miller_madow=True)
    return ProbEstimate(float(h) / n, Z975 * se / n, bd.n_samples, bd.n_unresolved)


# ---------------------------------------------------------------------------
# Past/future dependence


def _atoms(lab: np.ndarray, a: int) -> np.ndarray:
    w = a ** np.arange(lab.shape[1], dtype=np.int64)
    return lab.astype(np.int64) @ w


def past_future_table(P: Partition, spec: SystemSpec, n: int, k: int, n_samples: int,
                      rng: RngStream, plan: SamplingPlan | None = None) -> tuple[np.ndarray, list]:
    """Joint counts of (X_-k .. X_0) and (X_n .. X_(n+k)), plus per-chunk tables."""
    if n < 1 or k < 0:
        raise ConfigError("need n >= 1 and k >= 0")
    a = P.label_count
    m = a ** (k + 1)
    if m > ATOM_CAP:
        raise CapacityExceeded(f"{m} atoms per side exceed {ATOM_CAP}")
    plan = (plan or SamplingPlan()).resolve(P)

    def one(chunk):
        lab, bad = chunk.windows(P, -k, n + k)
        lab = lab[~bad]
        i = _atoms(lab[:, :k + 1], a)
        j = _atoms(lab[:, n + k:], a)
        return np.bincount(i * m + j, minlength=m * m).reshape(m, m), int(bad.sum())

    parts = map_chunks(spec, n_samples, rng, one, plan)
    _check_unresolved(sum(b for _, b in parts), n_samples, "past_future_table")
    return np.sum([c for c, _ in parts], axis=0), parts


def beta_from_table(J: np.ndarray) -> tuple[float, float]:
    """Plug-in beta = 1/2 sum |p_ij - p_i q_j| and its delta-method standard error."""
    n = J.sum()
    p = J / n
    pi, qj = p.sum(axis=1), p.sum(axis=0)
    d = p - np.outer(pi, qj)
    beta = 0.5 * float(np.abs(d).sum())
    s = np.sign(d)
    infl = 0.5 * (s - (s @ qj)[:, None] - (pi @ s)[None, :])
    mean = float((p * infl).sum())
    var = float((p * infl ** 2).sum()) - mean ** 2
    return beta, math.sqrt(max(var, 0.0) / n)


def beta_coefficient(P: Partition, spec: SystemSpec, n: int, k: int, n_samples: int, rng: RngStream,
                     plan: SamplingPlan | None = None) -> ProbEstimate:
    """beta between the k-past block ending at 0 and the k-future block starting at n."""
    plan = (plan or SamplingPlan()).resolve(P)
    J, parts = past_future_table(P, spec, n, k, n_samples, rng, plan)
    beta, se = beta_from_table(J)
    v = se * se
    if plan.clustered and len(parts) > 1:
        tot = J.sum()
        vals = [(beta_from_table(c)[0], c.sum()) for c, _ in parts if c.sum() > 0]
        K = len(vals)
        if K > 1:
            v = max(v, K / (K - 1) * sum((w / tot) ** 2 * (b - beta) ** 2 for b, w in vals))
    return ProbEstimate(beta, Z975 * math.sqrt(v), int(J.sum()))


def _best_columns(p: np.ndarray, pi: np.ndarray, qj: np.ndarray, rows: np.ndarray) -> tuple[float, np.ndarray]:
    """max over column sets B of |P(A x B) - P(A) P(B)| for the row set A."""
    f = p[rows].sum(axis=0) - pi[rows].sum() * qj
    pos, neg = f[f > 0].sum(), -f[f < 0].sum()
    return (pos, f > 0) if pos >= neg else (neg, f < 0)


def alpha_exact(J: np.ndarray) -> float:
    """Exact alpha of a joint table by enumerating every row set."""
    p = J / J.sum()
    pi, qj = p.sum(axis=1), p.sum(axis=0)
    m = p.shape[0]
    masks = ((np.arange(1 << m)[:, None] >> np.arange(m)[None, :]) & 1).astype(np.float64)
    f = masks @ p - (masks @ pi)[:, None] * qj[None, :]
    return float(np.maximum(np.where(f > 0, f, 0).sum(axis=1), np.where(f < 0, -f, 0).sum(axis=1)).max())


def alpha_ascent(J: np.ndarray, restarts: int = 8, seed: int = 0) -> float:
    """Lower bound on alpha by alternating best responses between row and column sets."""
    p = J / J.sum()
    pi, qj = p.sum(axis=1), p.sum(axis=0)
    g = np.random.Generator(np.random.PCG64(seed))
    best = 0.0
    for _ in range(restarts):
        rows = g.random(p.shape[0]) < 0.5
        val = -1.0
        for _ in range(100):
            v, cols = _best_columns(p, pi, qj, rows)
            v2, rows2 = _best_columns(p.T, qj, pi, cols)
            if v2 <= val + 1e-15:
                break
            val, rows = v2, rows2
        best = max(best, val, v)
    return float(best)


@dataclass(frozen=True)
class AlphaBracket:
    """lower <= alpha_k(n) <= upper for the k-truncated past/future sigma-algebras.

    With ``exact`` set the bracket collapses onto the enumerated value; the
    ascent bound and beta/2 are kept for comparison.  ``half_width`` is the
    95% half width of beta/2.
    """

    lower: float
    upper: float
    n: int
    k: int
    half_width: float
    ascent_lower: float
    beta_upper: float
    exact: float | None = None

    def to_dict(self):
        return dict(self.__dict__)


def alpha_bracket(P: Partition, spec: SystemSpec, n: int, k: int, n_samples: int, rng: RngStream,
                  plan: SamplingPlan | None = None, restarts: int = 8) -> AlphaBracket:
    plan = (plan or SamplingPlan()).resolve(P)
    J, _ = past_future_table(P, spec, n, k, n_samples, rng, plan)
    beta, se = beta_from_table(J)
    seed = int(rng.child(1 << 33).key)
    low = alpha_ascent(J, restarts, seed)
    up = beta / 2
    hw = Z975 * se / 2
    if J.shape[0] <= EXACT_ALPHA_ATOMS:
        ex = alpha_exact(J)
        return AlphaBracket(ex, ex, n, k, hw, low, up, ex)
    return AlphaBracket(low, up, n, k, hw, low, up)


# ---------------------------------------------------------------------------
# d-bar


def _ot():
    for lib in ("PYTORCH", "TENSORFLOW", "JAX", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{lib}", "1")
    import ot

    return ot


def hamming_cost(w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """Normalized Hamming distances between the rows of w1 and w2."""
    return (w1[:, None, :] != w2[None, :, :]).mean(axis=2)


def dbar_block(bd1: BlockDistribution, bd2: BlockDistribution) -> float:
    """Optimal transport cost between two n-block laws under normalized Hamming cost."""
    if bd1.n != bd2.n or bd1.a != bd2.a:
        raise ConfigError("block distributions must share n and the alphabet")
    if bd1.support > OT_CAP or bd2.support > OT_CAP:
        raise CapacityExceeded(f"supports {bd1.support}, {bd2.support} exceed {OT_CAP}")
    M = hamming_cost(bd1.words, bd2.words)
    G = _ot().emd(bd1.probs.astype(np.float64), bd2.probs.astype(np.float64), M)
    return max(float((G * M).sum()), 0.0)


# ---------------------------------------------------------------------------
# Factor approximation


def _digest(row: np.ndarray) -> bytes:
    return hashlib.blake2b(row.tobytes(), digest_size=16).digest()


@dataclass
class FactorFit:
    """Majority-vote map from P-names on [-n, n] to Q labels."""

    error: ProbEstimate
    n_blocks: int
    table: dict[bytes, np.ndarray]


def factor_fit(P: Partition, Q: Partition, spec: SystemSpec, n: int, n_samples: int, rng: RngStream,
               plan: SamplingPlan | None = None, cap: int = DEFAULT_CAP) -> FactorFit:
    if n < 0:
        raise ConfigError("n must be non-negative")
    plan = (plan or SamplingPlan()).resolve(P, Q)
    b = Q.label_count

    def one(chunk):
        lp, bp = chunk.windows(P, -n, n)
        lq, bq = chunk.windows(Q, 0, 0)
        bad = bp | bq
        keys = [_digest(r) for r in lp[~bad]]
        return keys, lq[~bad, 0].astype(np.int64), int(bad.sum())

    parts = map_chunks(spec, n_samples, rng, one, plan)
    n_bad = sum(p[2] for p in parts)
    _check_unresolved(n_bad, n_samples, "factor_approx_error")
    table: dict[bytes, np.ndarray] = {}
    for keys, q, _ in parts:
        for k, v in zip(keys, q.tolist()):
            c = table.get(k)
            if c is None:
                if len(table) >= cap:
                    raise CapacityExceeded(f"more than {cap} distinct {2 * n + 1}-blocks")
                c = table[k] = np.zeros(b, dtype=np.int64)
            c[v] += 1
    vote = {k: int(np.argmax(c)) for k, c in table.items()}
    moms = [Moments.of(np.array([vote[k] != v for k, v in zip(keys, q.tolist())], dtype=bool), bad)
            for keys, q, bad in parts]
    return FactorFit(combine(moms, plan.clustered), len(table), table)


def factor_approx_error(P: Partition, Q: Partition, spec: SystemSpec, n: int, n_samples: int,
                        rng: RngStream, plan: SamplingPlan | None = None,
                        cap: int = DEFAULT_CAP) -> ProbEstimate:
    """Misclassification rate of the best map from P-names on [-n, n] to the Q label at 0.

    Each observed P-block gets its majority Q label (ties go to the lowest
    label).  The in-sample rate is optimistic when most blocks are seen only
    once; :class:`FactorFit` reports the block count for that diagnosis.
    """
    return factor_fit(P, Q, spec, n, n_samples, rng, plan, cap).error
