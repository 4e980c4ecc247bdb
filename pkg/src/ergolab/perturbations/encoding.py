"""Writing a factor's block names into a binary partition.

Every column of an (n, n+1) tower gets a header, a comb of forced 1s and a
binary codeword:

* height n columns start with 0^N 1 0^N (levels 0..2N), height n+1 columns
  with 0^(2N) 1 0^(2N) (levels 0..4N); the zero runs around the central 1 tell
  the two heights apart;
* after the header, every (N/2)-th level is forced to 1, which keeps zero
  runs shorter than N away from headers, so the only markers are headers;
* the first L levels after the header that are not forced carry the
  codeword of the column's Q-name (most significant bit first).

Codeword 0 is reserved for Q-names not seen while building the codebook.
Reading the header and the code bits of a column therefore recovers the
column's Q-name from the encoded name alone.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import CapacityExceeded, ConfigError
from ..partitions import (Layer, LevelLayer, NameWindow, Partition, partition_key,
                          register_layer)
from ..queries import SetQuery
from ..rng import RngStream
from ..sampling import SamplingPlan, map_chunks
from ..systems import SystemSpec
from ..towers import OK, KRTower, LevelSet, build_tower, columns, default_base, locate_range
from .columns import collect_column_names
from .markers import marker_positions, zero_run_around

log = logging.getLogger(__name__)


def header_end(N: int, tall: bool) -> int:
    """Last header level: 2N for height-n columns, 4N for height-(n+1) columns."""
    return 4 * N if tall else 2 * N


def code_levels(N: int, tall: bool, L: int) -> np.ndarray:
    """The first L levels after the header that are not forced to 1."""
    e = header_end(N, tall)
    half = N // 2
    out = []
    lvl = e + 1
    while len(out) < L:
        if (lvl - e) % half:
            out.append(lvl)
        lvl += 1
    return np.asarray(out, dtype=np.int64)


def encoding_marker_length(epsilon: float, n: int) -> int:
    """Smallest even N with 1/N < epsilon/10.

    A warning is logged when N/n < epsilon/20 fails as well, which happens
    whenever n <= 400/epsilon**2.
    """
    if not 0 < epsilon <= 1:
        raise ConfigError("epsilon must lie in (0, 1]")
    N = 2
    while not (1.0 / N < epsilon / 10.0):
        N += 2
    if not N / n < epsilon / 20.0:
        log.warning("N/n = %d/%d is not below epsilon/20 = %g", N, n, epsilon / 20.0)
    return N


@dataclass
class Codebook:
    """Injective map from observed column Q-names to L-bit codewords.

    ``names[h]`` lists the Q-names of height-h columns; the name at position i
    has codeword i + 1, and codeword 0 is reserved.
    """

    n: int
    N: int
    L: int
    names: dict[int, tuple[bytes, ...]]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.names = {int(h): tuple(v) for h, v in self.names.items()}
        if set(self.names) - {self.n, self.n + 1}:
            raise ConfigError("codebook heights must be n and n+1")
        cap = (1 << self.L) - 1
        for h, v in self.names.items():
            if len(v) > cap:
                raise CapacityExceeded(f"{len(v)} names of height {h} exceed {cap} codewords")
            if len(set(v)) != len(v):
                raise ConfigError("codebook names must be distinct")
        self._index = {(h, name): i + 1 for h, v in self.names.items() for i, name in enumerate(v)}

    def levels(self, height: int) -> np.ndarray:
        return code_levels(self.N, height == self.n + 1, self.L)

    def code(self, height: int, name: bytes) -> int:
        return self._index.get((height, name), 0)

    def bits(self, code: int) -> np.ndarray:
        return np.array([(code >> (self.L - 1 - j)) & 1 for j in range(self.L)], dtype=np.uint8)

    def name(self, height: int, code: int) -> bytes | None:
        v = self.names.get(height, ())
        return v[code - 1] if 1 <= code <= len(v) else None

    def size(self, height: int) -> int:
        return len(self.names.get(height, ()))

    def to_dict(self):
        return {"n": self.n, "N": self.N, "L": self.L,
                "names": {str(h): [bytes(x).hex() for x in v] for h, v in sorted(self.names.items())}}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["n"]), int(d["N"]), int(d["L"]),
                   {int(h): tuple(bytes.fromhex(x) for x in v) for h, v in d["names"].items()})


@dataclass(frozen=True, eq=False)
class CodewordLayer(Layer):
    """Writes each column's codeword onto its code levels."""

    tower: KRTower
    source: Partition
    codebook: Codebook
    kind = "codeword"

    def sources(self):
        return [self.source]

    def apply(self, point, lo, hi, labels):
        cb = self.codebook
        cols = columns(self.tower, point, lo, hi)
        ok = cols.status == OK
        starts, heights = cols.start[ok], cols.height[ok]
        if starts.size == 0:
            return
        a, b = int(starts[0]), int(starts[-1] + heights[-1] - 1)
        q, _ = self.source.labels(point, a, b)
        q = q[0]
        for s, h in zip(starts.tolist(), heights.tolist()):
            lv = s + cb.levels(h)
            inside = (lv >= lo) & (lv <= hi)
            if not inside.any():
                continue
            code = cb.code(h, q[s - a:s - a + h].tobytes())
            labels[lv[inside] - lo] = cb.bits(code)[inside]

    def to_dict(self):
        return {"kind": "codeword", "tower": self.tower.id, "source": partition_key(self.source),
                "codebook": self.codebook.to_dict()}


@register_layer("codeword")
def _codeword_layer(d, towers, sources):
    return CodewordLayer(towers[d["tower"]], sources[d["source"]], Codebook.from_dict(d["codebook"]))


def encoding_layers(tower: KRTower, n: int, N: int) -> tuple[LevelLayer, ...]:
    """Headers and forced 1s for both column heights."""
    half = N // 2
    out = []
    for h, M in ((n, N), (n + 1, 2 * N)):
        out += [
            LevelLayer(tower, LevelSet(ranges=((0, M), (M + 1, 2 * M + 1))), 0, (h,)),
            LevelLayer(tower, LevelSet(ranges=((M, M + 1),)), 1, (h,)),
            LevelLayer(tower, LevelSet(progressions=((2 * M + half, half, None),)), 1, (h,)),
        ]
    return tuple(out)


@dataclass
class EncodeResult:
    Pp: Partition
    codebook: Codebook
    tower: KRTower
    n_columns: int
    column_counts: dict[int, int]


def encode_factor(P: Partition, Q: Partition, spec: SystemSpec, epsilon: float, n: int,
                  rng: RngStream, N: int | None = None, n_columns: int = 100_000,
                  base: SetQuery | None = None, scan_budget: int | None = None) -> EncodeResult:
    """Encode the Q-names of the columns of an (n, n+1) tower into P.

    The codebook is built from about ``n_columns`` columns sampled along
    orbits; its codeword length is the smallest L with 2**L exceeding the
    number of observed names of either height.
    """
    if P.label_count != 2:
        raise ConfigError("encode_factor needs a binary partition")
    N = N or encoding_marker_length(epsilon, n)
    if N % 2 or N < 2:
        raise ConfigError("N must be even")
    if n <= 4 * N + 1:
        raise ConfigError("columns must be taller than the headers")
    A = base if base is not None else default_base(spec, n)
    tower = build_tower(spec, A, n, scan_budget, rng.child(0))
    counts = collect_column_names(tower, Q, spec, rng.child(1), n_columns)
    by_height: dict[int, list[tuple[int, bytes]]] = {}
    for (h, name), c in counts.items():
        by_height.setdefault(h, []).append((c, name))
    names = {h: tuple(nm for _, nm in sorted(v, key=lambda cn: (-cn[0], cn[1])))
             for h, v in by_height.items()}
    most = max((len(v) for v in names.values()), default=0)
    capacity = epsilon * n / 5.0
    if math.log2(most + 1) > capacity:
        raise CapacityExceeded(f"{most} observed blocks exceed 2^{capacity:g}")
    L = max(1, math.ceil(math.log2(most + 1)))
    cb = Codebook(n, N, L, names)
    for h in names:
        top = int(cb.levels(h)[-1])
        if top >= h:
            raise CapacityExceeded(f"code levels do not fit in columns of height {h}")
    Pp = P.with_layers(*encoding_layers(tower, n, N), CodewordLayer(tower, Q, cb),
                       name=f"{P.name}+code(n={n},N={N})")
    total = sum(counts.values())
    per_h = {h: sum(c for (hh, _), c in counts.items() if hh == h) for h in names}
    return EncodeResult(Pp, cb, tower, total, per_h)


# ---------------------------------------------------------------------------
# Decoding


@dataclass(frozen=True)
class DecodeResult:
    q_block: tuple[int, ...]
    column_start: int
    height: int


@dataclass(frozen=True)
class DecodeFailure:
    reason: str
    column_start: int | None = None

    NO_HEADER = "NoHeader"
    RESERVED = "ReservedCodeword"
    INVALID = "InvalidCodeword"


def header_columns(x: np.ndarray, N: int) -> list[tuple[int, int]]:
    """(column start index, tall flag) for every classifiable header in x.

    A marker is classified only when 2N symbols are visible on both sides of
    its centre; it is tall when the zero runs on both sides reach 2N.
    """
    out = []
    for c in marker_positions(x, N).tolist():
        if c - 2 * N < 0 or c + 2 * N >= len(x):
            continue
        left, right = zero_run_around(x, c)
        tall = left >= 2 * N and right >= 2 * N
        out.append((c - (2 * N if tall else N), tall))
    return out


def decode_factor(w: NameWindow, codebook: Codebook, N: int | None = None):
    """Recover the Q-name of one column from an encoded name window.

    The decoded column is the one containing time 0 when its header and code
    bits lie inside the window, otherwise the first column whose header and
    code bits do.  Returns :class:`DecodeResult` or :class:`DecodeFailure`.
    """
    N = N or codebook.N
    x = w.array()
    cols = header_columns(x, N)
    usable = []
    for s, tall in cols:
        h = codebook.n + 1 if tall else codebook.n
        lv = s + codebook.levels(h)
        if s >= 0 and lv[-1] < len(x):
            usable.append((s, tall, h, lv))
    if not usable:
        return DecodeFailure(DecodeFailure.NO_HEADER)
    zero = -w.offset
    pick = usable[0]
    for u in usable:
        if u[0] <= zero < u[0] + u[2]:
            pick = u
            break
    s, tall, h, lv = pick
    code = 0
    for bit in x[lv]:
        code = (code << 1) | int(bit)
    start = w.offset + s
    if code == 0:
        return DecodeFailure(DecodeFailure.RESERVED, start)
    name = codebook.name(h, code)
    if name is None:
        return DecodeFailure(DecodeFailure.INVALID, start)
    return DecodeResult(tuple(name), start, h)


@dataclass
class RoundTripStats:
    n_windows: int
    n_unresolved: int
    n_recovered: int
    n_observed: int
    n_recovered_observed: int
    failures: dict[str, int]
    false_markers: int
    windows_with_false_markers: int

    @property
    def recovery(self) -> float:
        return self.n_recovered / max(self.n_windows, 1)

    @property
    def recovery_observed(self) -> float:
        return self.n_recovered_observed / max(self.n_observed, 1)

    def to_dict(self):
        d = dict(self.__dict__)
        d["recovery"] = self.recovery
        d["recovery_observed"] = self.recovery_observed
        return d


def evaluate_encoding(res: EncodeResult, Q: Partition, spec: SystemSpec, n_samples: int,
                      rng: RngStream, plan: SamplingPlan | None = None) -> RoundTripStats:
    """Decode sampled windows [t - 2(n+1), t + 2(n+1)] and check them against the truth.

    A window counts as recovered when the decoder returns the column that
    contains t, with its exact Q-name.  Every marker found in a window is
    checked against the true header centres of the tower columns.
    """
    plan = (plan or SamplingPlan()).resolve()
    plan = SamplingPlan("segment", plan.stride, plan.workers, plan.chunk_size)
    cb, tower, n = res.codebook, res.tower, res.codebook.n
    N = cb.N
    R = 2 * (n + 1)

    def one(chunk):
        t = chunk.times
        t0, t1 = int(t[0]), int(t[-1])
        pt = chunk.point
        lab, unres = res.Pp.labels(pt, t0 - R, t1 + R)
        lab, unres = lab[0], unres[0]
        q, _ = Q.labels(pt, t0 - R, t1 + R)
        q = q[0]
        loc = locate_range(tower, pt, t0, t1)
        cols = columns(tower, pt, t0 - R, t1 + R)
        ok = cols.status == OK
        centres = set((cols.start[ok] + np.where(cols.height[ok] == n + 1, 2 * N, N)).tolist())
        cs = np.concatenate([[0], np.cumsum(unres)])
        stats = dict(n=0, unres=0, rec=0, obs=0, rec_obs=0, fm=0, wfm=0)
        fails: dict[str, int] = {}
        for ti in t.tolist():
            i = ti - (t0 - R)
            j = ti - t0
            if cs[i + R + 1] - cs[i - R] or loc.status[j] != OK:
                stats["unres"] += 1
                continue
            stats["n"] += 1
            w = NameWindow(-R, tuple(lab[i - R:i + R + 1].tolist()))
            marks = [ti - R + c for c in marker_positions(w.array(), N).tolist()]
            bad = sum(1 for c in marks if c not in centres)
            stats["fm"] += bad
            stats["wfm"] += bad > 0
            s0, h0 = int(loc.block_start[j]), int(loc.height[j])
            truth = q[s0 - (t0 - R):s0 - (t0 - R) + h0].tobytes()
            observed = cb.code(h0, truth) > 0
            stats["obs"] += observed
            out = decode_factor(w, cb, N)
            if isinstance(out, DecodeFailure):
                fails[out.reason] = fails.get(out.reason, 0) + 1
                continue
            good = (out.column_start + ti == s0 and out.height == h0
                    and bytes(out.q_block) == truth)
            stats["rec"] += good
            stats["rec_obs"] += good and observed
            if not good:
                fails["WrongBlock"] = fails.get("WrongBlock", 0) + 1
        return stats, fails

    parts = map_chunks(spec, n_samples, rng, one, plan)
    tot = {k: sum(p[0][k] for p in parts) for k in parts[0][0]}
    fails: dict[str, int] = {}
    for _, f in parts:
        for k, v in f.items():
            fails[k] = fails.get(k, 0) + v
    return RoundTripStats(tot["n"], tot["unres"], tot["rec"], tot["obs"], tot["rec_obs"],
                          dict(sorted(fails.items())), tot["fm"], tot["wfm"])
