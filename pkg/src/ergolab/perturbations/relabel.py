"""Relabelling a partition so that it also determines a second one.

The first L = ceil(epsilon N / 3) levels of every column of an (N, N+1)
tower are overwritten by a codeword over the label alphabet [0, a):

* a column whose Q-name is in the C-book gets the C-codeword that indexes
  its (height, Q-name), and the rest of the column keeps its P labels;
* any other column is *exceptional*: it gets the D-codeword indexing the
  Q-name of its first L levels, and its remaining levels carry Q labels.

Codewords avoid every L-block observed in P and Q together with their
Hamming neighbours, so a codeword start can be found in the relabelled name
by pattern matching.  From a window [t - n, t + n] with n >= N + L + 1 the
decoder locates the last codeword start s <= t and reads Q at t from the
codeword (and, in exceptional columns past level L, from the label itself).
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, InsufficientCodewords
from ..partitions import Layer, Partition, partition_key, register_layer
from ..queries import SetQuery
from ..rng import RngStream
from ..sampling import SamplingPlan, map_chunks
from ..stats import Moments, ProbEstimate, combine
from ..systems import SystemSpec
from ..towers import OK, KRTower, build_tower, columns, default_base
from .columns import collect_column_names, observed_blocks


def _neighbours(word: bytes, a: int):
    b = bytearray(word)
    for i, c in enumerate(word):
        for s in range(a):
            if s != c:
                b[i] = s
                yield bytes(b)
        b[i] = c


def codeword_allocator(forbidden, L: int, m: int, a: int = 2, radius: int = 0) -> list[tuple[int, ...]]:
    """The lexicographically first m words of length L over [0, a) that avoid ``forbidden``.

    With ``radius=1`` a word is also rejected when it is one substitution away
    from a forbidden word.
    """
    if L < 1 or m < 0 or a < 2:
        raise ConfigError("need L >= 1, m >= 0 and a >= 2")
    if radius not in (0, 1):
        raise ConfigError("radius must be 0 or 1")
    forb = {bytes(w) for w in forbidden}
    total = a ** L
    if total - len(forb) < m:
        raise InsufficientCodewords(f"{a}^{L} words minus {len(forb)} forbidden < {m}")
    out: list[tuple[int, ...]] = []
    for word in itertools.product(range(a), repeat=L):
        if len(out) == m:
            break
        w = bytes(word)
        if w in forb:
            continue
        if radius and any(v in forb for v in _neighbours(w, a)):
            continue
        out.append(word)
    if len(out) < m:
        raise InsufficientCodewords(f"only {len(out)} of {m} codewords available")
    return out


@dataclass
class RelabelBook:
    """Codewords (rows of ``words``): C-words first, then D-words, the last D-word reserved."""

    L: int
    a: int
    c_names: tuple[tuple[int, bytes], ...]
    d_names: tuple[bytes, ...]
    words: np.ndarray
    _c: dict = field(init=False, repr=False, compare=False)
    _d: dict = field(init=False, repr=False, compare=False)
    _w: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.words = np.asarray(self.words, dtype=np.uint8).reshape(-1, self.L)
        if len(self.words) != len(self.c_names) + len(self.d_names) + 1:
            raise ConfigError("word count must be |C| + |D| + 1")
        self._c = {k: i for i, k in enumerate(self.c_names)}
        self._d = {k: len(self.c_names) + i for i, k in enumerate(self.d_names)}
        self._w = {w.tobytes(): i for i, w in enumerate(self.words)}
        if len(self._w) != len(self.words):
            raise ConfigError("codewords must be distinct")

    @property
    def n_c(self) -> int:
        return len(self.c_names)

    @property
    def reserved(self) -> int:
        return len(self.words) - 1

    def column_word(self, height: int, qname: bytes) -> tuple[int, bool]:
        """(word index, exceptional) for a column."""
        i = self._c.get((height, qname))
        if i is not None:
            return i, False
        return self._d.get(qname[:self.L], self.reserved), True

    def lookup(self, w: bytes) -> int:
        return self._w.get(w, -1)

    def to_dict(self):
        return {"L": self.L, "a": self.a,
                "c_names": [[h, q.hex()] for h, q in self.c_names],
                "d_names": [q.hex() for q in self.d_names],
                "words": [w.tobytes().hex() for w in self.words]}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["L"]), int(d["a"]),
                   tuple((int(h), bytes.fromhex(q)) for h, q in d["c_names"]),
                   tuple(bytes.fromhex(q) for q in d["d_names"]),
                   np.array([list(bytes.fromhex(w)) for w in d["words"]], dtype=np.uint8))


@dataclass(frozen=True, eq=False)
class RelabelLayer(Layer):
    tower: KRTower
    source: Partition
    book: RelabelBook
    kind = "relabel"

    def sources(self):
        return [self.source]

    def apply(self, point, lo, hi, labels):
        book, L = self.book, self.book.L
        cols = columns(self.tower, point, lo, hi)
        ok = cols.status == OK
        starts, heights = cols.start[ok], cols.height[ok]
        if starts.size == 0:
            return
        a, b = int(starts[0]), int(starts[-1] + heights[-1] - 1)
        q, _ = self.source.labels(point, a, b)
        q = q[0]
        for s, h in zip(starts.tolist(), heights.tolist()):
            name = q[s - a:s - a + h]
            i, exc = book.column_word(h, name.tobytes())
            seg = np.empty(h, dtype=np.uint8)
            seg[:L] = book.words[i]
            if exc:
                seg[L:] = name[L:]
                c0, c1 = max(s, lo), min(s + h - 1, hi)
            else:
                c0, c1 = max(s, lo), min(s + L - 1, hi)
            if c0 <= c1:
                labels[c0 - lo:c1 - lo + 1] = seg[c0 - s:c1 - s + 1]

    def to_dict(self):
        return {"kind": "relabel", "tower": self.tower.id, "source": partition_key(self.source),
                "book": self.book.to_dict()}


@register_layer("relabel")
def _relabel_layer(d, towers, sources):
    return RelabelLayer(towers[d["tower"]], sources[d["source"]], RelabelBook.from_dict(d["book"]))


@dataclass
class RelabelResult:
    Phat: Partition
    book: RelabelBook
    tower: KRTower
    N: int
    L: int
    capacity: int
    n_columns: int
    name_counts: dict[int, int]
    exceptional_fraction: float

    @property
    def min_window(self) -> int:
        """Smallest decoding half-window n."""
        return self.N + self.L + 1


def generator_relabel(P: Partition, Q: Partition, spec: SystemSpec, epsilon: float, N: int,
                      rng: RngStream, n_columns: int = 100_000, n_block_samples: int = 10_000,
                      base: SetQuery | None = None, scan_budget: int | None = None) -> RelabelResult:
    """Relabel P on an (N, N+1) tower so that Q becomes decodable from short P-hat names.

    The C-book keeps, per column height, the floor(exp(epsilon N / 100)) most
    frequent Q-names among about ``n_columns`` sampled columns.  Forbidden
    blocks come from ``n_block_samples`` independent samples of each of P and Q.
    """
    if P.label_count != Q.label_count:
        raise ConfigError("P and Q must share the label alphabet")
    if not 0 < epsilon <= 1:
        raise ConfigError("epsilon must lie in (0, 1]")
    a = P.label_count
    L = math.ceil(epsilon * N / 3)
    if L >= N:
        raise ConfigError("codewords must be shorter than the columns")
    K = math.floor(math.exp(epsilon * N / 100))
    A = base if base is not None else default_base(spec, N)
    tower = build_tower(spec, A, N, scan_budget, rng.child(0))
    counts = collect_column_names(tower, Q, spec, rng.child(1), n_columns)
    c_names: list[tuple[int, bytes]] = []
    per_h: dict[int, list[tuple[int, bytes]]] = {}
    for (h, name), c in counts.items():
        per_h.setdefault(h, []).append((c, name))
    for h in sorted(per_h):
        ranked = sorted(per_h[h], key=lambda cn: (-cn[0], cn[1]))[:K]
        c_names += [(h, nm) for _, nm in ranked]
    kept = set(c_names)
    lnames = Counter()
    for (h, name), c in counts.items():
        lnames[name[:L]] += c
    qblocks = observed_blocks(Q, spec, L, n_block_samples, rng.child(3))
    d_names = tuple(sorted(set(lnames) | qblocks))
    forbidden = observed_blocks(P, spec, L, n_block_samples, rng.child(2)) | qblocks
    words = codeword_allocator(forbidden, L, len(c_names) + len(d_names) + 1, a, radius=1)
    book = RelabelBook(L, a, tuple(c_names), d_names, np.array(words, dtype=np.uint8))
    Phat = P.with_layers(RelabelLayer(tower, Q, book), name=f"{P.name}+relabel(N={N})")
    total = sum(counts.values())
    exc = sum(c for key, c in counts.items() if key not in kept)
    return RelabelResult(Phat, book, tower, N, L, K, total,
                         {h: len(v) for h, v in sorted(per_h.items())}, exc / max(total, 1))


# ---------------------------------------------------------------------------
# Decoding

_HASH_BASE = np.uint64(0x100000001B3)
_HASH_INV = np.uint64(pow(0x100000001B3, -1, 1 << 64))


def _powers(base: np.uint64, n: int) -> np.ndarray:
    out = np.empty(n, dtype=np.uint64)
    out[0] = 1
    if n > 1:
        out[1:] = base
        with np.errstate(over="ignore"):
            np.cumprod(out, out=out)
    return out


def _word_hash(w: np.ndarray) -> np.uint64:
    with np.errstate(over="ignore"):
        return np.uint64((w.astype(np.uint64) * _powers(_HASH_BASE, len(w))).sum(dtype=np.uint64))


def codeword_matches(x: np.ndarray, book: RelabelBook) -> tuple[np.ndarray, np.ndarray]:
    """Positions p with x[p:p+L] a codeword, and the word index at each.

    Candidates come from a polynomial rolling hash modulo 2**64 and are
    confirmed by direct comparison.
    """
    L = book.L
    n = len(x) - L + 1
    if n <= 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    pw = _powers(_HASH_BASE, len(x))
    inv = _powers(_HASH_INV, n)
    with np.errstate(over="ignore"):
        C = np.zeros(len(x) + 1, dtype=np.uint64)
        np.cumsum(x.astype(np.uint64) * pw, out=C[1:])
        h = (C[L:] - C[:-L]) * inv
    table = np.sort(np.array([_word_hash(w) for w in book.words], dtype=np.uint64))
    cand = np.flatnonzero(np.isin(h, table))
    pos, idx = [], []
    for p in cand.tolist():
        i = book.lookup(x[p:p + L].tobytes())
        if i >= 0:
            pos.append(p)
            idx.append(i)
    return np.asarray(pos, dtype=np.int64), np.asarray(idx, dtype=np.int64)


def unshadowed(pos: np.ndarray, L: int) -> np.ndarray:
    """Mask of matches with no other match in the L - 1 positions before them."""
    keep = np.ones(pos.size, dtype=bool)
    keep[1:] = np.diff(pos) >= L
    return keep


def _read(book: RelabelBook, word: int, off: int, own: int) -> int:
    """Q label at offset ``off`` from a codeword start (``own`` is the label there)."""
    L = book.L
    if word < book.n_c:
        h, q = book.c_names[word]
        return q[off] if off < h else -1
    if off >= L:
        return own
    if word == book.reserved:
        return -1
    return book.d_names[word - book.n_c][off]


def decode_relabel_window(x: np.ndarray, book: RelabelBook) -> int:
    """Q label at the centre of a window of length 2n+1 (or -1 on failure)."""
    x = np.asarray(x, dtype=np.uint8)
    n = (len(x) - 1) // 2
    L = book.L
    pos, idx = codeword_matches(x, book)
    keep = unshadowed(pos, L)
    ok = keep & (pos >= L - 1) & (pos <= n)
    if not ok.any():
        return -1
    k = np.flatnonzero(ok)[-1]
    return _read(book, int(idx[k]), n - int(pos[k]), int(x[n]))


def decode_relabel_segment(labels: np.ndarray, lo: int, times: np.ndarray, n: int,
                           book: RelabelBook) -> np.ndarray:
    """:func:`decode_relabel_window` at every time in ``times`` from one long name.

    ``labels[i]`` is the label at time lo + i and must cover [t - n, t + n].
    """
    L = book.L
    pos, idx = codeword_matches(labels, book)
    keep = unshadowed(pos, L)
    up, ui = pos[keep] + lo, idx[keep]
    out = np.full(times.size, -1, dtype=np.int64)
    k = np.searchsorted(up, times, side="right") - 1
    for j, (t, kk) in enumerate(zip(times.tolist(), k.tolist())):
        if kk < 0 or up[kk] < t - n + L - 1:
            continue
        out[j] = _read(book, int(ui[kk]), t - int(up[kk]), int(labels[t - lo]))
    return out


@dataclass
class RelabelStats:
    decoder_error: ProbEstimate
    exceptional_fraction: float
    n_columns: int
    n_unresolved: int

    def to_dict(self):
        return {"decoder_error": self.decoder_error.to_dict(),
                "exceptional_fraction": self.exceptional_fraction,
                "n_columns": self.n_columns, "n_unresolved": self.n_unresolved}


def evaluate_relabel(res: RelabelResult, Q: Partition, spec: SystemSpec, n: int, n_samples: int,
                     rng: RngStream, plan: SamplingPlan | None = None,
                     n_columns: int = 20_000) -> RelabelStats:
    """Decoder error P(decoded Q(t) != Q(t)) from P-hat on [t - n, t + n].

    The exceptional fraction is measured on fresh columns, independent of
    the ones the book was built from.
    """
    if n < res.min_window:
        raise ConfigError(f"decoding needs n >= {res.min_window}")
    plan = (plan or SamplingPlan()).resolve()
    plan = SamplingPlan("segment", plan.stride, plan.workers, plan.chunk_size)
    book = res.book

    def one(chunk):
        t = chunk.times
        t0, t1 = int(t[0]), int(t[-1])
        lab, unres = res.Phat.labels(chunk.point, t0 - n, t1 + n)
        q, _ = Q.labels(chunk.point, t0, t1)
        dec = decode_relabel_segment(lab[0], t0 - n, t, n, book)
        cs = np.concatenate([[0], np.cumsum(unres[0])])
        i = t - (t0 - n)
        bad = (cs[i + n + 1] - cs[i - n]) > 0
        err = dec != q[0][t - t0]
        return Moments.of(err[~bad], int(bad.sum()))

    parts = map_chunks(spec, n_samples, rng, one, plan)
    est = combine(parts, plan.clustered)
    counts = collect_column_names(res.tower, Q, spec, rng.child(1 << 40), n_columns)
    total = sum(counts.values())
    exc = sum(c for (h, name), c in counts.items() if book.column_word(h, name)[1])
    return RelabelStats(est, exc / max(total, 1), total, est.n_unresolved)
