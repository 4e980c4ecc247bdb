"""Experiment configuration, runners and reports.

An experiment is named by ``ExperimentConfig.experiment`` and runs a fixed
list of checks.  Each check records ``{name, value, ci, threshold, pass}``;
a check whose computation raises a library error is recorded as failed and
the remaining independent checks still run.  Reports are written with sorted
keys and contain nothing that depends on the worker count or the clock, so
the same configuration always yields the same bytes.  Wall-clock timings go
to a separate ``timing.json``.
"""

from __future__ import annotations

import json
import logging
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
from scipy.stats import entropy as _scipy_entropy

from . import estimators as est
from .errors import ConfigError, ErgolabError
from .partitions import interval_partition, partition_distance, sturmian_partition, symbol_partition
from .queries import query_from_dict
from .rng import RngStream
from .sampling import SamplingPlan
from .systems import BernoulliShift, MarkovShift, Rotation, component_paths, sample_point, spec_from_dict
from .towers import build_tower, verify_tower

log = logging.getLogger(__name__)

SQRT2M1 = math.sqrt(2.0) - 1.0
_ROT = {"kind": "rotation", "alpha": SQRT2M1}
_BERN = {"kind": "bernoulli", "probs": [0.5, 0.5]}
_PROD = {"kind": "product", "left": _ROT, "right": _BERN}

# Default system, parameters and main sample count of every experiment.
DEFAULTS: dict[str, dict[str, Any]] = {
    "tower": {"system": _ROT, "samples": 100_000,
              "params": {"base": {"kind": "interval", "lo": 0.0, "hi": 0.003, "component": []},
                         "N": 21}},
    "rosenblatt": {"system": _BERN, "samples": 100_000,
                   "params": {"n": 10, "epsilon": 0.5}},
    "encode-factor": {"system": _PROD, "samples": 100_000,
                      "params": {"n": 840, "epsilon": 0.5, "N": None, "windows": 10_000,
                                 "columns": 100_000}},
    "generator": {"system": _ROT, "samples": 100_000,
                  "params": {"ns": [2, 4, 8, 12], "threshold": 0.05}},
    "relabel": {"system": _PROD, "samples": 100_000,
                "params": {"N": 1500, "epsilon": 0.5, "n": None, "columns": 100_000,
                           "block_samples": 10_000, "threshold": 0.1}},
    "estimator-oracles": {"system": {"kind": "markov", "matrix": [[0.9, 0.1], [0.2, 0.8]]},
                          "samples": 200_000,
                          "params": {"beta_ns": [1, 2, 4, 8], "entropy_n": 8}},
    "properties": {"system": None, "samples": 20_000, "params": {"instances": 20}},
}

EXPERIMENTS = tuple(DEFAULTS)
_FIELDS = {"experiment", "system", "params", "samples", "seed", "workers", "out"}


@dataclass
class ExperimentConfig:
    experiment: str
    system: dict | None = None
    params: dict = field(default_factory=dict)
    samples: int | None = None
    seed: int = 42
    workers: int = 1
    out: str | None = None

    def __post_init__(self):
        if self.experiment not in DEFAULTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        extra = set(self.params) - set(DEFAULTS[self.experiment]["params"])
        if extra:
            raise ConfigError(f"unknown parameters for {self.experiment}: {sorted(extra)}")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        if self.samples is not None and self.samples < 1:
            raise ConfigError("samples must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        extra = set(d) - _FIELDS
        if extra:
            raise ConfigError(f"unknown config fields {sorted(extra)}")
        if "experiment" not in d:
            raise ConfigError("config needs an 'experiment' field")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def resolved(self) -> dict:
        """The configuration echoed in reports (defaults filled in, workers and paths left out)."""
        base = DEFAULTS[self.experiment]
        params = dict(base["params"])
        params.update(self.params)
        return {"experiment": self.experiment,
                "system": self.system if self.system is not None else base["system"],
                "params": params,
                "samples": self.samples if self.samples is not None else base["samples"],
                "seed": self.seed}


@dataclass
class RunReport:
    config: dict
    checks: list[dict] = field(default_factory=list)
    unresolved: dict = field(default_factory=dict)
    artifacts: list[str] = field(default_factory=list)
    details: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c["pass"] for c in self.checks)

    def check(self, name: str, value, threshold, ok: bool, ci=None) -> bool:
        if any(c["name"] == name for c in self.checks):
            raise ValueError(f"check {name!r} recorded twice")
        self.checks.append({"name": name, "value": _plain(value), "ci": _plain(ci),
                            "threshold": _plain(threshold), "pass": bool(ok)})
        return bool(ok)

    def fail(self, names, err: Exception) -> None:
        done = {c["name"] for c in self.checks}
        for name in names:
            if name in done:
                continue
            self.checks.append({"name": name, "value": None, "ci": None, "threshold": None,
                                "pass": False, "error": f"{type(err).__name__}: {err}"})

    def to_dict(self) -> dict:
        return {"config": self.config, "checks": self.checks, "unresolved": self.unresolved,
                "artifacts": self.artifacts, "details": _plain(self.details), "pass": self.passed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def summary(self) -> str:
        lines = [f"{'PASS' if c['pass'] else 'FAIL'}  {c['name']}: value={c['value']} "
                 f"threshold={c['threshold']}" for c in self.checks]
        return "\n".join(lines)


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _ci(e) -> list[float]:
    return [e.lower, e.upper]


@contextmanager
def _guard(rep: RunReport, names):
    """Record ``names`` as failed checks if the block raises a library error."""
    try:
        yield
    except ErgolabError as err:
        log.warning("checks %s failed with %s", names, err)
        rep.fail(names, err)


class _Ctx:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.conf = cfg.resolved()
        self.params = self.conf["params"]
        self.samples = self.conf["samples"]
        self.rng = RngStream(cfg.seed, stream_id=EXPERIMENTS.index(cfg.experiment))
        self.plan = SamplingPlan(workers=cfg.workers)
        self.system = self.conf["system"]
        self.spec = spec_from_dict(self.system) if self.system is not None else None
        self.files: dict[str, str] = {}


def _alpha_of(spec) -> float:
    return spec.component(component_paths(spec, Rotation)[0]).alpha


# ---------------------------------------------------------------------------
# Experiments


def _tower(ctx: _Ctx, rep: RunReport):
    p = ctx.params
    names = ["tower_unresolved", "tower_heights", "tower_level_chi2", "tower_disjointness"]
    with _guard(rep, names):
        N = int(p["N"])
        tower = build_tower(ctx.spec, query_from_dict(p["base"]), N, rng=ctx.rng.child(0))
        r = verify_tower(tower, ctx.samples, ctx.rng.child(1), ctx.plan)
        rep.details["tower"] = {"mu_base": tower.mu_base, "scan_budget": tower.scan_budget,
                                "min_return": tower.min_return, **r.to_dict()}
        rep.unresolved = {"fraction": r.unresolved_fraction, "scan": r.scan_unresolved_fraction,
                          "defective": r.defective_fraction}
        rep.check(names[0], r.unresolved_fraction, 0.001, r.unresolved_fraction <= 0.001)
        outside = sum(c for h, c in r.height_histogram.items() if h not in (N, N + 1))
        rep.check(names[1], sorted(r.height_histogram), [N, N + 1], outside == 0)
        rep.check(names[2], r.level_uniformity_chi2, r.chi2_critical, r.chi2_pass)
        rep.check(names[3], r.disjointness_violations, 0, r.disjointness_violations == 0)
        ctx.files["tower_levels.csv"] = r.level_csv()


def _rosenblatt(ctx: _Ctx, rep: RunReport):
    from .perturbations.markers import marker_positions
    from .perturbations.rosenblatt import evaluate_witness, rosenblatt_breaker

    p = ctx.params
    n, eps = int(p["n"]), float(p["epsilon"])
    P = symbol_partition(2)
    try:
        res = rosenblatt_breaker(P, ctx.spec, n, eps, ctx.rng.child(0))
    except ErgolabError as err:
        rep.fail(["distance", "mu_C", "mu_D", "mu_C_and_D", "witness_gap", "c_agreement",
                  "marker_gaps"], err)
        return
    N = res.witness.N
    rep.details["construction"] = {"N": N, "M": res.tower.N, "mu_base": res.tower.mu_base,
                                   "scan_budget": res.tower.scan_budget}
    with _guard(rep, ["distance"]):
        d = partition_distance(P, res.Q, ctx.spec, ctx.samples, ctx.rng.child(1), ctx.plan)
        rep.check("distance", d.mean, eps, d.upper < eps, _ci(d))
    names = ["mu_C", "mu_D", "mu_C_and_D", "witness_gap", "c_agreement"]
    with _guard(rep, names):
        w = evaluate_witness(res.Q, ctx.spec, res.witness, res.tower, ctx.samples,
                             ctx.rng.child(2), ctx.plan)
        rep.unresolved = {"witness": w.n_unresolved, "compared": w.n_compared}
        rep.check("mu_C", w.muC.mean, [0.30, 0.34], 0.30 <= w.muC.mean <= 0.34, _ci(w.muC))
        rep.check("mu_D", w.muD.mean, [0.30, 0.34], 0.30 <= w.muD.mean <= 0.34, _ci(w.muD))
        rep.check("mu_C_and_D", w.muCD.mean, 0.001, w.muCD.mean <= 0.001, _ci(w.muCD))
        rep.check("witness_gap", w.gap, 0.10, w.gap > 0.10)
        rep.check("c_agreement", w.c_agreement, 0.999, w.c_agreement >= 0.999)
    with _guard(rep, ["marker_gaps"]):
        M = res.tower.N
        x = sample_point(ctx.spec, ctx.rng.child(3))
        lab, _ = res.Q.labels(x, 0, 8 * M)
        gaps = np.diff(marker_positions(lab[0], N))
        bad = int((~np.isin(gaps, [M, M + 1])).sum())
        rep.check("marker_gaps", sorted(set(gaps.tolist())), [M, M + 1], bad == 0 and gaps.size > 0)


def _encode(ctx: _Ctx, rep: RunReport):
    from .perturbations.encoding import encode_factor, evaluate_encoding

    p = ctx.params
    n, eps = int(p["n"]), float(p["epsilon"])
    paths = component_paths(ctx.spec, BernoulliShift)
    P = symbol_partition(2, paths[0])
    Q = sturmian_partition(_alpha_of(ctx.spec), component_paths(ctx.spec, Rotation)[0])
    try:
        res = encode_factor(P, Q, ctx.spec, eps, n, ctx.rng.child(0), N=p["N"],
                            n_columns=int(p["columns"]))
    except ErgolabError as err:
        rep.fail(["code_capacity", "distance", "round_trip", "marker_false_positives"], err)
        return
    cb = res.codebook
    rep.details["construction"] = {"N": cb.N, "L": cb.L, "names": {h: cb.size(h) for h in cb.names},
                                   "columns": res.n_columns, "scan_budget": res.tower.scan_budget,
                                   "N_over_n": cb.N / n, "eps_over_20": eps / 20}
    rep.check("code_capacity", cb.L, eps * n / 5, cb.L <= eps * n / 5)
    with _guard(rep, ["distance"]):
        d = partition_distance(P, res.Pp, ctx.spec, ctx.samples, ctx.rng.child(1), ctx.plan)
        rep.check("distance", d.mean, eps, d.upper < eps, _ci(d))
    with _guard(rep, ["round_trip", "marker_false_positives"]):
        st = evaluate_encoding(res, Q, ctx.spec, int(p["windows"]), ctx.rng.child(2), ctx.plan)
        rep.details["round_trip"] = st.to_dict()
        rep.unresolved = {"windows": st.n_unresolved}
        rep.check("round_trip", st.recovery, 0.99, st.recovery >= 0.99 and st.n_windows > 0)
        rep.check("marker_false_positives", st.false_markers, 0, st.false_markers == 0)


def _generator(ctx: _Ctx, rep: RunReport):
    p = ctx.params
    ns = [int(v) for v in p["ns"]]
    alpha = _alpha_of(ctx.spec)
    path = component_paths(ctx.spec, Rotation)[0]
    P = interval_partition(0.0, 0.5, path)
    Q = sturmian_partition(alpha, path)
    with _guard(rep, ["factor_error", "factor_error_monotone"]):
        errs = [est.factor_approx_error(P, Q, ctx.spec, n, ctx.samples, ctx.rng.child(n), ctx.plan)
                for n in ns]
        rep.details["errors"] = {str(n): e.to_dict() for n, e in zip(ns, errs)}
        last = errs[-1]
        rep.check("factor_error", last.mean, p["threshold"], last.mean <= p["threshold"], _ci(last))
        mono = all(b.mean <= a.mean + a.half_width + b.half_width for a, b in zip(errs, errs[1:]))
        rep.check("factor_error_monotone", [e.mean for e in errs], "non-increasing within CI", mono)


def _relabel(ctx: _Ctx, rep: RunReport):
    from .perturbations.relabel import evaluate_relabel, generator_relabel

    p = ctx.params
    eps, N = float(p["epsilon"]), int(p["N"])
    path_b = component_paths(ctx.spec, BernoulliShift)[0]
    path_r = component_paths(ctx.spec, Rotation)[0]
    P = symbol_partition(2, path_b, offset=1, label_count=3)
    Q = sturmian_partition(_alpha_of(ctx.spec), path_r, labels=(1, 2), label_count=3)
    names = ["factor_error", "decoder_error", "exceptional_fraction", "distance", "subcolumn_count"]
    try:
        res = generator_relabel(P, Q, ctx.spec, eps, N, ctx.rng.child(0), int(p["columns"]),
                                int(p["block_samples"]))
    except ErgolabError as err:
        rep.fail(names, err)
        return
    n = int(p["n"] or res.min_window)
    thr = float(p["threshold"])
    rep.details["construction"] = {"N": N, "L": res.L, "capacity": res.capacity, "n": n,
                                   "names": res.name_counts, "codewords": len(res.book.words),
                                   "build_exceptional_fraction": res.exceptional_fraction}
    with _guard(rep, ["factor_error"]):
        fit = est.factor_fit(res.Phat, Q, ctx.spec, n, ctx.samples, ctx.rng.child(1), ctx.plan)
        rep.details["factor_blocks"] = fit.n_blocks
        rep.check("factor_error", fit.error.mean, thr, fit.error.mean <= thr, _ci(fit.error))
    with _guard(rep, ["decoder_error", "exceptional_fraction"]):
        st = evaluate_relabel(res, Q, ctx.spec, n, ctx.samples, ctx.rng.child(2), ctx.plan)
        e = st.decoder_error
        rep.unresolved = {"decoder": st.n_unresolved}
        rep.check("decoder_error", e.mean, thr, e.mean <= thr, _ci(e))
        rep.check("exceptional_fraction", st.exceptional_fraction, eps / 3,
                  st.exceptional_fraction <= eps / 3)
    with _guard(rep, ["distance"]):
        d = partition_distance(P, res.Phat, ctx.spec, ctx.samples, ctx.rng.child(3), ctx.plan)
        rep.check("distance", d.mean, eps, d.upper < eps, _ci(d))
    most = max(res.name_counts.values(), default=0)
    rep.check("subcolumn_count", most, res.capacity, most <= res.capacity)


def markov_beta(M: np.ndarray, pi: np.ndarray, n: int) -> float:
    """beta(n) = 1/2 sum_i pi_i sum_j |(M^n)_ij - pi_j| of a stationary chain."""
    Mn = np.linalg.matrix_power(M, n)
    return 0.5 * float((pi[:, None] * np.abs(Mn - pi[None, :])).sum())


def markov_entropy_rate(M: np.ndarray, pi: np.ndarray) -> float:
    return float(sum(pi[i] * _scipy_entropy(M[i], base=2) for i in range(len(pi))))


def markov_block_entropy(M: np.ndarray, pi: np.ndarray, n: int) -> float:
    """H(X_0 .. X_(n-1)) / n in bits."""
    return (_scipy_entropy(pi, base=2) + (n - 1) * markov_entropy_rate(M, pi)) / n


def _oracles(ctx: _Ctx, rep: RunReport):
    p = ctx.params
    spec = ctx.spec
    if not isinstance(spec, MarkovShift):
        raise ConfigError("estimator-oracles needs a Markov system")
    M, pi = np.array(spec.matrix), np.array(spec.stationary)
    P = symbol_partition(spec.alphabet)
    for n in p["beta_ns"]:
        name = f"beta_n{n}"
        with _guard(rep, [name]):
            b = est.beta_coefficient(P, spec, int(n), 0, ctx.samples, ctx.rng.child(n), ctx.plan)
            exact = markov_beta(M, pi, int(n))
            rep.check(name, b.mean, {"oracle": exact, "tolerance": 3 * b.half_width},
                      abs(b.mean - exact) <= 3 * b.half_width, _ci(b))
    iid = BernoulliShift((0.5, 0.5))
    with _guard(rep, ["alpha_iid_upper"]):
        br = est.alpha_bracket(symbol_partition(2), iid, 1, 0, 100_000, ctx.rng.child(100), ctx.plan)
        rep.details["alpha_iid"] = br.to_dict()
        rep.check("alpha_iid_upper", br.upper, 0.01, br.upper <= 0.01)
    with _guard(rep, ["dbar_bernoulli"]):
        b1 = est.block_distribution(symbol_partition(2), iid, 1, 100_000, ctx.rng.child(101), ctx.plan)
        b2 = est.block_distribution(symbol_partition(2), BernoulliShift((0.3, 0.7)), 1, 100_000,
                                    ctx.rng.child(102), ctx.plan)
        d = est.dbar_block(b1, b2)
        rep.check("dbar_bernoulli", d, {"target": 0.2, "tolerance": 0.02}, abs(d - 0.2) <= 0.02)
    n = int(p["entropy_n"])
    with _guard(rep, ["entropy_rate", "entropy_block"]):
        h = est.block_entropy(P, spec, n, ctx.samples, ctx.rng.child(103), ctx.plan)
        rate = markov_entropy_rate(M, pi)
        block = markov_block_entropy(M, pi, n)
        rep.details["entropy"] = {"estimate": h.to_dict(), "rate": rate, "block_oracle": block}
        rep.check("entropy_rate", h.mean, {"oracle": rate, "tolerance": 0.02},
                  abs(h.mean - rate) <= 0.02, _ci(h))
        rep.check("entropy_block", h.mean, {"oracle": block, "tolerance": 0.02},
                  abs(h.mean - block) <= 0.02, _ci(h))


def _properties(ctx: _Ctx, rep: RunReport):
    from . import properties as props

    k = int(ctx.params["instances"])
    for j, (name, fn) in enumerate(props.SUITES.items()):
        with _guard(rep, [name]):
            good = sum(bool(fn(ctx.rng.child(1000 * j + i), ctx.samples, ctx.plan))
                       for i in range(k))
            rep.check(name, good, k, good == k)


_RUNNERS: dict[str, Callable[[_Ctx, RunReport], None]] = {
    "tower": _tower,
    "rosenblatt": _rosenblatt,
    "encode-factor": _encode,
    "generator": _generator,
    "relabel": _relabel,
    "estimator-oracles": _oracles,
    "properties": _properties,
}


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    """Run one experiment; write report.json, timing.json and CSV artifacts when ``cfg.out`` is set."""
    ctx = _Ctx(cfg)
    rep = RunReport(ctx.conf)
    t0 = time.perf_counter()
    _RUNNERS[cfg.experiment](ctx, rep)
    rep.artifacts = sorted(ctx.files)
    rep.timing = {"seconds": time.perf_counter() - t0, "workers": cfg.workers}
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in ctx.files.items():
            (out / name).write_text(text)
        (out / "report.json").write_text(rep.to_json())
        (out / "timing.json").write_text(json.dumps(rep.timing, sort_keys=True, indent=2) + "\n")
    return rep
