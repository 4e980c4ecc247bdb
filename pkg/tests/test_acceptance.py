"""Acceptance criteria, each run at full scale through the experiment harness.

Every criterion prints one ``PASS``/``FAIL`` line (collected in the terminal
summary) before asserting.
"""

import time

import pytest

from conftest import record
from ergolab.harness import ExperimentConfig, run_experiment

pytestmark = pytest.mark.slow

BERNOULLI_TOWER = {
    "experiment": "tower",
    "system": {"kind": "bernoulli", "probs": [0.5, 0.5]},
    "params": {"base": {"kind": "word", "word": [1] + [0] * 16}, "N": 21},
}
CONFIGS = {
    "tower-rotation": {"experiment": "tower"},
    "tower-bernoulli": BERNOULLI_TOWER,
    "rosenblatt": {"experiment": "rosenblatt"},
    "encode-factor": {"experiment": "encode-factor"},
    "generator": {"experiment": "generator"},
    "relabel": {"experiment": "relabel"},
    "estimator-oracles": {"experiment": "estimator-oracles"},
    "properties": {"experiment": "properties"},
}
_RUNS: dict[tuple[str, int], tuple[str, float, dict]] = {}


def run(key: str, workers: int = 1):
    """(report JSON, seconds, report dict) of a config, computed once per worker count."""
    if (key, workers) not in _RUNS:
        t0 = time.perf_counter()
        rep = run_experiment(ExperimentConfig.from_dict({**CONFIGS[key], "workers": workers}))
        _RUNS[key, workers] = (rep.to_json(), time.perf_counter() - t0, rep.to_dict())
    return _RUNS[key, workers]


def checks(rep: dict) -> dict:
    return {c["name"]: c for c in rep["checks"]}


def fmt(c: dict) -> str:
    v = c["value"]
    if isinstance(v, float):
        v = f"{v:.4g}"
    return f"{c['name']}={v}{'' if c['pass'] else '(FAIL)'}"


def verdict(k: int, title: str, cs: list[dict], seconds: float, target: float) -> bool:
    ok = all(c["pass"] for c in cs) and seconds < target
    body = ", ".join(fmt(c) for c in cs)
    record(f"criterion {k} {'PASS' if ok else 'FAIL'} [{title}] {body}; "
           f"{seconds:.1f}s (target < {target:.0f}s)")
    return ok


def test_criterion_1_tower_lemma():
    cs, secs = [], 0.0
    for key in ("tower-rotation", "tower-bernoulli"):
        _, s, rep = run(key)
        secs += s
        cs += [dict(c, name=f"{key.split('-')[1]}.{c['name']}") for c in rep["checks"]]
    assert verdict(1, "tower lemma", cs, secs, 60)


def test_criterion_2_rosenblatt_breaker():
    _, s, rep = run("rosenblatt")
    assert {"distance", "mu_C", "mu_D", "mu_C_and_D", "witness_gap"} <= set(checks(rep))
    assert verdict(2, "rosenblatt breaker", rep["checks"], s, 300)


def test_criterion_3_factor_encoding():
    _, s, rep = run("encode-factor")
    resolved = rep["details"]["round_trip"]["n_windows"]
    windows = {"name": "resolved_windows", "value": resolved, "pass": resolved >= 10_000}
    cs = rep["checks"] + [windows]
    assert verdict(3, "factor encoding", cs, s, 600)


def test_criterion_4_estimator_oracles():
    _, s, rep = run("estimator-oracles")
    assert {"alpha_iid_upper", "dbar_bernoulli", "entropy_rate"} <= set(checks(rep))
    assert verdict(4, "estimator oracles", rep["checks"], s, 120)


def test_criterion_5_generator_behavior():
    _, s, rep = run("generator")
    assert verdict(5, "generator behavior", rep["checks"], s, 120)


def test_criterion_6_generator_relabeling():
    _, s, rep = run("relabel")
    assert {"factor_error", "exceptional_fraction", "distance"} <= set(checks(rep))
    assert verdict(6, "generator relabeling", rep["checks"], s, 600)


def test_criterion_7_property_suites():
    _, s, rep = run("properties")
    assert len(rep["checks"]) == 5
    assert verdict(7, "property suites", rep["checks"], s, 300)


def test_criterion_8_reproducibility():
    cs, secs = [], 0.0
    for key in CONFIGS:
        one, s1, _ = run(key, 1)
        eight, s8, _ = run(key, 8)
        again = run_experiment(ExperimentConfig.from_dict({**CONFIGS[key], "workers": 1})).to_json()
        same = one == eight == again
        cs.append({"name": key, "value": "identical" if same else "differs", "pass": same})
        secs += s8
    ok = all(c["pass"] for c in cs)
    record(f"criterion 8 {'PASS' if ok else 'FAIL'} [reproducibility] "
           + ", ".join(fmt(c) for c in cs) + f"; workers=8 reruns took {secs:.1f}s")
    assert ok
