"""Command line entry point ``ergolab``.

Every subcommand prints a JSON report on stdout (or writes it under
``--out``) and exits with status 0 exactly when all of its checks pass.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import estimators as est
from .errors import ErgolabError
from .harness import EXPERIMENTS, ExperimentConfig, run_experiment
from .partitions import Partition, symbol_partition
from .rng import RngStream
from .sampling import SamplingPlan
from .stats import ProbEstimate
from .systems import spec_from_dict


def _json_arg(text: str):
    """JSON given inline or as a path to a file."""
    p = Path(text)
    if not text.lstrip().startswith(("{", "[")) and p.exists():
        text = p.read_text()
    return json.loads(text)


def _partition(text: str | None, spec) -> Partition:
    if text is None:
        return symbol_partition(spec.alphabet)
    return Partition.from_dict(_json_arg(text))


def _common(p: argparse.ArgumentParser, experiment: bool = True) -> None:
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None, help="output directory (report.json, timing.json, CSVs)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ergolab", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    e = sub.add_parser("experiment", help="run a named experiment")
    e.add_argument("name", choices=EXPERIMENTS)
    e.add_argument("--config", default=None, help="config JSON (inline or file)")
    _common(e)

    t = sub.add_parser("tower", help="build and verify a tower")
    t.add_argument("--system", default=None)
    t.add_argument("--base", default=None, help="base set query JSON")
    t.add_argument("--N", type=int, default=None)
    _common(t)

    r = sub.add_parser("rosenblatt", help="marker perturbation and its witness sets")
    r.add_argument("--system", default=None)
    r.add_argument("--n", type=int, default=None)
    r.add_argument("--eps", type=float, default=None)
    _common(r)

    c = sub.add_parser("encode", help="encode a Sturmian factor into a binary partition")
    c.add_argument("--system", default=None)
    c.add_argument("--n", type=int, default=None)
    c.add_argument("--eps", type=float, default=None)
    c.add_argument("--windows", type=int, default=None)
    _common(c)

    s = sub.add_parser("estimate", help="single estimator on a system and partition")
    s.add_argument("what", choices=("alpha", "beta", "entropy", "dbar", "factor-error"))
    s.add_argument("--system", required=True)
    s.add_argument("--partition", default=None, help="partition JSON (default: symbol at time 0)")
    s.add_argument("--system2", default=None, help="second system (dbar)")
    s.add_argument("--partition2", default=None, help="second partition (dbar, factor-error target)")
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--k", type=int, default=0)
    _common(s)
    return ap


def _config(args) -> ExperimentConfig:
    if args.command == "experiment":
        d = _json_arg(args.config) if args.config else {"experiment": args.name}
        d.setdefault("experiment", args.name)
        if d["experiment"] != args.name:
            raise ErgolabError(f"config is for {d['experiment']!r}, not {args.name!r}")
        params = {}
    else:
        name = {"tower": "tower", "rosenblatt": "rosenblatt", "encode": "encode-factor"}[args.command]
        d = {"experiment": name}
        if args.system:
            d["system"] = _json_arg(args.system)
        params = {}
        if args.command == "tower":
            if args.base:
                params["base"] = _json_arg(args.base)
            if args.N:
                params["N"] = args.N
        else:
            if args.n:
                params["n"] = args.n
            if args.eps:
                params["epsilon"] = args.eps
            if getattr(args, "windows", None):
                params["windows"] = args.windows
    if params:
        d["params"] = {**d.get("params", {}), **params}
    for key in ("seed", "samples", "out"):
        if getattr(args, key) is not None:
            d[key] = getattr(args, key)
    d["workers"] = args.workers
    return ExperimentConfig.from_dict(d)


def _estimate(args) -> tuple[dict, bool]:
    spec = spec_from_dict(_json_arg(args.system))
    P = _partition(args.partition, spec)
    n_samples = args.samples or 100_000
    rng = RngStream(args.seed if args.seed is not None else 42)
    plan = SamplingPlan(workers=args.workers)
    out: dict = {"estimator": args.what, "n": args.n, "samples": n_samples}
    if args.what == "alpha":
        out["result"] = est.alpha_bracket(P, spec, args.n, args.k, n_samples, rng, plan).to_dict()
    elif args.what == "beta":
        out["result"] = est.beta_coefficient(P, spec, args.n, args.k, n_samples, rng, plan).to_dict()
    elif args.what == "entropy":
        out["result"] = est.block_entropy(P, spec, args.n, n_samples, rng, plan).to_dict()
    elif args.what == "dbar":
        spec2 = spec_from_dict(_json_arg(args.system2)) if args.system2 else spec
        P2 = _partition(args.partition2, spec2)
        b1 = est.block_distribution(P, spec, args.n, n_samples, rng.child(0), plan)
        b2 = est.block_distribution(P2, spec2, args.n, n_samples, rng.child(1), plan)
        out["result"] = est.dbar_block(b1, b2)
    else:
        if args.partition2 is None:
            raise ErgolabError("factor-error needs --partition2 (the target partition)")
        Q = _partition(args.partition2, spec)
        out["result"] = est.factor_approx_error(P, Q, spec, args.n, n_samples, rng, plan).to_dict()
    return out, True


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "estimate":
            out, ok = _estimate(args)
            text = json.dumps(out, sort_keys=True, indent=2) + "\n"
            if args.out:
                Path(args.out).mkdir(parents=True, exist_ok=True)
                (Path(args.out) / "report.json").write_text(text)
            sys.stdout.write(text)
            return 0 if ok else 1
        rep = run_experiment(_config(args))
    except (ErgolabError, json.JSONDecodeError, OSError) as err:
        print(f"ergolab: error: {err}", file=sys.stderr)
        return 2
    sys.stdout.write(rep.to_json())
    print(rep.summary(), file=sys.stderr)
    return 0 if rep.passed else 1


if __name__ == "__main__":
    sys.exit(main())
