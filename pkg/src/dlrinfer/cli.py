"""Command line entry point: ``dlrinfer gen|run|summarize|trace|phase``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

from . import bench, phase
from .errors import DLRError
from .inference.engine import ALGORITHMS, RunConfig

log = logging.getLogger("dlrinfer")


def _algs(text: str, allowed) -> list[str]:
    if text == "all":
        return list(allowed)
    out = [a.strip().lower() for a in text.split(",") if a.strip()]
    bad = [a for a in out if a not in allowed]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown algorithm(s) {bad}; choose from {list(allowed)}")
    return out


def _run_config(args) -> RunConfig:
    return RunConfig(tolerance=args.tol, max_iterations=args.max_iter, schedule=args.schedule,
                     damping=args.damping)


def cmd_gen(args) -> int:
    reg = bench.regime(args.regime, instances=args.n, base_seed=args.seed, rows=args.rows,
                       cols=args.cols, var_theta=args.var_theta, var_phi=args.var_phi)
    path = bench.generate_batch(reg, args.out)
    log.info("wrote %d instances, manifest %s", reg.instances, path)
    return 0


def cmd_run(args) -> int:
    gibbs = dict(sweeps=args.gibbs_sweeps, chains=args.gibbs_chains, seed=args.seed)
    res = bench.run_experiment(args.manifest, _algs(args.algs, bench.DEFAULT_ALGORITHMS + ("cp",)),
                               _run_config(args), with_exact=args.exact, with_gibbs=args.gibbs,
                               out=args.out, workers=args.workers, gibbs=gibbs)
    log.info("wrote %d rows to %s (%d failed)", res.rows_written, res.path, res.failures)
    return 2 if res.failures else 0


def cmd_summarize(args) -> int:
    s = bench.summarize(args.results, out_json=args.out, scatter_dir=args.scatter_dir)
    if args.out is None:
        print(json.dumps(s["algorithms"], indent=1))
    return 0


def cmd_trace(args) -> int:
    _, rep = bench.trace_run(args.instance, args.alg, _run_config(args), out=args.out)
    log.info("%s: converged=%s after %d iterations", rep.algorithm, rep.converged, rep.iterations)
    return 0


def cmd_phase(args) -> int:
    cfg = phase.CriticalSearchConfig(t_low=args.t_low, t_high=args.t_high,
                                     t_tolerance=args.t_tol)
    rows = phase.critical_table(_algs(args.alg, phase.ALGORITHMS), cfg)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["algorithm", "t_c", "reference", "delta"])
        for a, tc, ref, d in rows:
            w.writerow([a, f"{tc:.6f}", "" if ref is None else ref, "" if d is None else f"{d:.6f}"])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def _add_run_opts(p):
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=1_000_000)
    p.add_argument("--schedule", choices=("parallel", "sequential"), default="parallel")
    p.add_argument("--damping", type=float, default=0.0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dlrinfer", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a batch of random Ising instances")
    p.add_argument("--regime", choices=("easy", "hard", "custom"), default="easy")
    p.add_argument("--instances", "--n", dest="n", type=int, default=200)
    p.add_argument("--seed", type=int, default=None, help="base seed (instance k uses seed + k)")
    p.add_argument("--rows", type=int, default=None)
    p.add_argument("--cols", type=int, default=None)
    p.add_argument("--var-theta", type=float, default=None)
    p.add_argument("--var-phi", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", help="run algorithms on a generated batch")
    p.add_argument("--manifest", required=True)
    p.add_argument("--algs", default="fn,fn2,cp,mf,mf2,bp")
    p.add_argument("--exact", action="store_true", help="compute errors against exact marginals")
    p.add_argument("--gibbs", action="store_true", help="add a Gibbs sampling row per instance")
    p.add_argument("--gibbs-sweeps", type=int, default=100_000)
    p.add_argument("--gibbs-chains", type=int, default=8)
    p.add_argument("--seed", type=int, default=0, help="seed for the Gibbs chains")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    _add_run_opts(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("summarize", help="aggregate a results file")
    p.add_argument("--in", dest="results", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--scatter-dir", default=None)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("trace", help="residual and WSKL per iteration for one instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--alg", required=True, choices=ALGORITHMS)
    p.add_argument("--out", required=True)
    _add_run_opts(p)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("phase", help="critical temperatures on the homogeneous grid")
    p.add_argument("--alg", default="all")
    p.add_argument("--t-low", type=float, default=1.5)
    p.add_argument("--t-high", type=float, default=5.0)
    p.add_argument("--t-tol", type=float, default=1e-3)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_phase)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (argparse.ArgumentTypeError, DLRError, OSError, ValueError) as exc:
        print(f"dlrinfer: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
