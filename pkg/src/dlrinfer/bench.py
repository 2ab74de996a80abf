"""Instance batches, experiment runs against the exact oracle, and summaries."""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import DLRError, EmptySummaryError, InvalidConfigError
from .exact import exact_marginals
from .inference.engine import ALGORITHMS, RunConfig, check_algorithm, run_to_convergence
from .model import InstanceConfig, build_ising, load_model, random_ising_instance, save_model
from .sampling import ChainConfig, gibbs_estimate

DEFAULT_ALGORITHMS = ("fn", "fn2", "mf", "mf2", "bp")
COLUMNS = ("instance", "seed", "algorithm", "converged", "iterations", "l1_error", "wall_time",
           "oscillation_amplitude", "cycle_period", "clamp_count", "max_abs_z", "error")


@dataclass(frozen=True)
class Regime:
    name: str = "custom"
    rows: int = 4
    cols: int = 4
    var_theta: float = 0.1
    var_phi: float = 0.1
    instances: int = 200
    base_seed: int = 0

    def __post_init__(self):
        if self.instances < 1:
            raise InvalidConfigError("a regime needs at least one instance")
        InstanceConfig(self.rows, self.cols, self.var_theta, self.var_phi, self.base_seed)

    def instance_config(self, index: int) -> InstanceConfig:
        return InstanceConfig(self.rows, self.cols, self.var_theta, self.var_phi,
                              self.base_seed + index)


def regime(name: str, instances: int = 200, base_seed: int | None = None, **overrides) -> Regime:
    """Named presets: easy = 4x4, variances 0.1 / 0.1; hard = 4x4, variances 4.0 / 0.1."""
    presets = {
        "easy": dict(var_theta=0.1, var_phi=0.1, base_seed=0),
        "hard": dict(var_theta=4.0, var_phi=0.1, base_seed=1_000_000),
        "custom": dict(),
    }
    if name not in presets:
        raise InvalidConfigError(f"unknown regime {name!r}")
    args = dict(presets[name])
    if base_seed is not None:
        args["base_seed"] = base_seed
    args.update({k: v for k, v in overrides.items() if v is not None})
    return Regime(name=name, instances=instances, **args)


def _io(path, exc: OSError) -> OSError:
    return OSError(exc.errno, f"{path}: {exc.strerror or exc}")


def generate_batch(reg: Regime, out_dir) -> Path:
    """Write one model file per instance plus ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise _io(out, exc) from None
    entries = []
    for k in range(reg.instances):
        cfg = reg.instance_config(k)
        model = build_ising(random_ising_instance(cfg))
        name = f"instance_{k:05d}.json"
        path = out / name
        try:
            save_model(model, path, seed=cfg.seed, regime=reg.name, rows=cfg.rows, cols=cfg.cols,
                       var_theta=cfg.var_theta, var_phi=cfg.var_phi)
        except OSError as exc:
            raise _io(path, exc) from None
        entries.append({"index": k, "file": name, "seed": cfg.seed})
    manifest = out / "manifest.json"
    try:
        manifest.write_text(json.dumps({"regime": asdict(reg), "instances": entries}, indent=1))
    except OSError as exc:
        raise _io(manifest, exc) from None
    return manifest


def read_manifest(path) -> list[dict]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise _io(path, exc) from None
    base = path.parent
    return [dict(e, path=str(base / e["file"])) for e in doc["instances"]]


def l1_error(singletons, exact_singletons) -> float:
    """(1/n) sum_i sum_x |b_i(x) - P(x_i = x)|."""
    return float(np.mean([np.abs(np.asarray(b) - p).sum()
                          for b, p in zip(singletons, exact_singletons)]))


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _instance_rows(entry, algorithms, config, with_exact, with_gibbs, gibbs_cfg, done):
    rows = []
    base = {"instance": entry["index"], "seed": entry["seed"]}
    try:
        model = load_model(entry["path"])
        exact = exact_marginals(model).singleton_marginals if (with_exact or with_gibbs) else None
    except (DLRError, OSError, ValueError) as exc:
        return [dict(base, algorithm=a, error=f"{type(exc).__name__}: {exc}")
                for a in algorithms if a not in done]
    for a in algorithms:
        if a in done:
            continue
        row = dict(base, algorithm=a)
        t0 = time.perf_counter()
        try:
            if a == "gibbs":
                cfg = ChainConfig(**dict(gibbs_cfg, seed=_gibbs_seed(gibbs_cfg["seed"], entry["seed"])))
                res = gibbs_estimate(model, cfg)
                b = res.beliefs.singletons
                z = max(float(np.max(np.abs(bi - pi) / se)) if np.all(se > 0) else math.inf
                        for bi, pi, se in zip(b, exact, res.standard_errors))
                row.update(converged=True, iterations=cfg.sweeps, max_abs_z=z)
            else:
                beliefs, rep = run_to_convergence(a, model, config)
                b = beliefs.singletons
                row.update(converged=rep.converged, iterations=rep.iterations,
                           oscillation_amplitude=rep.oscillation_amplitude,
                           cycle_period=rep.cycle_period, clamp_count=rep.clamp_count)
            if exact is not None:
                row["l1_error"] = l1_error(b, exact)
        except DLRError as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        row["wall_time"] = time.perf_counter() - t0
        rows.append(row)
    return rows


def _gibbs_seed(seed: int, instance_seed: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(instance_seed)]).generate_state(1, np.uint64)[0])


def _read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@dataclass
class ExperimentResult:
    path: Path
    rows_written: int
    failures: int


def run_experiment(manifest, algorithms=DEFAULT_ALGORITHMS, config: RunConfig | None = None,
                   with_exact: bool = True, with_gibbs: bool = False, out="results.csv",
                   workers: int = 1, gibbs: dict | None = None) -> ExperimentResult:
    """Run every algorithm on every instance, appending rows to ``out``.

    Rows already present in ``out`` (same instance and algorithm) are skipped,
    so an interrupted run resumes where it stopped.  Failures become rows with
    the ``error`` column set.  ``gibbs`` holds ChainConfig fields plus ``seed``.
    """
    algorithms = [check_algorithm(a) for a in algorithms]
    if with_gibbs:
        algorithms.append("gibbs")
    config = config or RunConfig()
    gibbs_cfg = dict(sweeps=100_000, chains=8, seed=0)
    gibbs_cfg.update(gibbs or {})
    entries = read_manifest(manifest)
    out = Path(out)
    done: dict[int, set] = {}
    if out.exists() and out.stat().st_size > 0:
        for r in _read_rows(out):
            done.setdefault(int(r["instance"]), set()).add(r["algorithm"])
        fh = open(out, "a", newline="")
        writer = csv.DictWriter(fh, COLUMNS)
    else:
        fh = open(out, "w", newline="")
        writer = csv.DictWriter(fh, COLUMNS)
        writer.writeheader()
        fh.flush()
    todo = [e for e in entries if not set(algorithms) <= done.get(e["index"], set())]
    written = failures = 0

    def emit(rows):
        nonlocal written, failures
        for r in rows:
            writer.writerow({c: _fmt(r.get(c)) for c in COLUMNS})
            written += 1
            failures += bool(r.get("error"))
        fh.flush()

    args = [(e, algorithms, config, with_exact, with_gibbs, gibbs_cfg,
             done.get(e["index"], set())) for e in todo]
    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for rows in pool.map(_star_rows, args):
                    emit(rows)
        else:
            for a in args:
                emit(_instance_rows(*a))
    finally:
        fh.close()
    return ExperimentResult(out, written, failures)


def _star_rows(args):
    return _instance_rows(*args)


def canonical_rows(path) -> list[dict]:
    """Rows sorted by (instance, algorithm) with the timing column dropped."""
    rows = _read_rows(path)
    for r in rows:
        r.pop("wall_time", None)
    return sorted(rows, key=lambda r: (int(r["instance"]), r["algorithm"]))


def summarize(path, out_json=None, scatter_dir=None) -> dict:
    """Per-algorithm statistics; error means and std (ddof 0) use converged runs only.

    Non-converged runs are counted and their last-iterate errors summarized
    separately.  With ``scatter_dir`` one two-column text file per algorithm
    holds (algorithm error, BP error) for instances where both converged.
    """
    rows = _read_rows(path)
    if not rows:
        raise EmptySummaryError(f"{path} has no result rows")
    algs = sorted({r["algorithm"] for r in rows}, key=lambda a: (a not in ALGORITHMS, a))
    by = {a: [r for r in rows if r["algorithm"] == a] for a in algs}
    summary = {"algorithms": {}, "scatter": {}}
    conv_err: dict[str, dict[int, float]] = {}
    for a, rs in by.items():
        ok = [r for r in rs if not r["error"] and r["converged"] == "1"]
        bad = [r for r in rs if not r["error"] and r["converged"] != "1"]
        fail = [r for r in rs if r["error"]]
        e_ok = [float(r["l1_error"]) for r in ok if r["l1_error"]]
        e_bad = [float(r["l1_error"]) for r in bad if r["l1_error"]]
        conv_err[a] = {int(r["instance"]): float(r["l1_error"]) for r in ok if r["l1_error"]}
        summary["algorithms"][a] = {
            "runs": len(rs),
            "converged": len(ok),
            "nonconverged": len(bad),
            "failed": len(fail),
            "mean_l1": float(np.mean(e_ok)) if e_ok else None,
            "std_l1": float(np.std(e_ok)) if e_ok else None,
            "nonconverged_mean_l1": float(np.mean(e_bad)) if e_bad else None,
            "nonconverged_std_l1": float(np.std(e_bad)) if e_bad else None,
            "mean_iterations": float(np.mean([int(r["iterations"]) for r in ok])) if ok else None,
        }
    if "bp" in conv_err:
        bp = conv_err["bp"]
        for a, errs in conv_err.items():
            if a == "bp":
                continue
            keys = sorted(set(errs) & set(bp))
            summary["scatter"][a] = [[errs[k], bp[k]] for k in keys]
            if scatter_dir is not None:
                d = Path(scatter_dir)
                d.mkdir(parents=True, exist_ok=True)
                lines = [f"# {a}_l1 bp_l1"] + [f"{errs[k]!r} {bp[k]!r}" for k in keys]
                (d / f"scatter_{a}_vs_bp.txt").write_text("\n".join(lines) + "\n")
    if out_json is not None:
        Path(out_json).write_text(json.dumps(summary, indent=1))
    return summary


def trace_run(instance, algorithm: str, config: RunConfig | None = None, out=None):
    """Residual and WSKL per iteration for one run, written as TSV when ``out`` is given.

    WSKL weights are 1 on singletons (edges for the level-1.5 algorithms,
    which represent no singleton tables).
    """
    from .inference.diagnostics import WsklWeights
    from .inference.engine import algorithm_level

    model = load_model(instance) if not hasattr(instance, "topology") else instance
    a = check_algorithm(algorithm)
    level = algorithm_level(a)
    weights = (WsklWeights.matching(model, 1.5) if level == 1.5
               else WsklWeights.singletons(model))
    beliefs, rep = run_to_convergence(a, model, config, record_wskl=True, weights=weights)
    if out is not None:
        with open(out, "w") as fh:
            fh.write(f"# algorithm {a}\n# converged {int(rep.converged)}\n")
            fh.write(f"# iterations {rep.iterations}\n# cycle_period {rep.cycle_period}\n")
            fh.write("iteration\tresidual\twskl\n")
            for k, (r, w) in enumerate(zip(rep.residual_trace, rep.wskl_trace), start=1):
                fh.write(f"{k}\t{float(r)!r}\t{float(w)!r}\n")
    return beliefs, rep


def oscillation_band(wskl_trace, window: int = 100) -> tuple[float, float]:
    """(min, max) of the last ``window`` WSKL values."""
    tail = np.asarray(wskl_trace)[-window:]
    return float(tail.min()), float(tail.max())
