"""Experiment harness: problem generation, the six-algorithm comparison, CSV/JSON output.

Usage::

    ralscp-bench run --config exp.json [--seed N] [--out-dir DIR] [--max-iter N] [--tol X]
    ralscp-bench timing --config exp.json
    ralscp-bench plot-data --glob 'out/trace_*.csv' --out long.csv

Exit status is 0 on success, 2 when any trial ended in numerical failure and
1 on usage or I/O errors.
"""
from __future__ import annotations

import argparse
import csv
import glob as globlib
import hashlib
import json
import logging
import os
import re
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import diagnostics
from .solvers import ALGORITHMS, LambdaSchedule, Problem, SolverConfig, run
from .tensor_core import FactorSet, random_cp_problem, read_tensor

log = logging.getLogger(__name__)

TRACE_HEADER = ["iter", "err_sq", "f_val", "grad_norm", "lambda", "accel_applied", "elapsed_ms"]
TIMING_FIELDS = frozenset({"median_wall_time", "wall_times", "elapsed_ms"})


def _g(v) -> str:
    return f"{float(v):.17g}"


@dataclass
class ExperimentConfig:
    problem: dict = field(default_factory=lambda: {"kind": "random-dense", "dims": [10, 10, 10], "r": 10})
    algorithms: List[str] = field(default_factory=lambda: list(ALGORITHMS))
    solver: dict = field(default_factory=dict)
    trials: int = 20
    output_dir: str = "bench_out"
    jobs: int = 1
    warmup: bool = True

    def __post_init__(self):
        if not self.algorithms:
            raise ValueError("at least one algorithm is required")
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown:
            raise ValueError(f"unknown algorithms: {sorted(unknown)}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if "path" not in self.problem:
            dims = self.problem.get("dims", [10, 10, 10])
            if len(dims) != 3 or min(dims) < 1:
                raise ValueError(f"dims must be three positive integers, got {dims}")
        if int(self.problem.get("r", 1)) < 1:
            raise ValueError("r must be >= 1")

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            raw = json.load(fh)
        known = {f for f in cls.__dataclass_fields__}
        extra = set(raw) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def base_seed(self) -> int:
        return int(self.problem.get("seed", 0))


def solver_config(alg: str, solver: dict, seed: int = 0) -> SolverConfig:
    """Build the :class:`SolverConfig` of one algorithm from the ``solver`` config block.

    ``lambda0`` sets the constant weight of ``rals``/``rals-a``;
    ``decreasing_schedule`` (a dict of :class:`LambdaSchedule` fields)
    overrides the default geometric decay of ``rals-l``/``rals-al``.
    """
    opts = dict(solver)
    lambda0 = float(opts.pop("lambda0", 1.0))
    dec = opts.pop("decreasing_schedule", None)
    if alg in ("rals-l", "rals-al"):
        schedule = LambdaSchedule(**dec) if dec else LambdaSchedule.decreasing()
    elif alg in ("rals", "rals-a"):
        schedule = LambdaSchedule("constant", lambda0)
    else:
        schedule = None
    allowed = {"tol", "max_iter", "accel_alpha", "accel_q", "pinv_threshold", "accel_safeguard"}
    extra = set(opts) - allowed
    if extra:
        raise ValueError(f"unknown solver options: {sorted(extra)}")
    return SolverConfig(algorithm=alg, schedule=schedule, seed=seed, **opts)


def make_problem(problem: dict, trial_seed: int):
    """Tensor and initial guess for one trial."""
    r = int(problem.get("r", 1))
    if "path" in problem:
        t = read_tensor(problem["path"])
        rng = np.random.default_rng(np.random.SeedSequence(trial_seed).spawn(2)[1])
        x0 = FactorSet(*(rng.standard_normal((n, r)) for n in t.dims))
        return t, x0
    kind = problem.get("kind", "random-dense")
    t, x0, gen = random_cp_problem(
        problem.get("dims", [10, 10, 10]),
        r,
        kind,
        trial_seed,
        collinearity=float(problem.get("collinearity", 0.9)),
        return_generators=True,
    )
    if problem.get("init", "random") == "generating":
        if gen is None:
            raise ValueError("init='generating' needs an exact-rank or swamp problem")
        x0 = gen
    return t, x0


def write_trace_csv(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in trace.records:
            w.writerow(
                [r.n, _g(r.err_sq), _g(r.f_val), _g(r.grad_norm), _g(r.lambda_used),
                 int(r.accel_applied), _g(1000.0 * r.elapsed)]
            )


def _run_trial(args):
    cfg_dict, trial, out_dir = args
    cfg = ExperimentConfig(**cfg_dict)
    seed = cfg.base_seed + trial
    t, x0 = make_problem(cfg.problem, seed)
    p = Problem(t)
    results = {}
    for alg in cfg.algorithms:
        scfg = solver_config(alg, cfg.solver, seed)
        t0 = time.perf_counter()
        trace = run(p, x0, scfg)
        wall = time.perf_counter() - t0
        write_trace_csv(Path(out_dir) / f"trace_{alg}_{trial}.csv", trace)
        summary = diagnostics.trace_summary(trace)
        summary.pop("descent_violations", None)
        summary["wall_time"] = wall
        results[alg] = summary
    return trial, results


def _git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _median(values):
    return float(np.median(values)) if len(values) else None


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run every algorithm on every trial and write traces plus ``report.json``.

    Trial ``k`` uses seed ``base_seed + k`` for both the tensor and the
    initial guess; all algorithms of a trial share them. Returns the report
    dictionary.
    """
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg_dict = cfg.to_dict()

    if cfg.warmup:
        # untimed short run so imports and BLAS initialisation stay out of the medians
        t, x0 = make_problem(cfg.problem, cfg.base_seed)
        run(t, x0, solver_config(cfg.algorithms[0], {**cfg.solver, "max_iter": 5}))

    jobs = [(cfg_dict, k, str(out_dir)) for k in range(cfg.trials)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            per_trial = dict(ex.map(_run_trial, jobs))
    else:
        per_trial = dict(map(_run_trial, jobs))

    algorithms = {}
    failures = 0
    for alg in cfg.algorithms:
        rows = [per_trial[k][alg] for k in range(cfg.trials)]
        statuses: Dict[str, int] = {}
        for row in rows:
            statuses[row["status"]] = statuses.get(row["status"], 0) + 1
        failures += statuses.get("numerical-failure", 0)
        done = [row for row in rows if row["status"] != "numerical-failure"]
        q = [row["rate"]["q_fit"] for row in done if row["rate"]]
        algorithms[alg] = {
            "iterations": [row["iterations"] for row in rows],
            "median_iterations": _median([row["iterations"] for row in done]),
            "wall_times": [row["wall_time"] for row in rows],
            "median_wall_time": _median([row["wall_time"] for row in done]),
            "median_q_fit": _median(q),
            "plateau_iterations": [row["plateau_iterations"] for row in rows],
            "runs_with_plateau": sum(1 for row in rows if row["plateaus"]),
            "status_counts": statuses,
        }

    inputs = json.dumps(cfg_dict, sort_keys=True).encode()
    if "path" in cfg.problem:
        inputs += Path(cfg.problem["path"]).read_bytes()
    report = {
        "algorithms": algorithms,
        "numerical_failures": failures,
        "provenance": {
            "config": cfg_dict,
            "seed": cfg.base_seed,
            "input_hash": _git_blob_hash(inputs),
        },
    }
    with open(out_dir / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report


def strip_timing(obj):
    """Copy of a report with wall-clock fields removed (for determinism checks)."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_FIELDS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def timing_table(cfg: ExperimentConfig, report: Optional[dict] = None):
    """Median wall time and iteration count per algorithm, in the canonical column order.

    Writes ``timing.csv`` to the output directory and returns ``(text, rows)``.
    """
    if report is None:
        report = run_experiment(cfg)
    algs = [a for a in ALGORITHMS if a in report["algorithms"]]
    rows = []
    for a in algs:
        entry = report["algorithms"][a]
        rows.append({
            "algorithm": a,
            "median_wall_time_s": entry["median_wall_time"],
            "median_iterations": entry["median_iterations"],
        })
    lines = []
    if cfg.trials < 3:
        msg = f"only {cfg.trials} trial(s): medians equal single samples"
        warnings.warn(msg)
        lines.append(f"warning: {msg}")
    lines.append("{:<18}".format("") + "".join(f"{a:>12}" for a in algs))
    fmt = lambda v, spec: "n/a" if v is None else format(v, spec)
    lines.append("{:<18}".format("median time [s]") + "".join(f"{fmt(r['median_wall_time_s'], '.4f'):>12}" for r in rows))
    lines.append("{:<18}".format("median iters") + "".join(f"{fmt(r['median_iterations'], '.1f'):>12}" for r in rows))
    text = "\n".join(lines)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", "median_wall_time_s", "median_iterations"])
        for r in rows:
            w.writerow([r["algorithm"],
                        "" if r["median_wall_time_s"] is None else _g(r["median_wall_time_s"]),
                        "" if r["median_iterations"] is None else _g(r["median_iterations"])])
    return text, rows


_TRACE_NAME = re.compile(r"trace_(?P<alg>.+)_(?P<trial>\d+)\.csv$")


def plot_data(paths: Sequence, out) -> int:
    """Concatenate trace CSVs into long format ``algorithm,iteration,err_sq``.

    Values are copied as text, so they match the source bit for bit.
    Returns the number of data rows written.
    """
    paths = [Path(p) for p in paths]
    if not paths:
        raise FileNotFoundError("no trace files given")
    n = 0
    with open(out, "w", newline="") as fo:
        w = csv.writer(fo, lineterminator="\n")
        w.writerow(["algorithm", "iteration", "err_sq"])
        for p in paths:
            m = _TRACE_NAME.search(p.name)
            alg = m.group("alg") if m else p.stem
            with open(p, newline="") as fi:
                rd = csv.DictReader(fi)
                for row in rd:
                    w.writerow([alg, row["iter"], row["err_sq"]])
                    n += 1
    return n


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        cfg.problem = {**cfg.problem, "seed": args.seed}
    if args.out_dir is not None:
        cfg.output_dir = args.out_dir
    if args.max_iter is not None:
        cfg.solver = {**cfg.solver, "max_iter": args.max_iter}
    if args.tol is not None:
        cfg.solver = {**cfg.solver, "tol": args.tol}
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ralscp-bench", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "timing"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment JSON file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir")
        p.add_argument("--max-iter", type=int)
        p.add_argument("--tol", type=float)
    p = sub.add_parser("plot-data")
    p.add_argument("--glob", required=True, help="pattern matching trace CSV files")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        if args.command == "plot-data":
            paths = sorted(globlib.glob(args.glob))
            n = plot_data(paths, args.out)
            log.info("wrote %d rows to %s", n, args.out)
            return 0
        cfg = _apply_overrides(ExperimentConfig.from_json(args.config), args)
        if args.command == "run":
            report = run_experiment(cfg)
            log.info("report written to %s", os.path.join(cfg.output_dir, "report.json"))
        else:
            report = run_experiment(cfg)
            text, _ = timing_table(cfg, report)
            print(text)
    except (OSError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        log.error("error: %s", exc)
        return 1
    return 2 if report["numerical_failures"] else 0


if __name__ == "__main__":
    sys.exit(main())
