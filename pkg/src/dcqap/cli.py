"""Command-line interface: ``dcqap solve | bench | validate | probe``.

Exit codes: 0 success, 1 usage error, 2 I/O or parse error, 3 numerical or
consistency failure, 4 size-guard refusal.

Instance arguments may be file paths, names of files inside the directory
given by ``$DCQAP_DATA_DIR``, or names of the bundled QAPLIB instances.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional

import numpy as np

from .alm import AlmConfig
from .epalm import EpalmConfig, epalm_solve
from .instance import (
    ConsistencyError,
    ParseError,
    Permutation,
    QapInstance,
    bundled_instance,
    bundled_names,
    infeasibility,
    known_best_values,
    load_dat,
    objective,
    parse_sln,
)
from .oracle import GuardError, brute_force, error_bound_probe, exact_penalty_probe

DATA_DIR_ENV = "DCQAP_DATA_DIR"
CSV_COLUMNS = ("Prob.", "Optval", "Obj", "gap%", "infeas", "time")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC, EXIT_GUARD = 0, 1, 2, 3, 4

log = logging.getLogger("dcqap")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# instance resolution


def resolve_instance(ref: str, best_known: Optional[float] = None) -> QapInstance:
    """Load ``ref`` as a path, then from ``$DCQAP_DATA_DIR``, then from the bundled set."""
    path = Path(ref)
    candidates = [path]
    data_dir = os.environ.get(DATA_DIR_ENV)
    if data_dir:
        candidates += [Path(data_dir) / ref, Path(data_dir) / f"{ref}.dat"]
    for c in candidates:
        if c.is_file():
            return load_dat(c, best_known)
    if path.suffix == "" and ref in bundled_names():
        inst = bundled_instance(ref)
        return inst if best_known is None else inst.with_best_known(best_known)
    raise FileNotFoundError(f"instance {ref!r} not found (checked path, ${DATA_DIR_ENV}, bundled set)")


# ---------------------------------------------------------------------------
# report formatting


def csv_row(rep: dict) -> list:
    gap = rep.get("gap_pct")
    best = known_best_values().get(rep["instance"]) if rep.get("optval") is None else rep["optval"]
    return [
        rep["instance"],
        "" if best is None else f"{best:g}",
        f"{rep['obj']:g}",
        "" if gap is None else f"{gap:.2f}",
        f"{rep['infeas']:.1e}",
        f"{rep['time_s']:.1f}",
    ]


def format_reports(records: List[dict], fmt: str) -> str:
    if fmt == "json":
        return json.dumps(records, indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec in records:
        w.writerow(csv_row(rec))
    return buf.getvalue()


def _emit(text: str, output: Optional[str]) -> None:
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# solver configuration from flags


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    d = EpalmConfig()
    p.add_argument("--variant", choices=("epalm", "epalm1"), default=d.variant)
    p.add_argument("--local-search", action="store_true", help="round and polish every iterate")
    p.add_argument("--m", type=int, default=d.m, help="rows of the factor (capped at n^2)")
    p.add_argument("--l-max", type=int, default=d.l_max)
    p.add_argument("--rho0", type=float, default=d.rho0)
    p.add_argument("--rho-max", type=float, default=d.rho_max)
    p.add_argument("--eps1", type=float, default=d.eps1)
    p.add_argument("--eps2", type=float, default=d.eps2)
    p.add_argument("--tau1", type=float, default=d.tau1)
    p.add_argument("--tau-floor", type=float, default=d.tau_floor)
    p.add_argument("--varsigma", type=float, default=d.varsigma)
    p.add_argument("--time-limit", type=float, default=None, dest="time_limit_s",
                   help="soft wall-clock limit in seconds, checked between MM cycles")
    p.add_argument("--seeds", "--seed", type=int, nargs="+", default=[0], dest="seeds")
    p.add_argument("--best-known", type=float, default=None)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--output", default=None)


def _config_from(args, seed: int) -> EpalmConfig:
    return EpalmConfig(
        m=args.m, l_max=args.l_max, rho0=args.rho0, rho_max=args.rho_max, eps1=args.eps1,
        eps2=args.eps2, tau1=args.tau1, tau_floor=args.tau_floor, varsigma=args.varsigma,
        seed=seed, variant=args.variant, local_search=args.local_search,
        time_limit_s=args.time_limit_s, alm=AlmConfig(),
    )


def _solve_one(job):
    inst, cfg = job
    rep = epalm_solve(inst, cfg)
    if not np.isfinite(rep.obj):
        raise FloatingPointError(f"non-finite objective for {inst.name}")
    return rep.to_record()


def _run_jobs(jobs, workers: int) -> List[dict]:
    if workers <= 1 or len(jobs) <= 1:
        records = [_solve_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_solve_one, jobs))
    return sorted(records, key=lambda r: (r["instance"], r["seed"]))


# ---------------------------------------------------------------------------
# commands


def cmd_solve(args) -> int:
    jobs = []
    for ref in args.instances:
        inst = resolve_instance(ref, args.best_known)
        jobs += [(inst, _config_from(args, s)) for s in args.seeds]
    records = _run_jobs(jobs, getattr(args, "workers", 1))
    _emit(format_reports(records, args.format), args.output)
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.format == "json" and args.output is None and not args.json:
        args.format = "csv"
    return cmd_solve(args)


def cmd_validate(args) -> int:
    inst = resolve_instance(args.instance)
    with open(args.sln, "rb") as fh:
        rec = parse_sln(fh, inst)
    out = {
        "instance": inst.name,
        "status": "consistent",
        "value": rec.value,
        "orientation": rec.orientation,
        "permutation": [int(i) + 1 for i in rec.perm],
    }
    if args.perm:
        perm = Permutation([int(t) - 1 for t in args.perm])
        if perm.n != inst.n:
            raise ConsistencyError(f"permutation has {perm.n} entries, instance has n={inst.n}")
        val = objective(inst, perm)
        out["candidate_value"] = val
        out["candidate_infeas"] = infeasibility(perm.matrix())
        out["candidate_gap_pct"] = (val - rec.value) / rec.value * 100.0 if rec.value else None
    sys.stdout.write(json.dumps(out) + "\n")
    return EXIT_OK


def cmd_probe(args) -> int:
    if args.kind == "error-bound":
        rep = error_bound_probe(args.n, args.samples, args.seed, args.radius).to_record()
    elif args.kind == "exact-penalty":
        inst = resolve_instance(args.instance) if args.instance else _random_instance(args.n, args.seed)
        rep = exact_penalty_probe(inst, multistarts=args.multistarts, seed=args.seed).to_record()
    else:
        inst = resolve_instance(args.instance) if args.instance else _random_instance(args.n, args.seed)
        perm, val = brute_force(inst)
        rep = {"instance": inst.name, "value": val, "permutation": [int(i) + 1 for i in perm]}
    _emit(json.dumps(rep, indent=2) + "\n", args.output)
    return EXIT_OK


def _random_instance(n: int, seed: int) -> QapInstance:
    rng = np.random.default_rng(seed)
    A = rng.integers(0, 10, (n, n))
    B = rng.integers(0, 10, (n, n))
    return QapInstance(f"rand{n}_s{seed}", A + A.T, B + B.T)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dcqap", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve instances (one report per instance and seed)")
    p.add_argument("instances", nargs="+")
    _add_solver_flags(p)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="solve many instances; CSV table by default")
    p.add_argument("instances", nargs="+")
    _add_solver_flags(p)
    p.add_argument("--workers", type=int, default=max(1, min(4, os.cpu_count() or 1)))
    p.add_argument("--json", action="store_true", help="emit JSON records instead of CSV")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("validate", help="check a .sln file (and optionally a candidate permutation)")
    p.add_argument("instance")
    p.add_argument("sln")
    p.add_argument("--perm", nargs="+", help="1-indexed candidate permutation")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("probe", help="run oracle probes")
    p.add_argument("kind", choices=("error-bound", "exact-penalty", "brute-force"))
    p.add_argument("--instance", default=None)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--radius", type=float, default=0.1)
    p.add_argument("--multistarts", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_probe)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv`` and execute; returns the process exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"dcqap: error: {exc}\n")
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"dcqap: error: {exc}\n")
        return EXIT_USAGE
    except GuardError as exc:
        sys.stderr.write(f"dcqap: refused: {exc}\n")
        return EXIT_GUARD
    except (FileNotFoundError, IsADirectoryError, PermissionError, ParseError) as exc:
        sys.stderr.write(f"dcqap: i/o error: {exc}\n")
        return EXIT_IO
    except (ConsistencyError, FloatingPointError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(f"dcqap: numerical failure: {exc}\n")
        return EXIT_NUMERIC
    except ValueError as exc:
        sys.stderr.write(f"dcqap: error: {exc}\n")
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
