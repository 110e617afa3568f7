"""Command-line front end.

Subcommands ``solve``, ``condition-study``, ``rank-study`` and ``compare``
load a problem, run the solver and write CSV reports.  Every CSV starts
with ``#``-prefixed manifest lines (command, config, seed, timestamp, git
describe, outputs) followed by a header row.

Exit codes: 0 success, 1 iteration limit reached, 2 bad arguments,
3 numerical failure, 4 missing snapshot.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import subprocess
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .errors import NysQPError
from .ippmm import SEED_SKETCH, SolverConfig, snapshot_operator, solve
from .nystrom import NystromPreconditioner, nystrom_approximation
from .partial_cholesky import PartialCholeskyPreconditioner, build_partial_cholesky
from .problems import (
    SvmSpec,
    build_portfolio_qp,
    build_svm_qp,
    read_libsvm,
    read_qp_csv,
    synthetic_portfolio,
    synthetic_svm,
)

log = logging.getLogger("nysqp")

EXIT_OK, EXIT_MAX_ITERS, EXIT_USAGE, EXIT_NUMERICAL, EXIT_SNAPSHOT = 0, 1, 2, 3, 4

STAGES = (1e-2, 1e-4, 1e-6, 1e-8)
RANK_GRID = (10, 20, 50, 100, 200, 300)
MAX_CONDITION_SIZE = 400

REPORT_COLUMNS = ["iter", "mu", "rel_p", "rel_d", "rel_u", "inner_pred", "inner_corr", "pcg_applications",
                  "matvecs_forward", "matvecs_adjoint", "build_s", "pcg_s", "time_s", "rho", "delta",
                  "alpha_p", "alpha_d", "rank", "accepted", "mu_next", "note"]
COND_COLUMNS = ["stage", "rank", "kappa_plain", "kappa_nys", "kappa_chol"]
RANK_COLUMNS = ["rank", "repeat", "total_s", "pcg_s", "build_s", "other_s"]
COMPARE_COLUMNS = ["method", "outer_iters", "sum_inner_iters", "time_s", "rank"]


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- CSV I/O


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True, text=True,
                             timeout=5, cwd=Path(__file__).resolve().parent)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def make_manifest(command: str, config: dict, seed: int, outputs) -> dict:
    return {
        "command": command,
        "config": json.dumps(config, sort_keys=True, default=str),
        "seed": str(seed),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "git": git_describe(),
        "outputs": ";".join(str(p) for p in outputs),
    }


def write_csv(path, columns, rows, manifest: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for key, value in manifest.items():
            fh.write(f"# {key}: {value}\n")
        wr = csv.writer(fh)
        wr.writerow(columns)
        for row in rows:
            values = [row[c] for c in columns] if isinstance(row, dict) else row
            wr.writerow([_fmt(v) for v in values])


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def read_report_csv(path):
    """Parse a report written by this CLI into ``(manifest, rows)``.

    ``rows`` is a list of dicts keyed by the header; numeric cells are
    converted to ``int`` or ``float`` where possible.
    """
    manifest, body = {}, []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(":")
                manifest[key.strip()] = value.strip()
            else:
                body.append(line)
    reader = csv.DictReader(body)
    rows = [{k: _parse_cell(v) for k, v in row.items()} for row in reader]
    manifest["columns"] = reader.fieldnames or []
    return manifest, rows


def _parse_cell(v):
    for conv in (int, float):
        try:
            return conv(v)
        except (TypeError, ValueError):
            pass
    return v


# ---------------------------------------------------------------- arguments


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


def _int_tuple(count):
    def parse(text):
        try:
            parts = tuple(int(p) for p in text.split(","))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected {count} comma-separated integers, got {text!r}") from None
        if len(parts) != count or any(p < 0 for p in parts):
            raise argparse.ArgumentTypeError(f"expected {count} comma-separated nonnegative integers, got {text!r}")
        return parts
    return parse


def _int_list(text):
    try:
        vals = [int(p) for p in text.split(",") if p]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError(f"ranks must be >= 1, got {text!r}")
    return vals


def _add_source(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--svm", metavar="FILE", help="LIBSVM-format data file")
    g.add_argument("--svm-synth", metavar="d,n", type=_int_tuple(2), help="synthetic dense SVM with d features, n samples")
    g.add_argument("--portfolio-synth", metavar="n,d,s", type=_int_tuple(3), help="synthetic factor-model portfolio")
    g.add_argument("--qp-csv", metavar="FILE", help="QP dumped in field,i,j,value CSV form")
    p.add_argument("--tau", type=_positive_float, default=1.0, help="SVM misclassification penalty (default 1)")


def _add_solver(p, precond=True):
    if precond:
        p.add_argument("--precond", choices=("none", "nystrom", "chol"), default="nystrom")
    p.add_argument("--rank", type=_positive_int, default=20)
    p.add_argument("--tol", type=_positive_float, default=1e-8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-outer", type=_positive_int, default=100)
    p.add_argument("--pcg-c", type=_positive_float, default=1e-2, help="PCG tolerance is max(floor, c*mu)")
    p.add_argument("--pcg-floor", type=_positive_float, default=1e-10)
    p.add_argument("--out", default=".", help="output directory (default: current directory)")
    p.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nysqp", description="Matrix-free IP-PMM solver for separable convex QPs")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one problem and write report.csv")
    _add_source(p)
    _add_solver(p)
    p.add_argument("--save-snapshots", metavar="FILE", help="write normal-equation snapshots (JSON) for the stage set")

    p = sub.add_parser("condition-study", help="condition numbers from stored snapshots; writes cond.csv")
    _add_source(p)
    p.add_argument("--snapshots", metavar="FILE", required=True)
    p.add_argument("--ranks", type=_int_list, default=list(RANK_GRID))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")

    p = sub.add_parser("rank-study", help="timing sweep over ranks; writes rank_time.csv")
    _add_source(p)
    _add_solver(p)
    p.add_argument("--ranks", type=_int_list, default=[10, 20, 50, 100, 200])
    p.add_argument("--repeats", type=_positive_int, default=4)

    p = sub.add_parser("compare", help="none vs nystrom vs chol; writes compare.csv")
    _add_source(p)
    _add_solver(p, precond=False)
    return ap


# ---------------------------------------------------------------- helpers


def load_problem(args):
    if args.svm:
        X, y = read_libsvm(args.svm)
        return build_svm_qp(SvmSpec(X, y, args.tau), name=f"libsvm:{Path(args.svm).name}:tau{args.tau:g}")
    if args.svm_synth:
        d, n = args.svm_synth
        if d < 1 or n < 2:
            raise UsageError("--svm-synth needs d >= 1 and n >= 2")
        X, y = synthetic_svm(d, n, args.seed)
        return build_svm_qp(SvmSpec(X, y, args.tau), name=f"svm-synth:{d},{n}:seed{args.seed}:tau{args.tau:g}")
    if args.portfolio_synth:
        n, d, s = args.portfolio_synth
        if n < 1 or not 1 <= s <= n:
            raise UsageError("--portfolio-synth needs n >= 1 and 1 <= s <= n")
        spec = synthetic_portfolio(n, d, s, args.seed)
        return build_portfolio_qp(spec, name=f"portfolio-synth:{n},{d},{s}:seed{args.seed}")
    return read_qp_csv(args.qp_csv, name=f"qp-csv:{Path(args.qp_csv).name}")


def _config(args, preconditioner, rank, **extra) -> SolverConfig:
    return SolverConfig(tol=args.tol, max_outer=args.max_outer, preconditioner=preconditioner, rank=rank,
                        rng_seed=args.seed, inexact_c=args.pcg_c, tol_floor=args.pcg_floor, **extra)


def _config_echo(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def _exit_for(status: str) -> int:
    return {"optimal": EXIT_OK, "numerical_failure": EXIT_NUMERICAL}.get(status, EXIT_MAX_ITERS)


def _print_table(report, stream):
    stream.write(f"{'iter':>4} {'mu':>10} {'rel_p':>10} {'rel_d':>10} {'inner':>7} {'time_s':>8}\n")
    for r in report.records:
        stream.write(f"{r.iter:4d} {r.mu:10.3e} {r.rel_p:10.3e} {r.rel_d:10.3e} "
                     f"{r.inner_pred + r.inner_corr:7d} {r.time_s:8.3f}\n")
    stream.write(f"status {report.status}: {report.outer_iters} outer, {report.sum_inner_iters} inner, "
                 f"{report.total_s:.3f} s\n")


# ---------------------------------------------------------------- commands


def cmd_solve(args) -> int:
    problem = load_problem(args)
    cfg = _config(args, args.precond, args.rank, snapshot_stages=STAGES if args.save_snapshots else ())
    report = solve(problem, cfg)
    if not args.quiet:
        _print_table(report, sys.stdout)
    out = Path(args.out) / "report.csv"
    outputs = [out] + ([args.save_snapshots] if args.save_snapshots else [])
    manifest = make_manifest("solve", _config_echo(args), args.seed, outputs)
    manifest["status"] = report.status
    rows = [{c: getattr(r, c) for c in REPORT_COLUMNS} for r in report.records]
    write_csv(out, REPORT_COLUMNS, rows, manifest)
    if args.save_snapshots:
        Path(args.save_snapshots).parent.mkdir(parents=True, exist_ok=True)
        with open(args.save_snapshots, "w", encoding="utf-8") as fh:
            json.dump({"problem_id": problem.name, "snapshots": report.snapshots}, fh)
    return _exit_for(report.status)


def cmd_condition_study(args) -> int:
    from .oracle import condition_number

    problem = load_problem(args)
    if problem.m > MAX_CONDITION_SIZE:
        raise UsageError(f"condition study needs m <= {MAX_CONDITION_SIZE}, problem has m={problem.m}")
    path = Path(args.snapshots)
    if not path.is_file():
        log.error("snapshot file %s not found", path)
        return EXIT_SNAPSHOT
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    snaps = {float(s["stage"]): s for s in data.get("snapshots", []) if s.get("problem_id") == problem.name}
    missing = [st for st in STAGES if st not in snaps]
    if missing:
        log.error("snapshots missing for problem %s at stages %s", problem.name, missing)
        return EXIT_SNAPSHOT

    rows = []
    for stage in STAGES:
        snap = snaps[stage]
        if len(snap["theta_inv"]) != problem.n:
            log.error("snapshot at stage %g has %d scaling entries, problem has n=%d", stage, len(snap["theta_inv"]),
                      problem.n)
            return EXIT_SNAPSHOT
        op = snapshot_operator(problem, snap)
        kappa_plain = condition_number(op)
        for rank in sorted({min(r, problem.m) for r in args.ranks}):
            factors = nystrom_approximation(op.without_shift(), rank, args.seed + SEED_SKETCH)
            kappa_nys = condition_number(op, NystromPreconditioner(factors, op.delta))
            chol = build_partial_cholesky(problem.A, op.d_reg, op.delta, rank)
            kappa_chol = condition_number(op, PartialCholeskyPreconditioner(chol))
            rows.append([stage, rank, kappa_plain, kappa_nys, kappa_chol])
            print(f"stage {stage:.0e} rank {rank:4d}  plain {kappa_plain:10.3e}  nys {kappa_nys:10.3e}  "
                  f"chol {kappa_chol:10.3e}")
    out = Path(args.out) / "cond.csv"
    write_csv(out, COND_COLUMNS, rows, make_manifest("condition-study", _config_echo(args), args.seed, [out]))
    return EXIT_OK


def cmd_rank_study(args) -> int:
    problem = load_problem(args)
    if args.precond == "none":
        raise UsageError("rank study needs --precond nystrom or chol")
    ranks = sorted({min(r, problem.m) for r in args.ranks})
    rows, code = [], EXIT_OK
    for rank in ranks:
        per = []
        for rep in range(args.repeats):
            report = solve(problem, _config(args, args.precond, rank))
            pcg_s = sum(r.pcg_s for r in report.records)
            build_s = sum(r.build_s for r in report.records)
            row = [rank, rep, report.total_s, pcg_s, build_s, report.total_s - pcg_s - build_s]
            per.append(row[2:])
            rows.append(row)
            if report.status != "optimal":
                code = max(code, _exit_for(report.status))
        mean = np.mean(per, axis=0).tolist()
        rows.append([rank, "mean"] + mean)
        if not args.quiet:
            print(f"rank {rank:4d}  total {mean[0]:8.3f}  pcg {mean[1]:8.3f}  build {mean[2]:8.3f}")
    out = Path(args.out) / "rank_time.csv"
    write_csv(out, RANK_COLUMNS, rows, make_manifest("rank-study", _config_echo(args), args.seed, [out]))
    return code


def cmd_compare(args) -> int:
    problem = load_problem(args)
    rows, statuses, code = [], [], EXIT_OK
    for method in ("none", "nystrom", "chol"):
        rank = 0 if method == "none" else min(args.rank, problem.m)
        try:
            report = solve(problem, _config(args, method, max(rank, 1)))
        except NysQPError as exc:
            log.error("%s: %s", method, exc)
            rows.append([method, "nan", "nan", "nan", rank])
            statuses.append(f"{method}=error")
            code = EXIT_NUMERICAL
            continue
        rows.append([method, report.outer_iters, report.sum_inner_iters, report.total_s, rank])
        statuses.append(f"{method}={report.status}")
        if report.status != "optimal":
            code = max(code, _exit_for(report.status))
        if not args.quiet:
            print(f"{method:8s} {report.status:18s} outer {report.outer_iters:4d}  inner {report.sum_inner_iters:7d}  "
                  f"{report.total_s:8.3f} s")
    out = Path(args.out) / "compare.csv"
    manifest = make_manifest("compare", _config_echo(args), args.seed, [out])
    manifest["status"] = ";".join(statuses)
    write_csv(out, COMPARE_COLUMNS, rows, manifest)
    return code


COMMANDS = {"solve": cmd_solve, "condition-study": cmd_condition_study, "rank-study": cmd_rank_study,
            "compare": cmd_compare}


def _thread_limit():
    value = os.environ.get("NYSQP_THREADS")
    if not value:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, int(value)))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with _thread_limit():
            return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"nysqp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NysQPError, OSError) as exc:
        print(f"nysqp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
