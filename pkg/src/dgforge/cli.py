"""Convergence-study driver.

``dgforge run`` solves a registered problem on a sequence of uniformly
refined meshes and writes one CSV row per (degree, mesh); ``dgforge rates``
prints a table of errors and observed orders from such a CSV.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import sys
from contextlib import nullcontext
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import assembly as asm
from .femcore import DGSpace, interpolate, structured_triangle_mesh
from .problems import PROBLEMS, get_problem

log = logging.getLogger("dgforge")

COLUMNS = ["problem", "degree", "n", "h", "dofs", "err_L2", "err_H1", "newton_iters",
           "rate_L2", "rate_H1", "status"]


@dataclass
class StudyConfig:
    problem: str = "advdiff"
    degrees: tuple = (1,)
    start_n: int = 8
    levels: int = 4
    C_IP: float = 10.0
    flux: str = "lf"
    variant: str = "sipg"
    out: str | None = None
    diagnostics: str | None = None

    def __post_init__(self):
        self.degrees = tuple(int(d) for d in self.degrees)
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}")
        if not self.degrees or any(d < 0 or d > 4 for d in self.degrees):
            raise ValueError("degrees must lie in 0..4")
        if self.levels < 2:
            raise ValueError("at least two refinement levels are needed for rates")
        if self.start_n < 1:
            raise ValueError("start_n must be positive")
        if self.flux not in ("lf", "hlle"):
            raise ValueError(f"unknown flux scheme {self.flux!r}")
        if self.variant not in ("sipg", "nipg", "bo"):
            raise ValueError(f"unknown penalty variant {self.variant!r}")

    @property
    def mesh_sizes(self) -> list:
        return [self.start_n * 2 ** k for k in range(self.levels)]


# config parsing -------------------------------------------------------------------

_KEYS = {"problem": "problem", "degree": "degrees", "degrees": "degrees",
         "start_n": "start_n", "levels": "levels", "cip": "C_IP", "c_ip": "C_IP",
         "flux": "flux", "variant": "variant", "out": "out", "diagnostics": "diagnostics"}


def _int_list(text) -> tuple:
    out = []
    for part in str(text).replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part:
            a, b = part.split("-")
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _levels(text):
    """``count`` or ``start:count``."""
    text = str(text)
    if ":" in text:
        a, b = text.split(":")
        return {"start_n": int(a), "levels": int(b)}
    return {"levels": int(text)}


def _coerce(key, value) -> dict:
    if key == "degrees":
        return {key: _int_list(value)}
    if key == "levels":
        return _levels(value)
    if key == "start_n":
        return {key: int(value)}
    if key == "C_IP":
        return {key: float(value)}
    return {key: str(value)}


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        key = _KEYS.get(k.lower())
        if key is None:
            raise ValueError(f"config line {lineno}: unknown key {k!r}")
        values.update(_coerce(key, v))
    return values


# study -------------------------------------------------------------------------------

@dataclass
class StudyReport:
    config: StudyConfig
    rows: list = field(default_factory=list)
    errors: int = 0

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: _fmt(r.get(k)) for k in COLUMNS})
        return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def _solve_one(problem, form, degree, n, diag):
    mesh = structured_triangle_mesh(n, n, problem.box)
    space = DGSpace(mesh, degree, problem.m)
    exact = problem.exact()
    u0 = interpolate(exact, space)
    u = asm.newton_solve(form, u0, diagnostics=diag)
    info = u.solver_info
    return {
        "h": mesh.max_diameter(),
        "dofs": space.num_dofs,
        "err_L2": asm.error_norm(u, exact, "L2"),
        "err_H1": asm.error_norm(u, exact, "H1"),
        "newton_iters": info.iterations,
        "status": "ok" if info.converged else "not_converged",
    }


def run_study(config: StudyConfig) -> StudyReport:
    """Solve every (degree, mesh) pair; failures are recorded and the run continues."""
    problem = get_problem(config.problem)
    spec = problem.spec(C_IP=config.C_IP, flux=config.flux, variant=config.variant)
    report = StudyReport(config)
    diag_ctx = open(config.diagnostics, "w") if config.diagnostics else nullcontext(None)
    with diag_ctx as diag:
        for degree in config.degrees:
            form = spec.generate_form(degree)
            block = []
            for n in config.mesh_sizes:
                row = {"problem": problem.key, "degree": degree, "n": n}
                log.info("solving %s degree=%d n=%d", problem.key, degree, n)
                if diag is not None:
                    diag.write(f"# {problem.key} degree={degree} n={n}\n")
                try:
                    row.update(_solve_one(problem, form, degree, n, diag))
                except (asm.AssemblyError, asm.SolverError, ArithmeticError) as exc:
                    log.error("solve failed (degree=%d, n=%d): %s", degree, n, exc)
                    report.errors += 1
                    row.update(h=None, dofs=None, err_L2=None, err_H1=None,
                               newton_iters=None, status=f"error: {type(exc).__name__}")
                block.append(row)
            _attach_rates(block)
            report.rows.extend(block)
    if config.out:
        Path(config.out).write_text(report.csv_text())
    return report


def _rate(e0, e1, h0, h1):
    if not all(isinstance(v, float) and v > 0 and math.isfinite(v) for v in (e0, e1, h0, h1)):
        return None
    return math.log(e0 / e1) / math.log(h0 / h1)


def _attach_rates(block):
    for prev, row in zip(block[:-1], block[1:]):
        for norm in ("L2", "H1"):
            row[f"rate_{norm}"] = _rate(prev.get(f"err_{norm}"), row.get(f"err_{norm}"),
                                        prev.get("h"), row.get("h"))


# rate tables --------------------------------------------------------------------------

def read_study_csv(text: str) -> list:
    reader = csv.DictReader(io.StringIO(text))
    need = {"problem", "degree", "n", "err_L2", "err_H1"}
    if reader.fieldnames is None or not need.issubset(reader.fieldnames):
        raise ValueError(f"malformed study CSV: need columns {sorted(need)}")
    rows = []
    for k, r in enumerate(reader, 2):
        try:
            rows.append({
                "problem": r["problem"], "degree": int(r["degree"]), "n": int(r["n"]),
                "err_L2": float(r["err_L2"]) if r["err_L2"] else math.nan,
                "err_H1": float(r["err_H1"]) if r["err_H1"] else math.nan,
                "status": r.get("status") or "ok",
            })
        except (TypeError, ValueError) as exc:
            raise ValueError(f"malformed study CSV at line {k}: {exc}") from None
    if not rows:
        raise ValueError("study CSV has no data rows")
    return rows


def emit_rates(text: str) -> str:
    """Human-readable table; rates use log2 of successive error ratios (n doubling)."""
    rows = read_study_csv(text)
    groups = {}
    for r in rows:
        groups.setdefault((r["problem"], r["degree"]), []).append(r)
    with_rates = any(len(g) > 1 for g in groups.values())
    lines = []
    for (prob, deg), g in groups.items():
        g.sort(key=lambda r: r["n"])
        lines.append(f"{prob}  degree {deg}")
        head = f"{'n':>6} {'err_L2':>12} {'err_H1':>12}"
        if with_rates:
            head += f" {'rate_L2':>8} {'rate_H1':>8}"
        lines.append(head)
        for k, r in enumerate(g):
            line = f"{r['n']:>6} {r['err_L2']:>12.4e} {r['err_H1']:>12.4e}"
            if with_rates:
                if k == 0:
                    line += f" {'':>8} {'':>8}"
                else:
                    p = g[k - 1]
                    scale = math.log(r["n"] / p["n"])
                    rl = _safe_log(p["err_L2"], r["err_L2"]) / scale
                    rh = _safe_log(p["err_H1"], r["err_H1"]) / scale
                    line += f" {rl:>8.3f} {rh:>8.3f}"
            if r["status"] != "ok":
                line += f"  [{r['status']}]"
            lines.append(line)
        monotone = all(b["err_L2"] < a["err_L2"] and b["err_H1"] < a["err_H1"]
                       for a, b in zip(g[:-1], g[1:]))
        lines.append("  errors decrease monotonically: OK" if monotone
                     else "  WARNING: errors are not monotonically decreasing")
        lines.append("")
    return "\n".join(lines)


def _safe_log(a, b):
    if a > 0 and b > 0:
        return math.log(a / b)
    return math.nan


# entry point --------------------------------------------------------------------------

def _apply_threads():
    n = os.environ.get("DGFORGE_THREADS")
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(1, int(n)))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dgforge", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a convergence study")
    run.add_argument("--config", help="key=value config file")
    run.add_argument("--problem", choices=sorted(PROBLEMS))
    run.add_argument("--degree", help="degree list, e.g. 1,2,3 or 1-3")
    run.add_argument("--levels", help="refinement count, or start_n:count")
    run.add_argument("--cip", type=float)
    run.add_argument("--flux", choices=["lf", "hlle"])
    run.add_argument("--variant", choices=["sipg", "nipg", "bo"])
    run.add_argument("--out", help="CSV output path (stdout if omitted)")
    run.add_argument("--diagnostics", help="write Newton residual histories here")
    rates = sub.add_parser("rates", help="print a rate table from a study CSV")
    rates.add_argument("csv", help="study CSV path ('-' for stdin)")
    return p


def config_from_args(args) -> StudyConfig:
    values = {}
    if args.config:
        values.update(parse_config_text(Path(args.config).read_text()))
    overrides = {"problem": args.problem, "degrees": args.degree, "levels": args.levels,
                 "C_IP": args.cip, "flux": args.flux, "variant": args.variant,
                 "out": args.out, "diagnostics": args.diagnostics}
    for k, v in overrides.items():
        if v is not None:
            values.update(_coerce(k, v))
    known = {f.name for f in fields(StudyConfig)}
    return StudyConfig(**{k: v for k, v in values.items() if k in known})


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "rates":
        text = sys.stdin.read() if args.csv == "-" else Path(args.csv).read_text()
        try:
            print(emit_rates(text))
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        return 0
    try:
        config = config_from_args(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    with _apply_threads():
        report = run_study(config)
    if not config.out:
        sys.stdout.write(report.csv_text())
    return 1 if report.errors else 0


if __name__ == "__main__":
    sys.exit(main())
