"""Run a mesh-refinement study for one registered problem and print the rate table.

Example::

    python scripts/convergence_study.py advdiff --degrees 1 2 3 --levels 4
"""
import argparse
import sys

from dgforge.cli import StudyConfig, emit_rates, run_study
from dgforge.problems import PROBLEMS


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("problem", choices=sorted(PROBLEMS))
    ap.add_argument("--degrees", type=int, nargs="+", default=[1, 2])
    ap.add_argument("--start-n", type=int, default=8)
    ap.add_argument("--levels", type=int, default=3)
    ap.add_argument("--flux", default="lf", choices=["lf", "hlle"])
    ap.add_argument("--variant", default="sipg", choices=["sipg", "nipg", "bo"])
    ap.add_argument("--out", default=None, help="optional CSV destination")
    args = ap.parse_args(argv)
    cfg = StudyConfig(args.problem, tuple(args.degrees), args.start_n, args.levels,
                      flux=args.flux, variant=args.variant)
    report = run_study(cfg)
    text = report.csv_text()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(emit_rates(text))
    return 1 if report.errors else 0


if __name__ == "__main__":
    sys.exit(main())
