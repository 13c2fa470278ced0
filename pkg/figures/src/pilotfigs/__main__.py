"""Command-line entry: render one figure, or every figure from a run tree.

Single figure:
    pilotfigs render F10 hseries.csv -o fig10.png

Whole run directory (expects the documented subdirectory layout):
    pilotfigs all --run-dir runs/ --output-dir figs/
"""

import argparse
import os
import sys

from .render import FIGURE_IDS, FigureJob, render
from .schemas import SchemaError

# run-tree layout consumed by `pilotfigs all`: one subdirectory per pilotbox
# CLI invocation, holding that command's outputs
RUN_LAYOUT = {
    "F1": ("psi2_t0/density.csv",),
    "F2": ("trajectory/trajectory.csv",),
    "F3": ("trajectory_closeup/trajectory.csv",),
    "F4": ("diverge/divergence.csv",),
    "F5": ("rho0_t0/density.csv",),
    "F6": ("closeup/density.csv",),
    "F7": ("smooth_t0/rho_tilde.csv", "smooth_t0/psi2_tilde.csv",
           "smooth_t2pi/rho_tilde.csv", "smooth_t2pi/psi2_tilde.csv",
           "smooth_t4pi/rho_tilde.csv", "smooth_t4pi/psi2_tilde.csv"),
    "F8": ("smooth_t0/rho_tilde.csv", "smooth_t0/psi2_tilde.csv",
           "smooth_t2pi/rho_tilde.csv", "smooth_t2pi/psi2_tilde.csv",
           "smooth_t4pi/rho_tilde.csv", "smooth_t4pi/psi2_tilde.csv"),
    "F9": ("bar_t0/rho_bar.csv", "bar_t0/psi2_bar.csv",
           "bar_t2pi/rho_bar.csv", "bar_t2pi/psi2_bar.csv"),
    "F10": ("hseries/hseries.csv",),
}


def cmd_render(args) -> int:
    job = FigureJob(figure_id=args.figure, input_files=tuple(args.inputs),
                    output=args.output)
    render(job)
    print(f"{args.figure} -> {args.output}")
    return 0


def cmd_all(args) -> int:
    os.makedirs(args.output_dir, exist_ok=True)
    done = 0
    for figure_id in FIGURE_IDS:
        inputs = tuple(os.path.join(args.run_dir, rel)
                       for rel in RUN_LAYOUT[figure_id])
        missing = [p for p in inputs if not os.path.exists(p)]
        if missing:
            if args.strict:
                raise SchemaError(f"{figure_id}: missing inputs {missing}")
            print(f"{figure_id}: skipped (missing {missing[0]})")
            continue
        output = os.path.join(args.output_dir, f"{figure_id.lower()}.png")
        render(FigureJob(figure_id=figure_id, input_files=inputs, output=output))
        print(f"{figure_id} -> {output}")
        done += 1
    print(f"rendered {done} figure(s)")
    return 0 if done else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pilotfigs",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render one figure from explicit inputs")
    p.add_argument("figure", choices=FIGURE_IDS)
    p.add_argument("inputs", nargs="+", help="input CSV path(s), in schema order")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("all", help="render every figure found under a run tree")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--strict", action="store_true",
                   help="fail instead of skipping figures with missing inputs")
    p.set_defaults(func=cmd_all)

    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SchemaError as exc:
        print(f"pilotfigs: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
