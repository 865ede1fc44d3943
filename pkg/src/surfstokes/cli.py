"""Command line entry point.

    surfstokes <experiment> [--config FILE] [--set key=value ...] [--out DIR]

Exit codes: 0 on success, 2 when adaptive quadrature fails to converge,
3 when the direct solver fails.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import app
from .quadrature import QuadratureFailure
from .solver import SolverFailure


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="surfstokes",
        description="Boundary-integral surface Stokes experiments",
    )
    parser.add_argument("experiment", choices=sorted(app.EXPERIMENTS))
    parser.add_argument("--config", default=None, help="key = value file")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[],
        metavar="KEY=VALUE", help="override one config entry",
    )
    parser.add_argument("--out", default=".", help="output directory")
    args = parser.parse_args(argv)

    try:
        cfg = app.load_config(args.config, args.overrides)
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        app.EXPERIMENTS[args.experiment](cfg, outdir)
    except QuadratureFailure as exc:
        print(f"quadrature failure: {exc}", file=sys.stderr)
        return 2
    except (SolverFailure, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
