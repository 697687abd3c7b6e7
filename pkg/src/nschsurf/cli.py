"""Command line front end.

Thread caps are exported to the BLAS/OpenMP environment before any
numerical module loads, which is why the heavy imports sit inside main().
"""

import argparse
import os
import sys

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def build_parser():
    p = argparse.ArgumentParser(
        prog="nsch-sim",
        description="Two-phase flow with soluble surfactant: "
                    "structure-preserving runs and mobility-floor "
                    "continuation studies.")
    p.add_argument("--config", metavar="PATH",
                   help="run configuration file (defaults apply without it)")
    p.add_argument("--override", action="append", default=[],
                   metavar="SECTION.KEY=VALUE",
                   help="override one config entry; repeatable, applied "
                        "in order after the file")
    p.add_argument("--mode", choices=("nondegenerate", "continuation"),
                   help="shorthand for --override run.mode=...")
    p.add_argument("--out", metavar="DIR",
                   help="shorthand for --override output.directory=...")
    p.add_argument("--threads", type=int, default=1, metavar="N",
                   help="cap for inner data-parallel loops (default 1, "
                        "the deterministic mode)")
    p.add_argument("--seed", type=int, metavar="U64",
                   help="shorthand for --override run.seed=...")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("nsch-sim: --threads must be >= 1", file=sys.stderr)
        return 2
    for var in _THREAD_VARS:
        os.environ.setdefault(var, str(args.threads))

    from .config import load_config
    from .runner import run

    overrides = list(args.override)
    overrides.append(f"run.threads={args.threads}")
    if args.mode:
        overrides.append(f"run.mode={args.mode}")
    if args.out:
        overrides.append(f"output.directory={args.out}")
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")

    try:
        config = load_config(args.config if args.config else "", overrides)
    except (ValueError, OSError) as exc:
        print(f"nsch-sim: {exc}", file=sys.stderr)
        return 2
    result = run(config)
    if result.error:
        print(f"nsch-sim: run failed: {result.error}", file=sys.stderr)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
