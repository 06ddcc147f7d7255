"""cqworker entry point: stdio worker mode or host-side pool mode."""

from __future__ import annotations

import argparse
import json
import sys

from . import DEFAULT_TOLERANCE
from .pool import DEFAULT_RECYCLE_AFTER, pool_dispatch
from .worker import run_worker


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cqworker", description=__doc__)
    sub = parser.add_subparsers(dest="mode")

    worker_p = sub.add_parser("worker", help="serve the line protocol on stdio")
    worker_p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE,
                          help="tessellation linear deflection (model units)")

    pool_p = sub.add_parser("pool", help="dispatch stdin request lines over N workers")
    pool_p.add_argument("--parallelism", type=int, default=2)
    pool_p.add_argument("--recycle-after", type=int, default=DEFAULT_RECYCLE_AFTER)

    args = parser.parse_args(argv)
    mode = args.mode or "worker"

    if mode == "worker":
        tolerance = getattr(args, "tolerance", DEFAULT_TOLERANCE)
        return run_worker(tolerance=tolerance)

    requests = [json.loads(line) for line in sys.stdin if line.strip()]
    responses = pool_dispatch(requests, args.parallelism, recycle_after=args.recycle_after)
    for response in responses:
        sys.stdout.write(json.dumps(response) + "\n")
    sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
