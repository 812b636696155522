"""CLI entry point: `python -m execshim --profile toy --workdir DIR`."""

import argparse
import sys
import tempfile

from .server import Server


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="execshim")
    parser.add_argument("--profile", required=True, help="SUT profile to serve")
    parser.add_argument("--workdir", help="scratch directory for test sources")
    parser.add_argument(
        "--coverage-tool-path",
        help="Python file providing collect(run, roots); default: built-in tracer",
    )
    args = parser.parse_args(argv)
    workdir = args.workdir or tempfile.mkdtemp(prefix="execshim-")
    server = Server(args.profile, workdir, collector_path=args.coverage_tool_path)
    server.serve(sys.stdin.buffer, sys.stdout.buffer)
    return 0


if __name__ == "__main__":
    sys.exit(main())
