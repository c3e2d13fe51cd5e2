"""
SE2(3) IMU pre-integration toolkit - batch CLI
==============================================

Commands:
- preint-bench: exact vs Euler pre-integration error sweep against the fine oracle
- consistency:  Monte-Carlo NEES check of the pre-integration covariance
- estimate:     synthetic multi-camera sliding-window estimation run
- ingest:       IMU CSV validation and stream summary

Exit codes: 0 ok, 2 I/O or parse error, 3 statistical failure, 4 divergence.
"""

import argparse
import logging
import os
import sys
import time
from contextlib import contextmanager
from typing import List, Optional

from dotenv import load_dotenv

from infra.errors import PreintError
from infra.log_filters import configure_logging

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="preint", description="Exact SE2(3) IMU pre-integration benchmarks and VIO runs")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("preint-bench", "exact vs Euler error sweep"),
        ("consistency", "Monte-Carlo NEES covariance check"),
        ("estimate", "sliding-window estimation on a synthetic scene"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", help="run config (YAML or JSON); built-in defaults when omitted")
        cmd.add_argument("--seed", type=int, help="override the config seed")
        cmd.add_argument("--out", help="override the output directory")

    ingest = sub.add_parser("ingest", help="validate and summarize an IMU CSV")
    ingest.add_argument("path", help="CSV with timestamp_ns,wx,wy,wz,ax,ay,az")
    ingest.add_argument("--out", default="runs/ingest", help="directory for the manifest and summary")
    return parser


@contextmanager
def recorded_run(manifest):
    """Write the run manifest with the wall-clock time and outcome, also when the command fails"""
    started = time.monotonic()
    try:
        yield manifest
        manifest.status = "ok"
    except PreintError as e:
        manifest.status = "failed"
        manifest.error = f"{type(e).__name__}: {e}"
        raise
    finally:
        manifest.wall_clock_s = time.monotonic() - started
        manifest.write()


def run_command(args: argparse.Namespace) -> int:
    # Handlers pull in numpy/scipy/pandas; import after logging is configured
    from config.settings import DEFAULT_OUTPUT_DIR, RunConfig
    from services.run_outputs import RunManifest, ensure_output_dir, write_json

    from handlers.consistency import cmd_consistency
    from handlers.estimate import cmd_estimate
    from handlers.ingest import INGEST_JSON, cmd_ingest
    from handlers.preint_bench import cmd_preint_bench

    if args.command == "ingest":
        out = ensure_output_dir(args.out)
        with recorded_run(RunManifest.start(args.command, None, None, out)):
            write_json(out / INGEST_JSON, cmd_ingest(args.path))
        return 0

    handlers = {"preint-bench": cmd_preint_bench, "consistency": cmd_consistency, "estimate": cmd_estimate}
    # Until the config is loaded the manifest goes to --out, or the default directory
    manifest = RunManifest.start(args.command, args.config, args.seed, args.out or DEFAULT_OUTPUT_DIR)
    with recorded_run(manifest):
        config = RunConfig(args.config, seed_override=args.seed, out_override=args.out)
        manifest.seed = config.seed
        manifest.output_dir = str(ensure_output_dir(config.output_dir))
        handlers[args.command](config)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    configure_logging(os.getenv("PREINT_LOG_LEVEL", "INFO"), args.command, getattr(args, "seed", None))

    try:
        return run_command(args)
    except PreintError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
