import argparse
import logging
import sys
import time

from commands import plot, sweep, train
from core.errors import CheckpointError, ConfigError, CsvSchemaError, NonFiniteError
from extensions import configure_logging

logger = logging.getLogger(__name__)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gsde",
        description="gSDE experiments: train, evaluate, sweep and plot SAC/PPO agents on desk-scale control tasks",
    )
    parser.add_argument("--log-level", default=None, help="overrides GSDE_LOG_LEVEL")
    subparsers = parser.add_subparsers(dest="command", required=True)

    # Add the subcommands to the CLI
    train.register(subparsers)
    sweep.register(subparsers)
    plot.register(subparsers)
    return parser


def handle_exception(error):
    """Global error handler: maps an exception to the process exit status."""
    logger.error("%s: %s", type(error).__name__, error)

    if isinstance(error, ConfigError):
        return 2
    elif isinstance(error, NonFiniteError):
        return 3
    elif isinstance(error, (CsvSchemaError, CheckpointError)):
        return 4
    elif isinstance(error, OSError):
        return 5
    else:
        return 1


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    start = time.perf_counter()
    try:
        status = args.func(args)
    except Exception as error:
        status = handle_exception(error)
    duration = time.perf_counter() - start
    logger.info("[PERF] %s took %.4f seconds", args.command, duration)
    return status


if __name__ == '__main__':
    sys.exit(main())
