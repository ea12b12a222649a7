# app.py
import argparse
import logging
import sys

from commands.bench import register as register_bench
from commands.common import load_config_file
from commands.profile import register as register_profile
from commands.report import register as register_report
from commands.reproduce import register as register_reproduce
from commands.train import register as register_train
from config import VERSION, Config
from extensions import init_logging
from utils.errors import CheckpointError, DatasetError, TrainingDiverged, UsageError

log = logging.getLogger("cattn")

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


def create_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="app.py",
        description="Channel-attention (SE / ECA / LCA) CIFAR-10 engine: profile -> train -> bench -> report.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    parser.add_argument("--log-level", default=None, help=f"DEBUG, INFO, WARNING or ERROR (default {Config.LOG_LEVEL})")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True

    # register subcommands
    register_profile(subparsers)     # profile
    register_train(subparsers)       # train
    register_bench(subparsers)       # bench
    register_report(subparsers)      # report
    register_reproduce(subparsers)   # reproduce-all
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = create_parser()
    args = parser.parse_args(argv)   # usage errors exit 2 here
    try:
        init_logging(args.log_level)
    except ValueError as e:
        parser.error(str(e))

    try:
        args.file_config = load_config_file(getattr(args, "config", None))
        return args.func(args)
    except UsageError as e:
        log.error("%s", e)
        return EXIT_USAGE
    except DatasetError as e:
        log.error("dataset problem: %s", e)
    except CheckpointError as e:
        log.error("checkpoint rejected: %s", e)
    except TrainingDiverged as e:
        log.error("%s%s", e, f" (last good parameters in {e.checkpoint})" if e.checkpoint else "")
    except (ValueError, OSError, FloatingPointError) as e:
        log.error("%s failed: %s", args.command, e)
    return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
