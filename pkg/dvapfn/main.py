"""
Decoupled-Value Attention PFN toolkit - Main Application Entry Point.

Exit codes: 0 success, 1 usage error, 2 any other toolkit error.
"""
import argparse
import logging
import sys
from typing import List, Optional, Sequence

from dvapfn.commands import diagnostics, evaluate, generate, train
from dvapfn.commands.common import COMMON_DESTS, CommandGroup, add_common_arguments, execute
from dvapfn.config import settings
from dvapfn.errors import DvaPfnError, UsageError

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

GROUPS: List[CommandGroup] = [generate.group, train.group, evaluate.group, diagnostics.group]


class ArgumentParser(argparse.ArgumentParser):
    """argparse that raises instead of exiting on bad usage."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="dvapfn", description=settings.APP_TITLE)
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.APP_VERSION}")
    subparsers = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=ArgumentParser)
    subparsers.required = True
    for group in GROUPS:
        for command in group.commands:
            sub = subparsers.add_parser(command.name, help=command.help, description=command.help)
            add_common_arguments(sub)
            if command.arguments is not None:
                command.arguments(sub)
            command.arg_names = [a.dest for a in sub._actions if a.dest not in COMMON_DESTS | {"help"}]
            sub.set_defaults(_command=command)
    return parser


def configure_logging() -> None:
    logging.basicConfig(
        level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def cli_dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
        command = args._command
        del args._command
        execute(command, args)
    except SystemExit as exc:
        # --help and --version
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DvaPfnError as exc:
        logger.error("%s failed: %s", type(exc).__name__, exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    configure_logging()
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
