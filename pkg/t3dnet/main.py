"""
Главный файл CLI приложения.

Builds the argument parser from the command modules and maps every failure
onto a process exit code: 0 success, 1 usage or config error, 2 I/O error,
3 numeric divergence, 4 format error.
"""

import argparse
import sys
from typing import List, Optional

from t3dnet import __version__
from t3dnet.cli import data, report, sweep, train
from t3dnet.config import settings
from t3dnet.core.errors import EXIT_IO, EXIT_USAGE, T3DNetError
from t3dnet.core.logging import configure_logging, get_logger

logger = get_logger(__name__)


class ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors reported as exit code 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", default=None, help=f"DEBUG, INFO, WARNING, ERROR (default {settings.log_level})")
    common.add_argument("--log-format", choices=("console", "json"), default=None)

    parser = ArgumentParser(
        prog="t3dnet",
        description="Two-stage compression of point-cloud classifiers: data, training, evaluation, reports, sweeps.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True

    # Подключение команд
    for module in (data, train, report, sweep):
        module.register(subparsers, parents=[common])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Глобальный обработчик ошибок: exception -> exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE

    configure_logging(args.log_level or settings.log_level, args.log_format or settings.log_format)

    try:
        return args.handler(args)
    except T3DNetError as exc:
        logger.error("Command failed", command=args.command, error_type=type(exc).__name__, error=str(exc))
        return exc.exit_code
    except OSError as exc:
        logger.error("I/O error", command=args.command, error=str(exc))
        return EXIT_IO
    except KeyboardInterrupt:
        logger.warning("Interrupted", command=args.command)
        return EXIT_USAGE
    except Exception as exc:
        logger.error("Unhandled exception", command=args.command, error=str(exc), exc_info=True)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

