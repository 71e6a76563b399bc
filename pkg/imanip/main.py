import argparse
import logging
import sys
from typing import Optional, Sequence

from . import __version__
from .api.commands import COMMANDS
from .core import settings
from .core.errors import CodecError, ConfigError, ImanipError, RegistryError, UnknownSkillError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_MISSING_FILE = 3
EXIT_RUN_FAILURE = 4
EXIT_CODEC = 5


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, CodecError):
        return EXIT_CODEC
    if isinstance(error, (ConfigError, UnknownSkillError, RegistryError)):
        return EXIT_CONFIG
    if isinstance(error, FileNotFoundError):
        return EXIT_MISSING_FILE
    if isinstance(error, ImanipError):
        return EXIT_RUN_FAILURE
    return EXIT_UNEXPECTED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="imanip", description="Skill-incremental imitation learning runs")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.add_parser(subparsers)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    # Configure logging
    logging.basicConfig(
        level=getattr(logging, settings.IMANIP_LOG_LEVEL.upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits with 2 on usage errors and 0 for --help
        return int(e.code or 0)
    try:
        return args.handler(args)
    except Exception as e:
        code = exit_code_for(e)
        logger.error(f"{args.command} failed ({type(e).__name__}, exit {code}): {str(e)}")
        return code


if __name__ == "__main__":
    sys.exit(main())
