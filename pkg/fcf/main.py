import argparse
import logging
import sys
from typing import List, Optional

from fcf.config import settings
from fcf.exceptions import FcfError
from fcf.handlers import get_all_routers

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fcf",
        description="Filtered channel features: filter banks, boosted detectors and their evaluation.",
    )
    parser.add_argument("--log-level", default=settings.log_level, help="logging level (env FCF_LOG_LEVEL)")
    subparsers = parser.add_subparsers(dest="command", metavar="<command>")
    subparsers.required = True
    for router in get_all_routers():
        router.mount(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Command-line entry point; returns the exit status."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level.upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.handler(args)
    except (FcfError, OSError) as e:
        logger.error(str(e))
        return 1


if __name__ == "__main__":
    sys.exit(main())
