"""Application entry point for the OptVQ experiment CLI."""
from __future__ import annotations

import logging
import sys

from rich.logging import RichHandler

from cli.commands import run


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=True, show_path=False)],
    )
    return run(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    raise SystemExit(main())
