"""
Entry point of `python -m commands`.

"""

import argparse
import logging
import sys

from learning.audit import AuditError
from learning.config import ConfigError

from .default_cmdsets import BenchCmdSet

_log = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"


def configure_logging(verbosity: int = 0, log_file: str | None = None):
    handlers = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(
        level=logging.DEBUG if verbosity else logging.INFO,
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )


def build_parser(cmdset: BenchCmdSet) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="python -m commands",
        description="Label-noise robustness bench: SVAE importance reweighting against baselines.",
    )
    parser.add_argument("--seed", type=int, help="use this single seed for every run")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log per-epoch detail")
    parser.add_argument("--log-file", help="also write the log to this file")
    subparsers = parser.add_subparsers(dest="verb", required=True, metavar="<verb>")
    for command in cmdset:
        command.add_to(subparsers)
    return parser


def main(argv=None, stdout=None) -> int:
    """
    Parse the command line and run one verb.

    Returns:
        int: 0 on success, 2 for config and audit input errors, 1 for any
            other failure.

    """
    cmdset = BenchCmdSet()
    opts = build_parser(cmdset).parse_args(argv)
    configure_logging(opts.verbose, opts.log_file)

    command = cmdset.get(opts.verb)
    command.opts = opts
    if stdout is not None:
        command.stdout = stdout
    try:
        command.parse()
        return command.func() or 0
    except (ConfigError, AuditError) as err:
        _log.error(str(err))
        return 2
    except Exception:  # noqa: BLE001
        _log.exception(f"{opts.verb} failed")
        return 1
