from abc import ABC, abstractmethod
import argparse
from argparse import ArgumentParser, Namespace
import json
import logging
import os
from pathlib import Path
import traceback
from typing import Optional

import coloredlogs

from .exceptions import IcarhError, IcarhIOError, IcarhNumericError, IcarhValidationError

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

THREADS_ENV = 'ICARH_THREADS'


class BaseApp(ABC):

    def parse_args(self, argv: list) -> Namespace:
        parser = argparse.ArgumentParser(prog=getattr(self, 'prog', None), description=self.__doc__)
        self.add_arg_definitions(parser)
        return parser.parse_args(argv)

    def add_arg_definitions(self, parser: argparse.ArgumentParser) -> None:
        group = parser.add_mutually_exclusive_group(required=False)
        group.add_argument("-s",
                            "--silent",
                            action = "store_true",
                            dest = "silent",
                            required = False,
                            help = "supress non-error logging")
        group.add_argument("-v",
                            "--verbose",
                            action = "store_true",
                            dest = "verbose",
                            required = False,
                            help = "log debug-level processing information")

    def add_arg_definitions_output(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("-o",
                            "--output-dir",
                            type = str,
                            required = True,
                            help = "directory for the run's output files")
        parser.add_argument("--force",
                            action = "store_true",
                            help = "write into a non-empty output directory")

    def add_arg_definitions_threads(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--threads",
                            type = int,
                            default = None,
                            help = f"parallel workers (default: ${THREADS_ENV} or 1)")

    def add_arg_definitions_replay(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--replay",
                            type = str,
                            default = None,
                            metavar = "MANIFEST",
                            help = "re-run the argument vector recorded in a manifest.json; "
                                   "further options on the command line override it")

    def create_logger(self, logger_name: Optional[str]) -> logging.Logger:
        coloredlogs.install(milliseconds=True, level='WARNING', logger=logging.getLogger())
        logger = logging.getLogger(logger_name or os.path.basename(__file__))
        if self.args.verbose:
            coloredlogs.set_level(logging.DEBUG)
            logger.debug("debug logging enabled")
        elif self.args.silent:
            coloredlogs.set_level(logging.ERROR)
        else:
            coloredlogs.set_level(logging.INFO)
        return logger

    def print_args(self) -> None:
        self.logger.info("argument and option values:")
        for k,v in sorted(vars(self.args).items()):
            self.logger.info("...{0}: {1}".format(k,v))

    def get_configuration(self, fn: str='config.json') -> dict:
        try:
            with open(fn) as f:
                return json.load(f)
        except OSError as e:
            raise IcarhIOError(f"Cannot read configuration file {fn}: {e}")
        except json.JSONDecodeError as e:
            raise IcarhValidationError(f"Invalid JSON in {fn}: {e.msg} (line {e.lineno}, column {e.colno})")

    def resolve_replay(self, argv: list) -> list:
        """Prepend the argument vector recorded in the manifest named by --replay."""
        if '--replay' not in argv:
            return argv
        position = argv.index('--replay')
        if position + 1 >= len(argv):
            return argv
        recorded = self.get_configuration(argv[position + 1]).get('argv')
        if not isinstance(recorded, list):
            raise IcarhValidationError(f"Manifest {argv[position + 1]} has no recorded argv")
        return recorded + argv[:position] + argv[position + 2:]

    def threads(self) -> int:
        value = self.args.threads if getattr(self.args, 'threads', None) is not None else os.environ.get(THREADS_ENV, 1)
        try:
            value = int(value)
        except ValueError:
            raise IcarhValidationError(f"{THREADS_ENV} must be an integer, got {value!r}")
        if value < 1:
            raise IcarhValidationError(f"thread count must be at least 1, got {value}")
        return value

    def prepare_output_dir(self, path: str) -> Path:
        directory = Path(path)
        if directory.exists() and not directory.is_dir():
            raise IcarhIOError(f"Output path {directory} is not a directory")
        if directory.exists() and any(directory.iterdir()) and not getattr(self.args, 'force', False):
            self.logger.error(f"Output directory {directory} is not empty")
            raise IcarhIOError(f"Output directory {directory} is not empty; use --force to overwrite")
        directory.mkdir(parents=True, exist_ok=True)
        return directory

    def handle_error(self, error: Exception) -> int:
        """Log an exception and map it to the process exit code."""
        if isinstance(error, IcarhValidationError):
            self.logger.error(f"Invalid input: {error}")
            return EXIT_VALIDATION
        if isinstance(error, IcarhNumericError):
            self.logger.error(f"Numerical failure: {error}")
            return EXIT_NUMERIC
        if isinstance(error, (IcarhIOError, OSError)):
            self.logger.error(f"I/O error: {error}")
            return EXIT_IO
        if isinstance(error, IcarhError):
            self.logger.error(f"iCARH error: {error}")
            return EXIT_UNEXPECTED
        self.logger.error(f"Unexpected error: {error}")
        if self.args.verbose:
            traceback.print_exc()
        return EXIT_UNEXPECTED

    @abstractmethod
    def go(self, argv: list) -> int:
        try:
            self.argv = self.resolve_replay(list(argv))
        except IcarhError as e:
            self.args = Namespace(verbose=False, silent=False)
            self.logger = self.create_logger(type(self).__name__)
            return self.handle_error(e)
        self.args = self.parse_args(self.argv)
        self.logger = self.create_logger(type(self).__name__)
        self.print_args()
        return 0
