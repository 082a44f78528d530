from __future__ import annotations

import csv
import sys
from collections.abc import Mapping
from collections.abc import Sequence
from typing import TextIO

from panoscan.errors import DataError

GREEN = '\033[32m'
YELLOW = '\033[33m'
RED = '\033[31m'
BOLD = '\033[1m'

_quiet = False


def set_quiet(quiet: bool) -> None:
    global _quiet
    _quiet = quiet


def color(s: str, code: str, stream: TextIO | None = None) -> str:
    stream = sys.stdout if stream is None else stream
    if stream.isatty():
        return '{}{}{}'.format(code, s, '\033[m')
    else:
        return s


def status(s: str) -> None:
    if not _quiet:
        print(s)


def wrote(path: str) -> None:
    status(color(f'>>> wrote {path}', GREEN))


def warn(s: str) -> None:
    print(color(s, YELLOW, sys.stderr), file=sys.stderr)


def error(s: str) -> None:
    print(color(s, RED, sys.stderr), file=sys.stderr)


class CsvLog:
    """Appends one flushed row per call, so a crashed run keeps its
    history."""

    def __init__(self, path: str, columns: Sequence[str]) -> None:
        self.path = path
        self.columns = tuple(columns)
        try:
            self._file = open(path, 'w', newline='')
        except OSError as e:
            raise DataError(f'cannot write {path}: {e}')
        self._writer = csv.DictWriter(self._file, fieldnames=self.columns)
        self._writer.writeheader()
        self._file.flush()

    def row(self, values: Mapping[str, object]) -> None:
        extra = set(values) - set(self.columns)
        if extra:
            raise ValueError(f'unknown columns for {self.path}: {sorted(extra)}')
        self._writer.writerow({
            k: format_cell(values.get(k, '')) for k in self.columns
        })
        self._file.flush()

    def close(self) -> None:
        self._file.close()

    def __enter__(self) -> CsvLog:
        return self

    def __exit__(self, *args: object) -> None:
        self.close()


def format_cell(v: object) -> object:
    if isinstance(v, float):
        return repr(v)
    return v
