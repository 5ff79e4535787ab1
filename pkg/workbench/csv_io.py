"""
CSV input and output.

Input files carry a header whose first two columns are `t,x`; further
columns (such as the `truth` column of simulated files) are ignored.
Blank lines and lines starting with `#` are skipped. Output floats are
written with repr precision so that files round-trip exactly.
"""

import csv
import logging
import math
from pathlib import Path
from typing import Iterable, List, Sequence, Union

import numpy as np

from rhlp.core import Dataset
from rhlp.exceptions import InputFormatError, InvalidDataset

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

INPUT_HEADER = ['t', 'x']


def _parse_number(text: str, column: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise InputFormatError(f"{column}={text.strip()!r} is not a number", line)
    if not math.isfinite(value):
        raise InputFormatError(f"{column}={text.strip()!r} is not finite", line)
    return value


def read_observations(path: PathLike) -> Dataset:
    """
    Read a `t,x` CSV into a Dataset.

    Raises:
        InputFormatError: missing file, bad header, bad row; the message
            names the 1-based line
    """
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as exc:
        raise InputFormatError(f"cannot read {path}: {exc.strerror or exc}")

    width = 0
    times: List[float] = []
    values: List[float] = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith('#'):
            continue
        fields = next(csv.reader([stripped]))
        if not width:
            if [field.strip() for field in fields[:2]] != INPUT_HEADER:
                raise InputFormatError(f"expected header 't,x', got {stripped!r}", line_number)
            width = len(fields)
            continue
        if len(fields) != width:
            raise InputFormatError(f"expected {width} fields, got {len(fields)}", line_number)
        times.append(_parse_number(fields[0], 't', line_number))
        values.append(_parse_number(fields[1], 'x', line_number))

    if not width:
        raise InputFormatError(f"{path} has no 't,x' header")
    if not times:
        raise InputFormatError(f"{path} has no data rows")
    try:
        data = Dataset(np.array(times), np.array(values))
    except InvalidDataset as exc:
        raise InputFormatError(str(exc))
    logger.info(f"Read {data.n} observations from {path}")
    return data


def format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_rows(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Write a CSV with the given header; parent directories are created."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(header)
        count = 0
        for row in rows:
            writer.writerow([format_cell(value) for value in row])
            count += 1
    logger.info(f"Wrote {count} rows to {path}")
    return path
