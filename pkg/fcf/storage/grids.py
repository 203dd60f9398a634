"""Portable float grids (``fcf-grid 1``): a ``rows cols`` line, then one line per row."""
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from fcf.exceptions import InvalidInputError, ParseError
from fcf.storage.banks import _content_lines
from fcf.utils.numeric import format_sig

GRID_MAGIC = "fcf-grid 1"
GRID_DIGITS = 9


def dump_grid(grid: np.ndarray) -> str:
    grid = np.atleast_2d(np.asarray(grid, dtype=np.float64))
    if grid.ndim != 2:
        raise InvalidInputError(f"grid must be 2-D, got shape {grid.shape}")
    lines = [GRID_MAGIC, f"{grid.shape[0]} {grid.shape[1]}"]
    lines.extend(" ".join(format_sig(v, GRID_DIGITS) for v in row) for row in grid)
    return "\n".join(lines) + "\n"


def save_grid(grid: np.ndarray, path, header: Iterable[str] = ()) -> None:
    text = "".join(f"# {line}\n" for line in header) + dump_grid(grid)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")


def parse_grid(text: str, path: Optional[str] = None) -> np.ndarray:
    lines = _content_lines(text)
    if len(lines) < 2 or lines[0][1] != GRID_MAGIC:
        raise ParseError(f"missing '{GRID_MAGIC}' header", path=path)
    number, size = lines[1]
    try:
        rows, cols = (int(v) for v in size.split())
    except ValueError:
        raise ParseError(f"expected 'rows cols', got {size!r}", path=path, line=number)
    if len(lines) != rows + 2:
        raise ParseError(f"expected {rows} rows, found {len(lines) - 2}", path=path)
    out = np.empty((rows, cols))
    for r, (number, line) in enumerate(lines[2:]):
        try:
            values = [float(v) for v in line.split()]
        except ValueError:
            raise ParseError(f"non-numeric value in {line!r}", path=path, line=number)
        if len(values) != cols:
            raise ParseError(f"expected {cols} values, got {len(values)}", path=path, line=number)
        out[r] = values
    return out


def load_grid(path) -> np.ndarray:
    return parse_grid(Path(path).read_text(encoding="utf-8"), path=str(path))
