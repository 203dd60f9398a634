"""Filter-bank text format.

::

    fcf-bank 1
    family checkerboards
    cell_px 6
    eval_stride_px 6
    per_channel 0
    filters 2
    filter u1x1 1 1 -
    1
    filter h1x2s1 1 2 -
    1 -1

Integer weights are written as integers; real weights with 9 significant
digits. Blank lines and ``#`` comments are ignored.
"""
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

import numpy as np

from fcf.exceptions import InvalidInputError, ParseError
from fcf.services.filterbank import Filter, FilterBank, FilterFamily
from fcf.utils.numeric import format_sig

logger = logging.getLogger(__name__)

BANK_MAGIC = "fcf-bank 1"


def _format_weight(value: float) -> str:
    if value == int(value):
        return str(int(value))
    return format_sig(value, 9)


def dump_bank(bank: FilterBank) -> str:
    lines = [
        BANK_MAGIC,
        f"family {bank.family.value}",
        f"cell_px {bank.cell_px}",
        f"eval_stride_px {bank.eval_stride_px}",
        f"per_channel {int(bank.per_channel)}",
        f"filters {len(bank.filters)}",
    ]
    for f in bank.filters:
        channel = "-" if f.channel is None else str(f.channel)
        lines.append(f"filter {f.id} {f.rows} {f.cols} {channel}")
        for row in f.weights:
            lines.append(" ".join(_format_weight(v) for v in row))
    return "\n".join(lines) + "\n"


def save_bank(bank: FilterBank, path, header: Iterable[str] = ()) -> None:
    text = "".join(f"# {line}\n" for line in header) + dump_bank(bank)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")
    logger.info(f"Saved {len(bank)}-filter {bank.family.value} bank to {path}")


def _content_lines(text: str) -> List[Tuple[int, str]]:
    out = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            out.append((number, line))
    return out


def _expect(lines, pos: int, key: str, path) -> Tuple[str, int]:
    if pos >= len(lines):
        raise ParseError(f"missing '{key}'", path=path)
    number, line = lines[pos]
    parts = line.split()
    if parts[0] != key or len(parts) != 2:
        raise ParseError(f"expected '{key} <value>', got {line!r}", path=path, line=number)
    return parts[1], number


def _int(value: str, path, line: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise ParseError(f"expected an integer, got {value!r}", path=path, line=line)


def parse_bank_lines(lines: List[Tuple[int, str]], path: Optional[str] = None) -> FilterBank:
    if not lines or lines[0][1] != BANK_MAGIC:
        raise ParseError(f"missing '{BANK_MAGIC}' header", path=path, line=lines[0][0] if lines else None)
    family_text, line = _expect(lines, 1, "family", path)
    try:
        family = FilterFamily(family_text)
    except ValueError:
        raise ParseError(f"unknown family {family_text!r}", path=path, line=line)
    value, line = _expect(lines, 2, "cell_px", path)
    cell_px = _int(value, path, line)
    value, line = _expect(lines, 3, "eval_stride_px", path)
    stride = _int(value, path, line)
    value, line = _expect(lines, 4, "per_channel", path)
    per_channel = _int(value, path, line) == 1
    value, line = _expect(lines, 5, "filters", path)
    count = _int(value, path, line)

    filters: List[Filter] = []
    pos = 6
    for _ in range(count):
        if pos >= len(lines):
            raise ParseError(f"expected {count} filters, found {len(filters)}", path=path)
        number, header = lines[pos]
        parts = header.split()
        if len(parts) != 5 or parts[0] != "filter":
            raise ParseError(f"expected 'filter <id> <rows> <cols> <channel>', got {header!r}", path=path, line=number)
        fid = parts[1]
        rows = _int(parts[2], path, number)
        cols = _int(parts[3], path, number)
        channel = None if parts[4] == "-" else _int(parts[4], path, number)
        if rows < 1 or cols < 1:
            raise ParseError(f"invalid size {rows}x{cols}", path=path, line=number, filter_id=fid)
        if pos + rows >= len(lines):
            raise ParseError("truncated weights", path=path, line=number, filter_id=fid)
        weights = []
        for r in range(rows):
            row_number, row_text = lines[pos + 1 + r]
            try:
                row = [float(v) for v in row_text.split()]
            except ValueError:
                raise ParseError(f"non-numeric weight in {row_text!r}", path=path, line=row_number, filter_id=fid)
            if len(row) != cols:
                raise ParseError(
                    f"dimension mismatch: expected {cols} weights, got {len(row)}",
                    path=path,
                    line=row_number,
                    filter_id=fid,
                )
            weights.append(row)
        try:
            filters.append(Filter(id=fid, weights=np.array(weights), channel=channel))
        except InvalidInputError as e:
            raise ParseError(str(e), path=path, line=number, filter_id=fid)
        pos += rows + 1

    try:
        return FilterBank(
            family=family,
            filters=tuple(filters),
            cell_px=cell_px,
            eval_stride_px=stride,
            per_channel=per_channel,
        )
    except InvalidInputError as e:
        raise ParseError(str(e), path=path)


def parse_bank(text: str, path: Optional[str] = None) -> FilterBank:
    return parse_bank_lines(_content_lines(text), path=path)


def load_bank(path) -> FilterBank:
    bank = parse_bank(Path(path).read_text(encoding="utf-8"), path=str(path))
    logger.info(f"Loaded {len(bank)}-filter {bank.family.value} bank from {path}")
    return bank
