"""Byte-stable CSV output."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np

__all__ = ["emit_csv", "format_value", "csv_text"]


def format_value(v) -> str:
    """Render one cell; floats use 17 significant digits.

    Raises
    ------
    ValueError
        ``v`` is a NaN.
    """
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        x = float(v)
        if math.isnan(x):
            raise ValueError("refusing to write NaN")
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if x == 0:
            return "0"
        return format(x, ".17g")
    return str(v)


def csv_text(header, records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    width = len(header)
    for i, rec in enumerate(records):
        rec = tuple(rec)
        if len(rec) != width:
            raise ValueError(f"record {i} has {len(rec)} fields, header has {width}")
        try:
            writer.writerow([format_value(v) for v in rec])
        except ValueError as exc:
            raise ValueError(f"record {i}: {exc}") from None
    return buf.getvalue()


def emit_csv(records, path, header) -> Path:
    """Write ``records`` under ``header`` to ``path``.

    The whole file is rendered before anything is written, so a NaN never
    leaves a partial file behind.  An empty record set gives a header-only
    file.
    """
    text = csv_text(header, records)
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path
