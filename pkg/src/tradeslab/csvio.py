"""CSV tables (RFC 4180 subset, '.' decimal separator, no locale).

Numbers are written so they parse back to the same value: integral values
below 2**53 as plain integers (``0``, ``1``), other floats with ``repr``.
"""

from __future__ import annotations

import csv
import io
import math
from fractions import Fraction
from numbers import Integral, Real

import numpy as np

from .fsutil import atomic_write_bytes

_EXACT_INT_LIMIT = 2**53


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, Integral):
        return str(int(v))
    if isinstance(v, Fraction):
        if v.denominator == 1:
            return str(v.numerator)
        v = float(v)
    if isinstance(v, Real):
        v = float(v)
        if math.isfinite(v) and v.is_integer() and abs(v) < _EXACT_INT_LIMIT:
            return str(int(v))
        return repr(v)
    return str(v)


def parse_value(s: str):
    if s in ("true", "false"):
        return s == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def table_to_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        if isinstance(row, dict):
            row = [row[h] for h in header]
        w.writerow([format_value(v) for v in row])
    return buf.getvalue()


def write_table(path, header, rows):
    atomic_write_bytes(path, table_to_text(header, rows).encode("utf-8"))


def parse_table(text: str):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        return [], []
    return rows[0], [[parse_value(v) for v in r] for r in rows[1:]]


def read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_table(fh.read())
