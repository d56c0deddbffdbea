"""Plot-ready table and JSON writers.

Numbers are written with ``format(x, '.<p>g')``, which ignores the locale.
Missing values are empty CSV fields and JSON nulls.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np


def format_number(x, precision: int = 12) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return ""
    return format(x, f".{precision}g")


def _json_value(x, precision):
    if x is None:
        return None
    if isinstance(x, dict):
        return {str(k): _json_value(v, precision) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_json_value(v, precision) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return None
        return float(format(x, f".{precision}g"))
    return x


def write_json(path: Path, payload: dict, precision: int = 12) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_json_value(payload, precision), indent=2, sort_keys=False) + "\n", encoding="utf-8")
    return path


def write_table(directory: Path, stem: str, header, rows, fmt: str = "csv", precision: int = 12) -> Path:
    """Write ``stem.csv`` (comma separated) or ``stem.json`` (column lists)."""
    directory = Path(directory)
    if fmt == "json":
        columns = {name: [row[i] for row in rows] for i, name in enumerate(header)}
        return write_json(directory / f"{stem}.json", {"columns": columns}, precision)
    lines = [",".join(header)]
    lines += [",".join(format_number(v, precision) for v in row) for row in rows]
    path = directory / f"{stem}.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
