"""JSON/CSV emission with lossless float formatting.

All numeric output uses the %.17g format, which round-trips every IEEE double
exactly; reports written by different runs of the same seed are byte-identical.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np


def format_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return f"{x:.17g}"


class _Num(float):
    pass


def _tag_floats(obj):
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        return _Num(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_tag_floats(v) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {str(k): _tag_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_tag_floats(v) for v in obj]
    return obj


def dumps(obj, indent: int = 2) -> str:
    """json.dumps with every float rendered at 17 significant digits."""
    tagged = _tag_floats(obj)

    def encode(o, depth):
        pad = " " * (indent * depth)
        pad_in = " " * (indent * (depth + 1))
        if isinstance(o, _Num):
            return format_float(o)
        if isinstance(o, bool):
            return "true" if o else "false"
        if o is None:
            return "null"
        if isinstance(o, (int,)):
            return str(o)
        if isinstance(o, str):
            return json.dumps(o)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f'{pad_in}{json.dumps(str(k))}: {encode(v, depth + 1)}'
                     for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + pad + "}"
        if isinstance(o, list):
            if not o:
                return "[]"
            items = [f"{pad_in}{encode(v, depth + 1)}" for v in o]
            return "[\n" + ",\n".join(items) + "\n" + pad + "]"
        raise TypeError(f"cannot serialize {type(o)!r}")

    return encode(tagged, 0)


def dump(obj, path) -> None:
    Path(path).write_text(dumps(obj) + "\n", encoding="utf-8")


def load(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_csv(path, header: str, columns) -> None:
    """Write columns (array-like of equal length, or an (n, k) array) as CSV."""
    arr = np.asarray(columns, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    lines = [header]
    for row in arr:
        lines.append(",".join(format_float(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_csv(path) -> tuple[list[str], np.ndarray]:
    text = Path(path).read_text(encoding="utf-8").strip().splitlines()
    names = text[0].split(",")
    data = np.array([[float(v) for v in line.split(",")] for line in text[1:]])
    return names, data
