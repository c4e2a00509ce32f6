"""JSON emission with pinned float formatting.

Every float is rendered with 17 significant digits, which is enough for any
binary64 value to round-trip bit-exactly through text.  Stock ``json.dumps``
uses ``repr`` (shortest round-trip form), which also round-trips but is not
byte-stable across writer implementations; file formats and wire frames in
this package pin the 17-digit form instead.  Key order is insertion order,
so callers build dicts in the documented field order.
"""

from __future__ import annotations

import json
import math
from typing import Any

import numpy as np


def format_float(x: float) -> str:
    """17-significant-digit decimal for a finite float, always float-typed."""
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        raise ValueError(f"non-finite value {x!r} cannot be serialized")
    s = format(x, ".17g")
    # "64" would parse back as an int; force a float-typed literal.
    if not any(c in s for c in ".eE"):
        s += ".0"
    return s


def _emit(obj: Any, parts: list[str], indent: int | None, level: int) -> None:
    if obj is None:
        parts.append("null")
    elif obj is True:
        parts.append("true")
    elif obj is False:
        parts.append("false")
    elif isinstance(obj, (int, np.integer)) and not isinstance(obj, bool):
        parts.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        parts.append(format_float(obj))
    elif isinstance(obj, str):
        parts.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, dict):
        _emit_container(obj.items(), parts, indent, level, "{}", emit_keys=True)
    elif isinstance(obj, (list, tuple, np.ndarray)):
        items = obj.tolist() if isinstance(obj, np.ndarray) else obj
        _emit_container(items, parts, indent, level, "[]", emit_keys=False)
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def _emit_container(items, parts, indent, level, braces, *, emit_keys):
    items = list(items)
    if not items:
        parts.append(braces)
        return
    pad = "" if indent is None else "\n" + " " * (indent * (level + 1))
    end_pad = "" if indent is None else "\n" + " " * (indent * level)
    parts.append(braces[0])
    for i, item in enumerate(items):
        if i:
            parts.append(",")
        parts.append(pad)
        if emit_keys:
            key, value = item
            if not isinstance(key, str):
                raise TypeError("object keys must be strings")
            parts.append(json.dumps(key, ensure_ascii=False))
            parts.append(": " if indent is not None else ":")
            _emit(value, parts, indent, level + 1)
        else:
            _emit(item, parts, indent, level + 1)
    parts.append(end_pad)
    parts.append(braces[1])


def dumps(obj: Any, indent: int | None = None) -> str:
    """Serialize ``obj`` to a JSON string with 17-digit floats."""
    parts: list[str] = []
    _emit(obj, parts, indent, 0)
    return "".join(parts)
