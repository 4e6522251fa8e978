"""JSON reading/writing shared by every file format in the package.

Floats are written with 17 significant digits so a load/save cycle
reproduces every double exactly; key order is whatever the caller built.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import FormatError, SchemaError

FORMAT_VERSION = 1


def _float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"cannot serialise non-finite float {x!r}")
    s = format(x, ".17g")
    if "e" not in s and "." not in s and "inf" not in s:
        s += ".0"
    return s


def _emit(obj, indent: int, level: int, out: list) -> None:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        items = list(obj.items())
        for k, (key, val) in enumerate(items):
            out.append(f"{pad}{json.dumps(str(key))}: ")
            _emit(val, indent, level + 1, out)
            out.append(",\n" if k < len(items) - 1 else "\n")
        out.append(end + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            out.append("[]")
        elif all(isinstance(v, (int, float, np.floating, np.integer)) and not isinstance(v, bool) for v in seq):
            # numeric vectors stay on one line
            out.append("[" + ", ".join(_scalar(v) for v in seq) + "]")
        else:
            out.append("[\n")
            for k, val in enumerate(seq):
                out.append(pad)
                _emit(val, indent, level + 1, out)
                out.append(",\n" if k < len(seq) - 1 else "\n")
            out.append(end + "]")
    else:
        out.append(_scalar(obj))


def _scalar(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _float(float(v))
    if isinstance(v, str):
        return json.dumps(v)
    raise TypeError(f"cannot serialise {type(v).__name__}")


def dumps(obj, indent: int = 1) -> str:
    out: list = []
    _emit(obj, indent, 0, out)
    out.append("\n")
    return "".join(out)


def write_json(obj, path) -> None:
    Path(path).write_text(dumps(obj))


def loads(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed JSON: {exc.msg}", line=exc.lineno) from None


def read_json(path):
    return loads(Path(path).read_text())


def require(d, key, path="", kind=None):
    """Fetch ``d[key]`` or raise SchemaError naming the missing field."""
    where = f"{path}.{key}" if path else key
    if not isinstance(d, dict):
        raise SchemaError("expected an object", path or "<root>")
    if key not in d:
        raise SchemaError("missing field", where)
    val = d[key]
    if kind is not None and not isinstance(val, kind):
        raise SchemaError(f"expected {getattr(kind, '__name__', kind)}", where)
    return val


def check_keys(d, allowed, path="") -> None:
    extra = sorted(set(d) - set(allowed))
    if extra:
        where = f"{path}.{extra[0]}" if path else extra[0]
        raise SchemaError("unknown field", where)


def check_header(d, kind: str, path="") -> None:
    if require(d, "format", path) != kind:
        raise SchemaError(f"expected format {kind!r}", f"{path}.format" if path else "format")
    if require(d, "format_version", path) != FORMAT_VERSION:
        raise SchemaError("unsupported format_version", f"{path}.format_version" if path else "format_version")


def vector(d, key, n, path=""):
    val = require(d, key, path)
    where = f"{path}.{key}" if path else key
    if not isinstance(val, list) or len(val) != n or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in val):
        raise SchemaError(f"expected {n} numbers", where)
    return np.array(val, float)
