"""Canonical JSON: the byte form that every signature and hash is taken over.

Rules: UTF-8, object keys sorted by their UTF-8 bytes, no whitespace,
integers in shortest decimal form, and strings escaped minimally (only
``"``, ``\\`` and C0 control characters). Floats and null are rejected, so
equal documents always produce equal bytes.
"""

from __future__ import annotations

import json
import re
from typing import Any

from .errors import MalformedDocument, UnsupportedValue

_SHORT_ESCAPES = {
    '"': '\\"',
    "\\": "\\\\",
    "\b": "\\b",
    "\f": "\\f",
    "\n": "\\n",
    "\r": "\\r",
    "\t": "\\t",
}

_NEEDS_ESCAPE = re.compile(r'[\x00-\x1f"\\]')


def _escape_char(m: "re.Match") -> str:
    ch = m.group()
    return _SHORT_ESCAPES.get(ch) or f"\\u{ord(ch):04x}"


def _escape(s: str) -> str:
    return '"' + _NEEDS_ESCAPE.sub(_escape_char, s) + '"'


def _encode(value: Any, out: list) -> None:
    # bool is an int subclass; test it first
    if value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, int):
        out.append(str(int(value)))
    elif isinstance(value, str):
        out.append(_escape(value))
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _encode(item, out)
        out.append("]")
    elif isinstance(value, dict):
        try:
            keys = sorted(value, key=lambda k: k.encode("utf-8"))
        except (AttributeError, UnicodeEncodeError):
            raise UnsupportedValue("object keys must be valid unicode strings") from None
        out.append("{")
        for i, k in enumerate(keys):
            if i:
                out.append(",")
            out.append(_escape(k))
            out.append(":")
            _encode(value[k], out)
        out.append("}")
    elif isinstance(value, float):
        raise UnsupportedValue(f"floating point value {value!r} is not allowed")
    elif value is None:
        raise UnsupportedValue("null is not allowed")
    else:
        raise UnsupportedValue(f"unsupported type {type(value).__name__}")


def canonical_bytes(value: Any) -> bytes:
    out: list = []
    _encode(value, out)
    try:
        return "".join(out).encode("utf-8")
    except UnicodeEncodeError:
        raise UnsupportedValue("strings must be valid unicode (no lone surrogates)") from None


def _reject_float(text: str):
    raise MalformedDocument(f"floating point literal {text} is not allowed")


def _reject_constant(text: str):
    raise MalformedDocument(f"literal {text} is not allowed")


def _pairs(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise MalformedDocument(f"duplicate key {k!r}")
        out[k] = v
    return out


def _reject_nulls(value):
    if value is None:
        raise MalformedDocument("null is not allowed")
    if isinstance(value, list):
        for v in value:
            _reject_nulls(v)
    elif isinstance(value, dict):
        for v in value.values():
            _reject_nulls(v)


def loads(data) -> Any:
    """Parse JSON text into the canonical value domain.

    Accepts any well-formed JSON (whitespace, any key order) but rejects
    floats, null, NaN/Infinity and duplicate keys.
    """
    if isinstance(data, (bytes, bytearray)):
        try:
            data = bytes(data).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedDocument(f"not UTF-8: {exc}") from None
    try:
        value = json.loads(
            data,
            parse_float=_reject_float,
            parse_constant=_reject_constant,
            object_pairs_hook=_pairs,
        )
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    _reject_nulls(value)
    return value


def loads_strict(data: bytes) -> Any:
    """Parse bytes that must already be in canonical form."""
    value = loads(data)
    if canonical_bytes(value) != bytes(data):
        raise MalformedDocument("input is not in canonical form")
    return value
