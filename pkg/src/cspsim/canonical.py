"""Canonical JSON encoding and strict decoding helpers.

Canonical form: object keys sorted by code point, no insignificant
whitespace, UTF-8 with minimal escaping, integers only (floats rejected).
Digests are SHA-256 rendered as lowercase hex; binary blobs are base64.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
from typing import Any

from .errors import FieldInvalid

ZERO_HASH = "0" * 64


def _check(obj: Any, path: str = "$") -> None:
    if obj is None or isinstance(obj, (str, bool, int)):
        return
    if isinstance(obj, float):
        raise FieldInvalid(f"{path}: floats are not allowed in canonical form")
    if isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            _check(item, f"{path}[{i}]")
        return
    if isinstance(obj, dict):
        for key, value in obj.items():
            if not isinstance(key, str):
                raise FieldInvalid(f"{path}: object keys must be strings")
            _check(value, f"{path}.{key}")
        return
    raise FieldInvalid(f"{path}: unsupported type {type(obj).__name__}")


def canonical_json(obj: Any) -> bytes:
    """Serialize ``obj`` to canonical UTF-8 JSON bytes."""
    _check(obj)
    return json.dumps(
        obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


def _no_floats(text: str) -> Any:
    raise ValueError(f"non-integer number {text!r}")


def parse_canonical(data: bytes | str) -> Any:
    """Parse JSON and insist the input already was in canonical form.

    Raises ``ValueError`` on malformed input, floats, or any byte-level
    deviation from the canonical encoding.
    """
    raw = data.encode("utf-8") if isinstance(data, str) else bytes(data)
    text = raw.decode("utf-8")
    obj = json.loads(text, parse_float=_no_floats, parse_constant=_no_floats)
    if canonical_json(obj) != raw:
        raise ValueError("input is not in canonical form")
    return obj


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_of(obj: Any) -> str:
    return sha256_hex(canonical_json(obj))


def b64encode(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def b64decode_strict(text: str) -> bytes:
    """Decode base64, rejecting any non-canonical spelling."""
    if not isinstance(text, str):
        raise ValueError("base64 value must be a string")
    try:
        data = base64.b64decode(text, validate=True)
    except binascii.Error as exc:
        raise ValueError(f"bad base64: {exc}") from None
    if base64.b64encode(data).decode("ascii") != text:
        raise ValueError("non-canonical base64")
    return data


def check_hex_digest(text: Any) -> str:
    """Return ``text`` if it is a 64-char lowercase hex digest."""
    if not isinstance(text, str) or len(text) != 64 or any(c not in "0123456789abcdef" for c in text):
        raise ValueError(f"not a lowercase hex digest: {text!r}")
    return text
