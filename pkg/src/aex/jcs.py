"""I-JSON parsing and RFC 8785 (JCS) canonical serialization.

Values are plain Python trees: ``None``, ``bool``, ``int``/``float``, ``str``,
``list`` and ``dict`` with string keys.  Integers are kept as ``int`` for
convenience but must lie in the I-JSON safe range +/-(2**53 - 1); they are
serialized through the same double formatting as floats, so ``1``, ``1.0``
and ``1e0`` all canonicalize to ``1``.  Larger integer literals on the wire
become floats when that loses nothing visible; otherwise they are rejected.
"""

from __future__ import annotations

import json
import math
from typing import Any

from .errors import NonCanonicalizable

__all__ = [
    "ATTESTATION_MEMBER",
    "canonical_bytes",
    "format_number",
    "jcs_serialize",
    "parse",
    "strip_attestation",
    "validate_ijson",
]

ATTESTATION_MEMBER = "attestation"

JsonValue = Any


def _check_string(s: str, path: str) -> None:
    try:
        s.encode("utf-8")
    except UnicodeEncodeError:
        raise NonCanonicalizable("string contains a lone surrogate", path=path) from None


MAX_SAFE_INT = 2**53 - 1


def _check_int(n: int, path: str) -> None:
    if abs(n) > MAX_SAFE_INT:
        raise NonCanonicalizable(f"integer {n} is outside the I-JSON safe range", path=path)


def validate_ijson(value: JsonValue, _path: str = "$") -> JsonValue:
    """Return ``value`` unchanged if it is a canonicalizable I-JSON tree.

    Raises :class:`NonCanonicalizable` for non-finite numbers, integers outside
    +/-(2**53 - 1), lone surrogates, non-string keys or any
    non-JSON Python type.
    """
    if value is None or isinstance(value, bool):
        return value
    if isinstance(value, int):
        _check_int(value, _path)
    elif isinstance(value, float):
        if not math.isfinite(value):
            raise NonCanonicalizable("non-finite number", path=_path)
    elif isinstance(value, str):
        _check_string(value, _path)
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            validate_ijson(item, f"{_path}[{i}]")
    elif isinstance(value, dict):
        for key, item in value.items():
            if not isinstance(key, str):
                raise NonCanonicalizable("object key is not a string", path=_path)
            _check_string(key, _path)
            validate_ijson(item, f"{_path}.{key}")
    else:
        raise NonCanonicalizable(f"unsupported type {type(value).__name__}", path=_path)
    return value


# -- parsing -------------------------------------------------------------------

def _no_duplicates(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in pairs:
        if key in out:
            raise NonCanonicalizable(f"duplicate member name {key!r}")
        out[key] = value
    return out


def _reject_constant(name: str) -> Any:
    raise NonCanonicalizable(f"non-finite number {name}")


def _parse_float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise NonCanonicalizable(f"number {text} overflows a double")
    return value


def _parse_int(text: str) -> int | float:
    # Wire numbers are doubles.  Beyond the safe range a literal is accepted
    # only when nothing is lost: either the double holds it exactly or the
    # literal is already that double's canonical rendering.
    value = int(text)
    if abs(value) <= MAX_SAFE_INT:
        return value
    try:
        as_float = float(value)
    except OverflowError:
        raise NonCanonicalizable(f"integer {text} overflows a double") from None
    if as_float != value and format_number(as_float) != str(value):
        raise NonCanonicalizable(f"integer {text} is not exactly representable as a double")
    return as_float


def parse(text: str | bytes) -> JsonValue:
    """Parse JSON text, policing I-JSON rules at the boundary.

    Duplicate member names, NaN/Infinity, out-of-range numbers and lone
    surrogates all raise :class:`NonCanonicalizable`.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise NonCanonicalizable(f"invalid UTF-8: {exc}") from None
    try:
        value = json.loads(
            text,
            object_pairs_hook=_no_duplicates,
            parse_constant=_reject_constant,
            parse_float=_parse_float,
            parse_int=_parse_int,
        )
    except json.JSONDecodeError as exc:
        raise NonCanonicalizable(f"invalid JSON: {exc}") from None
    return validate_ijson(value)


# -- serialization -------------------------------------------------------------

def format_number(value: float | int) -> str:
    """Format a double the way ECMAScript ``Number.prototype.toString`` does."""
    if isinstance(value, int):
        _check_int(value, "$")
        value = float(value)
    if not math.isfinite(value):
        raise NonCanonicalizable("non-finite number")
    if value == 0:
        return "0"
    if value < 0:
        return "-" + format_number(-value)

    # repr() yields the shortest round-trip digit string.
    mantissa, _, exp_text = repr(value).partition("e")
    whole, _, frac = mantissa.partition(".")
    digits = whole + frac
    point = len(whole) + (int(exp_text) if exp_text else 0)
    stripped = digits.lstrip("0")
    point -= len(digits) - len(stripped)
    digits = stripped.rstrip("0")
    k, n = len(digits), point

    if k <= n <= 21:
        return digits + "0" * (n - k)
    if 0 < n <= 21:
        return digits[:n] + "." + digits[n:]
    if -6 < n <= 0:
        return "0." + "0" * (-n) + digits
    exp = n - 1
    sign = "+" if exp >= 0 else "-"
    head = digits if k == 1 else digits[0] + "." + digits[1:]
    return f"{head}e{sign}{abs(exp)}"


def _utf16_key(key: str) -> bytes:
    return key.encode("utf-16-be")


def _emit(value: JsonValue, out: list[str], path: str) -> None:
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, (int, float)):
        try:
            out.append(format_number(value))
        except NonCanonicalizable as exc:
            raise NonCanonicalizable(exc.message, path=path) from None
    elif isinstance(value, str):
        _check_string(value, path)
        out.append(json.dumps(value, ensure_ascii=False))
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _emit(item, out, f"{path}[{i}]")
        out.append("]")
    elif isinstance(value, dict):
        for key in value:
            if not isinstance(key, str):
                raise NonCanonicalizable("object key is not a string", path=path)
            _check_string(key, path)
        out.append("{")
        for i, key in enumerate(sorted(value, key=_utf16_key)):
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=False))
            out.append(":")
            _emit(value[key], out, f"{path}.{key}")
        out.append("}")
    else:
        raise NonCanonicalizable(f"unsupported type {type(value).__name__}", path=path)


def jcs_serialize(value: JsonValue) -> bytes:
    """Return the RFC 8785 canonical UTF-8 bytes of ``value``."""
    out: list[str] = []
    _emit(value, out, "$")
    return "".join(out).encode("utf-8")


canonical_bytes = jcs_serialize


def strip_attestation(obj: dict[str, Any]) -> tuple[dict[str, Any], Any | None]:
    """Split off the top-level ``attestation`` member.

    Returns ``(body, attestation)``; ``attestation`` is ``None`` when the
    member is absent.  Nested members named ``attestation`` are left alone and
    the input is not modified.
    """
    if not isinstance(obj, dict):
        raise TypeError("strip_attestation expects a JSON object")
    if ATTESTATION_MEMBER not in obj:
        return dict(obj), None
    body = {k: v for k, v in obj.items() if k != ATTESTATION_MEMBER}
    return body, obj[ATTESTATION_MEMBER]
