"""Request-binding descriptors, projections and request commitments."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable

from .commitments import TAG_REQUEST, Commitment, tagged_digest
from .errors import InvalidBinding
from .jcs import ATTESTATION_MEMBER


class BindingMode(str, Enum):
    FULL = "full"
    TOP_LEVEL_EXCLUDE = "top_level_exclude"
    TOP_LEVEL_INCLUDE = "top_level_include"


@dataclass(frozen=True)
class BindingDescriptor:
    """Client-chosen binding rule.

    ``fields`` is sorted and deduplicated on construction, so the listing
    order a client SDK happens to use never changes a commitment.
    """

    mode: BindingMode = BindingMode.FULL
    fields: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        try:
            mode = BindingMode(self.mode)
        except ValueError:
            raise InvalidBinding(f"unknown binding mode {self.mode!r}") from None
        object.__setattr__(self, "mode", mode)
        if mode is BindingMode.FULL:
            if self.fields:
                raise InvalidBinding("mode full takes no field list")
            return
        if isinstance(self.fields, str) or not all(isinstance(f, str) for f in self.fields):
            raise InvalidBinding("fields must be a list of strings")
        normalized = tuple(sorted(set(self.fields)))
        if not normalized:
            raise InvalidBinding(f"mode {mode.value} requires a non-empty field list")
        if ATTESTATION_MEMBER in normalized:
            raise InvalidBinding("the attestation member cannot be listed")
        object.__setattr__(self, "fields", normalized)

    @classmethod
    def full(cls) -> "BindingDescriptor":
        return cls(BindingMode.FULL)

    @classmethod
    def include(cls, fields: Iterable[str]) -> "BindingDescriptor":
        return cls(BindingMode.TOP_LEVEL_INCLUDE, tuple(fields))

    @classmethod
    def exclude(cls, fields: Iterable[str]) -> "BindingDescriptor":
        return cls(BindingMode.TOP_LEVEL_EXCLUDE, tuple(fields))

    @classmethod
    def from_json(cls, obj: Any) -> "BindingDescriptor":
        if not isinstance(obj, dict):
            raise InvalidBinding("request_binding must be an object")
        extra = set(obj) - {"mode", "fields"}
        if extra:
            raise InvalidBinding(f"unknown request_binding members {sorted(extra)}")
        fields = obj.get("fields", ())
        if not isinstance(fields, (list, tuple)):
            raise InvalidBinding("fields must be an array")
        return cls(obj.get("mode", "full"), tuple(fields))

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"mode": self.mode.value}
        if self.mode is not BindingMode.FULL:
            out["fields"] = list(self.fields)
        return out


@dataclass(frozen=True)
class BoundRequestInput:
    binding: BindingDescriptor
    projection: dict[str, Any]
    absent_fields: tuple[str, ...] = ()
    nonce: str | None = None

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "binding": self.binding.to_json(),
            "projection": self.projection,
        }
        if self.binding.mode is BindingMode.TOP_LEVEL_INCLUDE:
            out["absent_fields"] = list(self.absent_fields)
        if self.nonce is not None:
            out["nonce"] = self.nonce
        return out


def build_bound_request_input(
    request: dict[str, Any],
    binding: BindingDescriptor | None = None,
    nonce: str | None = None,
) -> BoundRequestInput:
    """Project ``request`` (already stripped of ``attestation``) per ``binding``."""
    binding = binding or BindingDescriptor.full()
    if nonce is not None and (not isinstance(nonce, str) or not nonce):
        raise InvalidBinding("nonce must be a non-empty string")
    body = {k: v for k, v in request.items() if k != ATTESTATION_MEMBER}

    if binding.mode is BindingMode.FULL:
        return BoundRequestInput(binding, body, nonce=nonce)
    if binding.mode is BindingMode.TOP_LEVEL_EXCLUDE:
        excluded = set(binding.fields)
        projection = {k: v for k, v in body.items() if k not in excluded}
        return BoundRequestInput(binding, projection, nonce=nonce)
    projection = {k: body[k] for k in binding.fields if k in body}
    absent = tuple(k for k in binding.fields if k not in body)
    return BoundRequestInput(binding, projection, absent, nonce)


def request_commit(bri: BoundRequestInput) -> Commitment:
    return tagged_digest(TAG_REQUEST, bri.to_json())


def commit_request(
    request: dict[str, Any],
    binding: BindingDescriptor | None = None,
    nonce: str | None = None,
) -> Commitment:
    """Shorthand for ``request_commit(build_bound_request_input(...))``."""
    return request_commit(build_bound_request_input(request, binding, nonce))


def effective_request_commit(
    effective_request: dict[str, Any],
    binding: BindingDescriptor | None = None,
    nonce: str | None = None,
) -> Commitment:
    # Same commitment space as the original request: same tag, binding, nonce.
    return commit_request(effective_request, binding, nonce)
