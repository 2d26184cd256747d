"""Domain-tagged SHA-256 commitments."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

from .errors import InvalidCommitment
from .jcs import jcs_serialize

TAG_REQUEST = b"AEX-REQ-V1"
TAG_RESPONSE = b"AEX-RESP-V1"
TAG_CHUNK = b"AEX-CHUNK-V1"
TAG_STREAM = b"AEX-STREAM-V1"
TAG_TRANSFORM = b"AEX-TRANSFORM-V1"
TAG_ORIGIN_OUTPUT = b"AEX-ORIGIN-OUTPUT-V1"
TAG_OUTPUT_TRANSFORM = b"AEX-OUTPUT-TRANSFORM-V1"
TAG_ATTESTATION = b"AEX-ATTESTATION-V1"

_TEXT_RE = re.compile(r"sha256:[0-9a-f]{64}\Z")


@dataclass(frozen=True)
class Commitment:
    """A SHA-256 digest; ``raw`` is canonical, ``text`` is the JSON form."""

    raw: bytes

    algorithm = "sha256"

    def __post_init__(self) -> None:
        if not isinstance(self.raw, bytes) or len(self.raw) != 32:
            raise InvalidCommitment("commitment digest must be 32 raw bytes")

    @property
    def text(self) -> str:
        return "sha256:" + self.raw.hex()

    @classmethod
    def from_text(cls, text: str) -> "Commitment":
        if not isinstance(text, str) or not _TEXT_RE.match(text):
            raise InvalidCommitment(f"not a sha256:<64 lowercase hex> string: {text!r}")
        return cls(bytes.fromhex(text[7:]))

    def __str__(self) -> str:
        return self.text


def tagged_digest(tag: bytes, value) -> Commitment:
    """SHA-256 over ``tag || JCS(value)``."""
    return Commitment(hashlib.sha256(tag + jcs_serialize(value)).digest())
