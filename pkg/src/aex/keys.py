"""Ed25519 key material, base64url helpers and JWK/JWKS conversion."""

from __future__ import annotations

import base64
import hashlib
from dataclasses import dataclass, field
from typing import Any, Iterable

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .errors import AlgUnsupported, SignatureInvalid

ALG = "Ed25519"


def b64url_encode(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def b64url_decode(text: str) -> bytes:
    if not isinstance(text, str):
        raise ValueError("base64url value must be a string")
    if "=" in text or any(c in text for c in "+/ \n"):
        raise ValueError("not unpadded base64url")
    return base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))


@dataclass(frozen=True)
class VerifyingKey:
    iss: str
    kid: str
    public: bytes

    def __post_init__(self) -> None:
        if len(self.public) != 32:
            raise ValueError("Ed25519 public keys are 32 bytes")

    def verify(self, message: bytes, signature_b64: str) -> None:
        try:
            sig = b64url_decode(signature_b64)
        except ValueError:
            raise SignatureInvalid("signature is not base64url") from None
        try:
            Ed25519PublicKey.from_public_bytes(self.public).verify(sig, message)
        except InvalidSignature:
            raise SignatureInvalid(f"signature does not verify under {self.iss} kid {self.kid}") from None

    def to_jwk(self) -> dict[str, str]:
        return {
            "kty": "OKP",
            "crv": "Ed25519",
            "alg": ALG,
            "use": "sig",
            "kid": self.kid,
            "x": b64url_encode(self.public),
        }

    @classmethod
    def from_jwk(cls, iss: str, jwk: dict[str, Any]) -> "VerifyingKey":
        if jwk.get("kty") != "OKP" or jwk.get("crv") != "Ed25519":
            raise AlgUnsupported(f"unsupported JWK kty/crv {jwk.get('kty')}/{jwk.get('crv')}")
        if jwk.get("alg", ALG) not in (ALG, "EdDSA"):
            raise AlgUnsupported(f"unsupported JWK alg {jwk.get('alg')}")
        kid = jwk.get("kid")
        if not isinstance(kid, str) or not kid:
            raise ValueError("JWK without kid")
        return cls(iss, kid, b64url_decode(jwk["x"]))


@dataclass(frozen=True)
class SigningKey:
    iss: str
    kid: str
    seed: bytes = field(repr=False)

    def __post_init__(self) -> None:
        if len(self.seed) != 32:
            raise ValueError("Ed25519 seeds are 32 bytes")

    @classmethod
    def generate(cls, iss: str, kid: str) -> "SigningKey":
        raw = Ed25519PrivateKey.generate().private_bytes(
            serialization.Encoding.Raw,
            serialization.PrivateFormat.Raw,
            serialization.NoEncryption(),
        )
        return cls(iss, kid, raw)

    @classmethod
    def from_label(cls, iss: str, kid: str, label: str) -> "SigningKey":
        """Deterministic key for fixtures and vectors; never for production."""
        return cls(iss, kid, hashlib.sha256(label.encode("utf-8")).digest())

    @property
    def _private(self) -> Ed25519PrivateKey:
        return Ed25519PrivateKey.from_private_bytes(self.seed)

    def sign(self, message: bytes) -> str:
        return b64url_encode(self._private.sign(message))

    @property
    def verifying_key(self) -> VerifyingKey:
        pub = self._private.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return VerifyingKey(self.iss, self.kid, pub)


def jwks_document(keys: Iterable[VerifyingKey]) -> dict[str, Any]:
    keys = list(keys)
    kids = [k.kid for k in keys]
    if len(set(kids)) != len(kids):
        raise ValueError("duplicate kid in key set")
    return {"keys": [k.to_jwk() for k in keys]}


def parse_jwks(iss: str, doc: Any) -> dict[str, VerifyingKey]:
    """Extract Ed25519 keys from a JWKS document; other key types are skipped."""
    if not isinstance(doc, dict) or not isinstance(doc.get("keys"), list):
        raise ValueError("JWKS document must be an object with a keys array")
    out: dict[str, VerifyingKey] = {}
    for jwk in doc["keys"]:
        if not isinstance(jwk, dict):
            continue
        try:
            key = VerifyingKey.from_jwk(iss, jwk)
        except (AlgUnsupported, ValueError, KeyError):
            continue
        out.setdefault(key.kid, key)
    return out
