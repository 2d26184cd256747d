"""Signed lineage edges and chain-closure checks.

Three receipt kinds exist, each signed under its own domain tag over the JCS
bytes of the receipt object with ``sig`` removed:

* :class:`RequestTransformReceipt` (``AEX-TRANSFORM-V1``) maps one request
  commitment to the next.
* :class:`OriginOutputReceipt` (``AEX-ORIGIN-OUTPUT-V1``) states that a
  source issuer produced a complete output for a request context.
* :class:`OutputTransformReceipt` (``AEX-OUTPUT-TRANSFORM-V1``) maps one
  complete output (commit + mode) to another.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, Callable, ClassVar, Sequence

from .commitments import (
    TAG_ORIGIN_OUTPUT,
    TAG_OUTPUT_TRANSFORM,
    TAG_TRANSFORM,
    Commitment,
)
from .errors import (
    AlgUnsupported,
    ChainBroken,
    ChainEndpointMismatch,
    InvalidCommitment,
    KidMismatch,
    LineageBroken,
    ModeClosureFailure,
    ReceiptInvalid,
    RequestContextMismatch,
)
from .jcs import jcs_serialize
from .keys import ALG, SigningKey, VerifyingKey
from .output import OutputMode

Resolver = Callable[[str, str], VerifyingKey]


# -- member parsing helpers ----------------------------------------------------

def _req_str(obj: dict, name: str, err=ReceiptInvalid) -> str:
    value = obj.get(name)
    if not isinstance(value, str) or not value:
        raise err(f"member {name!r} must be a non-empty string", path=name)
    return value


def _opt_str(obj: dict, name: str, err=ReceiptInvalid) -> str | None:
    if name not in obj:
        return None
    return _req_str(obj, name, err)


def _req_commit(obj: dict, name: str, err=ReceiptInvalid) -> Commitment:
    try:
        return Commitment.from_text(obj.get(name))
    except InvalidCommitment as exc:
        raise err(f"member {name!r}: {exc.message}", path=name) from None


def _opt_commit(obj: dict, name: str, err=ReceiptInvalid) -> Commitment | None:
    return _req_commit(obj, name, err) if name in obj else None


def _req_mode(obj: dict, name: str, err=ReceiptInvalid) -> OutputMode:
    try:
        return OutputMode(obj.get(name))
    except ValueError:
        raise err(f"member {name!r} must be non_stream or stream", path=name) from None


def _check_members(obj: Any, allowed: set[str], what: str, err=ReceiptInvalid) -> None:
    if not isinstance(obj, dict):
        raise err(f"{what} must be a JSON object")
    extra = set(obj) - allowed
    if extra:
        raise err(f"{what} has unknown members {sorted(extra)}")


def _to_json_value(value: Any) -> Any:
    if isinstance(value, Commitment):
        return value.text
    if isinstance(value, OutputMode):
        return value.value
    return value


# -- receipts ------------------------------------------------------------------

@dataclass(frozen=True)
class _Receipt:
    TAG: ClassVar[bytes]

    def to_json(self) -> dict[str, Any]:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if value is not None:
                out[f.name] = _to_json_value(value)
        return out

    def body_json(self) -> dict[str, Any]:
        body = self.to_json()
        body.pop("sig", None)
        return body

    def signing_bytes(self, tag: bytes | None = None) -> bytes:
        return (self.TAG if tag is None else tag) + jcs_serialize(self.body_json())

    def signed(self, key: SigningKey):
        unsigned = dataclasses.replace(self, iss=key.iss, kid=key.kid, alg=ALG, sig=None)
        return dataclasses.replace(unsigned, sig=key.sign(unsigned.signing_bytes()))


@dataclass(frozen=True)
class RequestTransformReceipt(_Receipt):
    TAG: ClassVar[bytes] = TAG_TRANSFORM

    iss: str
    in_request_commit: Commitment
    out_request_commit: Commitment
    policy: str
    alg: str = ALG
    kid: str = ""
    sig: str | None = None

    @classmethod
    def from_json(cls, obj: Any) -> "RequestTransformReceipt":
        _check_members(obj, {f.name for f in dataclasses.fields(cls)}, "request transform receipt")
        return cls(
            iss=_req_str(obj, "iss"),
            in_request_commit=_req_commit(obj, "in_request_commit"),
            out_request_commit=_req_commit(obj, "out_request_commit"),
            policy=_req_str(obj, "policy"),
            alg=_req_str(obj, "alg"),
            kid=_req_str(obj, "kid"),
            sig=_req_str(obj, "sig"),
        )


@dataclass(frozen=True)
class OriginOutputReceipt(_Receipt):
    TAG: ClassVar[bytes] = TAG_ORIGIN_OUTPUT

    profile: str
    iss: str
    request_commit: Commitment
    output_mode: OutputMode
    output_commit: Commitment
    effective_request_commit: Commitment | None = None
    alg: str = ALG
    kid: str = ""
    sig: str | None = None

    @classmethod
    def from_json(cls, obj: Any) -> "OriginOutputReceipt":
        _check_members(obj, {f.name for f in dataclasses.fields(cls)}, "origin_output receipt")
        return cls(
            profile=_req_str(obj, "profile"),
            iss=_req_str(obj, "iss"),
            request_commit=_req_commit(obj, "request_commit"),
            effective_request_commit=_opt_commit(obj, "effective_request_commit"),
            output_mode=_req_mode(obj, "output_mode"),
            output_commit=_req_commit(obj, "output_commit"),
            alg=_req_str(obj, "alg"),
            kid=_req_str(obj, "kid"),
            sig=_req_str(obj, "sig"),
        )


@dataclass(frozen=True)
class OutputTransformReceipt(_Receipt):
    TAG: ClassVar[bytes] = TAG_OUTPUT_TRANSFORM

    iss: str
    request_commit: Commitment
    in_output_mode: OutputMode
    in_output_commit: Commitment
    out_output_mode: OutputMode
    out_output_commit: Commitment
    policy: str
    effective_request_commit: Commitment | None = None
    alg: str = ALG
    kid: str = ""
    sig: str | None = None

    @classmethod
    def from_json(cls, obj: Any) -> "OutputTransformReceipt":
        _check_members(obj, {f.name for f in dataclasses.fields(cls)}, "output transform receipt")
        return cls(
            iss=_req_str(obj, "iss"),
            request_commit=_req_commit(obj, "request_commit"),
            effective_request_commit=_opt_commit(obj, "effective_request_commit"),
            in_output_mode=_req_mode(obj, "in_output_mode"),
            in_output_commit=_req_commit(obj, "in_output_commit"),
            out_output_mode=_req_mode(obj, "out_output_mode"),
            out_output_commit=_req_commit(obj, "out_output_commit"),
            policy=_req_str(obj, "policy"),
            alg=_req_str(obj, "alg"),
            kid=_req_str(obj, "kid"),
            sig=_req_str(obj, "sig"),
        )


def sign_request_transform(key: SigningKey, body: RequestTransformReceipt) -> RequestTransformReceipt:
    return body.signed(key)


def sign_origin_output(key: SigningKey, body: OriginOutputReceipt) -> OriginOutputReceipt:
    return body.signed(key)


def sign_output_transform(key: SigningKey, body: OutputTransformReceipt) -> OutputTransformReceipt:
    return body.signed(key)


def verify_receipt(receipt: _Receipt, key: VerifyingKey, tag: bytes | None = None) -> None:
    """Raise unless ``receipt.sig`` verifies under ``key`` for ``tag``.

    ``tag`` defaults to the receipt kind's own domain tag.
    """
    if receipt.alg != ALG:
        raise AlgUnsupported(f"receipt alg {receipt.alg!r} is not {ALG}")
    if key.kid != receipt.kid or key.iss != receipt.iss:
        raise KidMismatch(f"key {key.iss}#{key.kid} does not match receipt {receipt.iss}#{receipt.kid}")
    if not receipt.sig:
        raise ReceiptInvalid("receipt is unsigned")
    key.verify(receipt.signing_bytes(tag), receipt.sig)


def verify_request_chain(
    chain: Sequence[RequestTransformReceipt],
    start: Commitment,
    end: Commitment,
    resolve: Resolver,
) -> None:
    """Check that ``chain`` links ``start`` to ``end`` and every edge is signed."""
    if not chain:
        if start != end:
            raise ChainEndpointMismatch("empty transform chain but request commitments differ")
        return
    if chain[0].in_request_commit != start:
        raise ChainEndpointMismatch("transform chain does not begin at request_commit", path="request_transforms[0]")
    for i in range(1, len(chain)):
        if chain[i - 1].out_request_commit != chain[i].in_request_commit:
            raise ChainBroken(f"request transform {i - 1} does not feed transform {i}", path=f"request_transforms[{i}]")
    if chain[-1].out_request_commit != end:
        raise ChainEndpointMismatch(
            "transform chain does not end at effective_request_commit",
            path=f"request_transforms[{len(chain) - 1}]",
        )
    for i, receipt in enumerate(chain):
        try:
            verify_receipt(receipt, resolve(receipt.iss, receipt.kid))
        except Exception as exc:
            if getattr(exc, "path", None) is None and hasattr(exc, "path"):
                exc.path = f"request_transforms[{i}]"
            raise


def verify_output_lineage(
    origin: OriginOutputReceipt | None,
    transforms: Sequence[OutputTransformReceipt],
    final_commit: Commitment,
    final_mode: OutputMode,
    request_ctx: tuple[Commitment, Commitment | None],
    resolve: Resolver,
) -> list[dict[str, str]]:
    """Check output lineage closure on commits, modes and request context.

    Returns a lineage summary (one entry per signed edge).  Nothing about
    hidden intermediate outputs is recomputed; the receipts alone carry the
    claim.
    """
    if origin is None:
        if transforms:
            raise LineageBroken("output_transforms present without origin_output", path="output_transforms")
        return []

    r, e = request_ctx
    nodes: list[tuple[str, Any]] = [("origin_output", origin)]
    nodes += [(f"output_transforms[{i}]", t) for i, t in enumerate(transforms)]
    for path, node in nodes:
        if node.request_commit != r or node.effective_request_commit != e:
            raise RequestContextMismatch(f"{path} names a different request context", path=path)

    mode, commit = origin.output_mode, origin.output_commit
    for path, t in nodes[1:]:
        if t.in_output_mode != mode:
            raise ModeClosureFailure(f"{path} input mode {t.in_output_mode.value} != {mode.value}", path=path)
        if t.in_output_commit != commit:
            raise LineageBroken(f"{path} input commit does not match preceding output", path=path)
        mode, commit = t.out_output_mode, t.out_output_commit
    if mode != final_mode:
        raise ModeClosureFailure(f"lineage ends in mode {mode.value}, delivered output is {final_mode.value}")
    if commit != final_commit:
        raise LineageBroken("lineage does not end at the delivered output_commit")

    summary = []
    for path, node in nodes:
        try:
            verify_receipt(node, resolve(node.iss, node.kid))
        except Exception as exc:
            if hasattr(exc, "path") and exc.path is None:
                exc.path = path
            raise
        if isinstance(node, OriginOutputReceipt):
            summary.append({"iss": node.iss, "policy": "origin", "in_mode": node.output_mode.value,
                            "out_mode": node.output_mode.value})
        else:
            summary.append({"iss": node.iss, "policy": node.policy, "in_mode": node.in_output_mode.value,
                            "out_mode": node.out_output_mode.value})
    return summary
