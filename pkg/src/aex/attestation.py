"""Terminal and checkpoint attestation objects: model, signing and issuance."""

from __future__ import annotations

import dataclasses
import re
import time
from dataclasses import dataclass
from typing import Any, Sequence

from .commitments import TAG_ATTESTATION, Commitment
from .errors import (
    AexError,
    AlgUnsupported,
    IllegalInLineageMode,
    KidMismatch,
    SignatureInvalid,
    StructureInvalid,
    UnverifiedInboundReceipt,
)
from .jcs import jcs_serialize
from .keys import ALG, SigningKey, VerifyingKey
from .output import OutputMode, StreamChain
from .receipts import (
    OriginOutputReceipt,
    OutputTransformReceipt,
    RequestTransformReceipt,
    Resolver,
    _check_members,
    _opt_commit,
    _opt_str,
    _req_commit,
    _req_str,
    verify_output_lineage,
    verify_request_chain,
)

VERSION = "1"
_DECIMAL_RE = re.compile(r"(0|[1-9][0-9]*)\Z")
DEFAULT_PROFILE = "openai.chat_completions"
TERMINAL = "terminal"
CHECKPOINT = "checkpoint"

_MEMBERS = {
    "version", "kind", "profile", "iss", "request_commit", "effective_request_commit",
    "request_transforms", "output_mode", "output_commit", "origin_output", "output_transforms",
    "prefix_commit", "chunk_count", "nonce", "iat", "exp", "alg", "kid", "sig",
}


@dataclass(frozen=True)
class Attestation:
    kind: str
    iss: str
    request_commit: Commitment
    profile: str = DEFAULT_PROFILE
    version: str = VERSION
    effective_request_commit: Commitment | None = None
    request_transforms: tuple[RequestTransformReceipt, ...] | None = None
    output_mode: OutputMode | None = None
    output_commit: Commitment | None = None
    origin_output: OriginOutputReceipt | None = None
    output_transforms: tuple[OutputTransformReceipt, ...] | None = None
    prefix_commit: Commitment | None = None
    chunk_count: int | None = None
    nonce: str | None = None
    iat: int | None = None
    exp: int | None = None
    alg: str = ALG
    kid: str = ""
    sig: str | None = None

    @property
    def has_lineage(self) -> bool:
        return self.origin_output is not None or bool(self.output_transforms)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "version": self.version,
            "kind": self.kind,
            "profile": self.profile,
            "iss": self.iss,
            "request_commit": self.request_commit.text,
        }
        if self.effective_request_commit is not None:
            out["effective_request_commit"] = self.effective_request_commit.text
        if self.request_transforms is not None:
            out["request_transforms"] = [r.to_json() for r in self.request_transforms]
        if self.output_mode is not None:
            out["output_mode"] = self.output_mode.value
        if self.output_commit is not None:
            out["output_commit"] = self.output_commit.text
        if self.origin_output is not None:
            out["origin_output"] = self.origin_output.to_json()
        if self.output_transforms is not None:
            out["output_transforms"] = [t.to_json() for t in self.output_transforms]
        if self.prefix_commit is not None:
            out["prefix_commit"] = self.prefix_commit.text
        if self.chunk_count is not None:
            out["chunk_count"] = str(self.chunk_count)
        for name in ("nonce", "iat", "exp"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        out["alg"] = self.alg
        out["kid"] = self.kid
        if self.sig is not None:
            out["sig"] = self.sig
        return out

    @classmethod
    def from_json(cls, obj: Any) -> "Attestation":
        """Parse a wire attestation, rejecting unknown members and bad types."""
        err = StructureInvalid
        _check_members(obj, _MEMBERS, "attestation", err)
        try:
            request_transforms = None
            if "request_transforms" in obj:
                items = obj["request_transforms"]
                if not isinstance(items, list):
                    raise err("request_transforms must be an array", path="request_transforms")
                request_transforms = tuple(RequestTransformReceipt.from_json(r) for r in items)
            output_transforms = None
            if "output_transforms" in obj:
                items = obj["output_transforms"]
                if not isinstance(items, list):
                    raise err("output_transforms must be an array", path="output_transforms")
                output_transforms = tuple(OutputTransformReceipt.from_json(t) for t in items)
            origin = None
            if "origin_output" in obj:
                origin = OriginOutputReceipt.from_json(obj["origin_output"])
        except AexError as exc:
            if isinstance(exc, StructureInvalid):
                raise
            raise StructureInvalid(f"embedded receipt: {exc.message}", path=exc.path) from None

        output_mode = None
        if "output_mode" in obj:
            try:
                output_mode = OutputMode(obj["output_mode"])
            except ValueError:
                raise err("output_mode must be non_stream or stream", path="output_mode") from None
        chunk_count = None
        if "chunk_count" in obj:
            text = obj["chunk_count"]
            if not isinstance(text, str) or not _DECIMAL_RE.match(text):
                raise err("chunk_count must be a decimal string", path="chunk_count")
            chunk_count = int(text)
            if chunk_count >= 2**64:
                raise err("chunk_count exceeds uint64", path="chunk_count")
        times = {}
        for name in ("iat", "exp"):
            if name in obj:
                value = obj[name]
                if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                    raise err(f"{name} must be integer unix seconds", path=name)
                times[name] = value
        return cls(
            version=_req_str(obj, "version", err),
            kind=_req_str(obj, "kind", err),
            profile=_req_str(obj, "profile", err),
            iss=_req_str(obj, "iss", err),
            request_commit=_req_commit(obj, "request_commit", err),
            effective_request_commit=_opt_commit(obj, "effective_request_commit", err),
            request_transforms=request_transforms,
            output_mode=output_mode,
            output_commit=_opt_commit(obj, "output_commit", err),
            origin_output=origin,
            output_transforms=output_transforms,
            prefix_commit=_opt_commit(obj, "prefix_commit", err),
            chunk_count=chunk_count,
            nonce=_opt_str(obj, "nonce", err),
            iat=times.get("iat"),
            exp=times.get("exp"),
            alg=_req_str(obj, "alg", err),
            kid=_req_str(obj, "kid", err),
            sig=_opt_str(obj, "sig", err),
        )


def validate_structure(att: Attestation, stream_saw_checkpoint: bool = False) -> None:
    """Enforce every legal-shape rule, including checkpoint/lineage exclusion."""
    err = StructureInvalid
    if att.version != VERSION:
        raise err(f"unsupported attestation version {att.version!r}", path="version")
    if att.alg != ALG:
        raise err(f"attestation alg must be {ALG}", path="alg")
    if att.request_transforms is not None and not att.request_transforms:
        raise err("request_transforms must be omitted rather than empty", path="request_transforms")
    if att.output_transforms is not None and not att.output_transforms:
        raise err("output_transforms must be omitted rather than empty", path="output_transforms")
    if att.effective_request_commit is None and att.request_transforms:
        raise err("request_transforms require effective_request_commit", path="request_transforms")
    if att.iat is not None and att.exp is not None and att.exp < att.iat:
        raise err("exp precedes iat", path="exp")

    if att.kind == CHECKPOINT:
        if att.has_lineage:
            raise err("checkpoint attestations cannot carry output lineage", path="output_transforms")
        if att.output_commit is not None or att.output_mode is not None:
            raise err("checkpoint attestations carry prefix_commit, not output_commit", path="output_commit")
        if att.prefix_commit is None or att.chunk_count is None or att.chunk_count < 1:
            raise err("checkpoint requires prefix_commit and chunk_count >= 1", path="prefix_commit")
    elif att.kind == TERMINAL:
        if att.prefix_commit is not None:
            raise err("terminal attestations do not carry prefix_commit", path="prefix_commit")
        if att.output_mode is None or att.output_commit is None:
            raise err("terminal requires output_mode and output_commit", path="output_commit")
        if att.output_mode is OutputMode.STREAM:
            if att.chunk_count is None or att.chunk_count < 1:
                raise err("stream terminal requires chunk_count >= 1", path="chunk_count")
        elif att.chunk_count is not None:
            raise err("non_stream terminal must not carry chunk_count", path="chunk_count")
        if att.output_transforms and att.origin_output is None:
            raise err("output_transforms require origin_output", path="output_transforms")
        if att.has_lineage and stream_saw_checkpoint:
            raise err("checkpoints cannot be mixed with output lineage", path="origin_output")
    else:
        raise err(f"unknown attestation kind {att.kind!r}", path="kind")


def attestation_signing_bytes(att: Attestation | dict[str, Any]) -> bytes:
    """``AEX-ATTESTATION-V1`` || JCS(attestation without its own ``sig``).

    Nested receipts keep their signatures, so the terminal signature commits
    to the exact lineage presented.
    """
    if isinstance(att, Attestation):
        validate_structure(att)
        body = att.to_json()
    else:
        body = dict(att)
    body.pop("sig", None)
    return TAG_ATTESTATION + jcs_serialize(body)


def sign_attestation(key: SigningKey, att: Attestation) -> Attestation:
    unsigned = dataclasses.replace(att, iss=key.iss, kid=key.kid, alg=ALG, sig=None)
    return dataclasses.replace(unsigned, sig=key.sign(attestation_signing_bytes(unsigned)))


def verify_attestation_signature(att: Attestation, key: VerifyingKey) -> None:
    if att.alg != ALG:
        raise AlgUnsupported(f"attestation alg {att.alg!r} is not {ALG}")
    if key.kid != att.kid or key.iss != att.iss:
        raise KidMismatch(f"key {key.iss}#{key.kid} does not match attestation {att.iss}#{att.kid}")
    if not att.sig:
        raise SignatureInvalid("attestation is unsigned")
    key.verify(attestation_signing_bytes(att.to_json()), att.sig)


@dataclass
class IssuanceContext:
    """Everything an issuer needs to sign a terminal attestation."""

    request_commit: Commitment
    output_mode: OutputMode
    output_commit: Commitment
    chunk_count: int | None = None
    effective_request_commit: Commitment | None = None
    request_transforms: Sequence[RequestTransformReceipt] = ()
    origin_output: OriginOutputReceipt | None = None
    output_transforms: Sequence[OutputTransformReceipt] = ()
    nonce: str | None = None
    profile: str = DEFAULT_PROFILE
    iat: int | None = None
    exp: int | None = None


def _verify_inbound(ctx: IssuanceContext, resolve: Resolver | None) -> None:
    if not (ctx.request_transforms or ctx.origin_output or ctx.output_transforms):
        return
    if resolve is None:
        raise UnverifiedInboundReceipt("inbound receipts present but no key resolver supplied")
    try:
        if ctx.request_transforms:
            if ctx.effective_request_commit is None:
                raise StructureInvalid("request_transforms require effective_request_commit")
            verify_request_chain(ctx.request_transforms, ctx.request_commit,
                                 ctx.effective_request_commit, resolve)
        if ctx.origin_output is not None or ctx.output_transforms:
            verify_output_lineage(ctx.origin_output, ctx.output_transforms, ctx.output_commit,
                                  ctx.output_mode, (ctx.request_commit, ctx.effective_request_commit),
                                  resolve)
    except AexError as exc:
        raise UnverifiedInboundReceipt(f"refusing to embed receipt: {exc.message}", path=exc.path) from None


def issue_terminal(
    key: SigningKey,
    ctx: IssuanceContext,
    resolve: Resolver | None = None,
) -> Attestation:
    """Verify inbound receipts with ``resolve`` and sign a terminal attestation."""
    _verify_inbound(ctx, resolve)
    att = Attestation(
        kind=TERMINAL,
        iss=key.iss,
        profile=ctx.profile,
        request_commit=ctx.request_commit,
        effective_request_commit=ctx.effective_request_commit,
        request_transforms=tuple(ctx.request_transforms) or None,
        output_mode=ctx.output_mode,
        output_commit=ctx.output_commit,
        origin_output=ctx.origin_output,
        output_transforms=tuple(ctx.output_transforms) or None,
        chunk_count=ctx.chunk_count if ctx.output_mode is OutputMode.STREAM else None,
        nonce=ctx.nonce,
        iat=ctx.iat,
        exp=ctx.exp,
    )
    return sign_attestation(key, att)


def issue_checkpoint(
    key: SigningKey,
    chain: StreamChain,
    *,
    lineage_mode: bool = False,
    nonce: str | None = None,
    request_transforms: Sequence[RequestTransformReceipt] = (),
    profile: str = DEFAULT_PROFILE,
    iat: int | None = None,
) -> Attestation:
    """Sign the current prefix of a source stream.

    The request context comes from the chain anchors; ``effective_request_commit``
    is included only when it differs from ``request_commit`` so a verifier can
    seed its own chain before the terminal arrives.
    """
    if lineage_mode:
        raise IllegalInLineageMode("checkpoints are forbidden in complete-output-lineage mode")
    if chain.count < 1:
        raise StructureInvalid("checkpoint needs at least one absorbed chunk")
    r = Commitment(chain.request_anchor)
    e = Commitment(chain.effective_anchor)
    att = Attestation(
        kind=CHECKPOINT,
        iss=key.iss,
        profile=profile,
        request_commit=r,
        effective_request_commit=None if e == r else e,
        request_transforms=tuple(request_transforms) or None,
        prefix_commit=chain.commitment,
        chunk_count=chain.count,
        nonce=nonce,
        iat=iat,
    )
    return sign_attestation(key, att)


class StreamAttester:
    """Issuer-side helper that follows a stream and signs checkpoints/terminal.

    One instance per outgoing stream.  In lineage mode, checkpoints raise
    :class:`IllegalInLineageMode`.
    """

    def __init__(
        self,
        key: SigningKey,
        request_commit: Commitment,
        effective_request_commit: Commitment | None = None,
        *,
        nonce: str | None = None,
        request_transforms: Sequence[RequestTransformReceipt] = (),
        lineage_mode: bool = False,
        profile: str = DEFAULT_PROFILE,
        clock=time.time,
    ) -> None:
        from .output import chain_init

        self.key = key
        self.request_commit = request_commit
        self.effective_request_commit = effective_request_commit
        self.nonce = nonce
        self.request_transforms = tuple(request_transforms)
        self.lineage_mode = lineage_mode
        self.profile = profile
        self._clock = clock
        self.chain = chain_init(request_commit, effective_request_commit)

    def absorb(self, chunk_body: dict[str, Any]) -> None:
        self.chain = self.chain.absorb(chunk_body)

    def checkpoint(self) -> Attestation:
        return issue_checkpoint(
            self.key, self.chain, lineage_mode=self.lineage_mode, nonce=self.nonce,
            request_transforms=self.request_transforms, profile=self.profile,
            iat=int(self._clock()),
        )

    def terminal(
        self,
        *,
        origin_output: OriginOutputReceipt | None = None,
        output_transforms: Sequence[OutputTransformReceipt] = (),
        resolve: Resolver | None = None,
        nonce: str | None = ...,  # type: ignore[assignment]
    ) -> Attestation:
        from .output import chain_finalize

        commit, count = chain_finalize(self.chain)
        ctx = IssuanceContext(
            request_commit=self.request_commit,
            effective_request_commit=self.effective_request_commit,
            request_transforms=self.request_transforms,
            output_mode=OutputMode.STREAM,
            output_commit=commit,
            chunk_count=count,
            origin_output=origin_output,
            output_transforms=output_transforms,
            nonce=self.nonce if nonce is ... else nonce,
            profile=self.profile,
            iat=int(self._clock()),
        )
        return issue_terminal(self.key, ctx, resolve)
