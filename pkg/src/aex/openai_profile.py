"""OpenAI-compatible chat-completions profile.

Covers the ``attestation`` activation member, an incremental SSE codec in
which every complete JSON-object ``data:`` event is one committed chunk, and
issuer-side helpers for attaching attestations to JSON bodies (including
error objects).
"""

from __future__ import annotations

import codecs
import json
import time
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .attestation import CHECKPOINT, TERMINAL, Attestation, IssuanceContext, issue_terminal
from .binding import BindingDescriptor, commit_request
from .commitments import Commitment
from .errors import (
    AexError,
    AttestationRequired,
    InvalidActivation,
    InvalidBinding,
    MalformedSse,
    NonCanonicalizable,
    PlanInvalid,
)
from .jcs import ATTESTATION_MEMBER, parse, strip_attestation
from .keys import SigningKey
from .output import OutputMode, nonstream_output_commit
from .receipts import OriginOutputReceipt, OutputTransformReceipt, RequestTransformReceipt, Resolver

PROFILE = "openai.chat_completions"
DONE = "[DONE]"


# -- activation ------------------------------------------------------------------

@dataclass(frozen=True)
class ActivationRequest:
    enabled: bool = False
    required: bool = False
    nonce: str | None = None
    binding: BindingDescriptor = field(default_factory=BindingDescriptor.full)
    include_stream_attestation: bool = True


def parse_activation(request: Mapping[str, Any]) -> ActivationRequest:
    """Read the client's ``attestation`` member.

    ``true`` is shorthand for full binding with no nonce; an object may carry
    ``required``, ``nonce`` and ``request_binding``.  Absent, ``null`` and
    ``false`` all mean disabled.
    """
    raw = request.get(ATTESTATION_MEMBER)
    include = _include_stream_attestation(request)
    if raw is None or raw is False:
        return ActivationRequest(include_stream_attestation=include)
    if raw is True:
        return ActivationRequest(enabled=True, include_stream_attestation=include)
    if not isinstance(raw, dict):
        raise InvalidActivation(f"attestation must be a boolean or an object, got {type(raw).__name__}",
                                path="attestation")
    required = raw.get("required", False)
    if not isinstance(required, bool):
        raise InvalidActivation("attestation.required must be a boolean", path="attestation.required")
    nonce = raw.get("nonce")
    if nonce is not None and (not isinstance(nonce, str) or not nonce):
        raise InvalidActivation("attestation.nonce must be a non-empty string", path="attestation.nonce")
    binding = BindingDescriptor.full()
    if "request_binding" in raw:
        try:
            binding = BindingDescriptor.from_json(raw["request_binding"])
        except InvalidBinding as exc:
            raise InvalidActivation(exc.message, path="attestation.request_binding") from None
    return ActivationRequest(True, required, nonce, binding, include)


def _include_stream_attestation(request: Mapping[str, Any]) -> bool:
    opts = request.get("stream_options")
    if isinstance(opts, dict) and "include_attestation" in opts:
        value = opts["include_attestation"]
        if not isinstance(value, bool):
            raise InvalidActivation("stream_options.include_attestation must be a boolean",
                                    path="stream_options.include_attestation")
        return value
    return True


def activation_member(act: ActivationRequest) -> Any:
    """Inverse of :func:`parse_activation` for building client requests."""
    if not act.enabled:
        return False
    if not act.required and act.nonce is None and act.binding == BindingDescriptor.full():
        return True
    out: dict[str, Any] = {}
    if act.required:
        out["required"] = True
    if act.nonce is not None:
        out["nonce"] = act.nonce
    if act.binding != BindingDescriptor.full():
        out["request_binding"] = act.binding.to_json()
    return out


# -- SSE codec -------------------------------------------------------------------

@dataclass(frozen=True)
class SseEvent:
    data: str
    is_done: bool = False
    parsed: Any = None
    parse_error: str | None = None
    event: str | None = None
    id: str | None = None

    @property
    def is_chunk(self) -> bool:
        """True when this event is a committed chunk (a JSON object payload)."""
        return not self.is_done and isinstance(self.parsed, dict)


def _make_event(data: str, event: str | None, id_: str | None) -> SseEvent:
    if data == DONE:
        return SseEvent(data, True, None, None, event, id_)
    try:
        parsed = parse(data)
    except (ValueError, NonCanonicalizable) as exc:
        return SseEvent(data, False, None, str(exc), event, id_)
    return SseEvent(data, False, parsed, None, event, id_)


class SseDecoder:
    """Incremental SSE decoder; one instance per connection.

    Line endings may be CRLF, LF or CR.  Comment lines are dropped.  Only
    ``data``, ``event`` and ``id`` fields are retained.  ``close()`` reports
    whether a partial event was left unterminated.
    """

    def __init__(self) -> None:
        self._utf8 = codecs.getincrementaldecoder("utf-8")("strict")
        self._buf = ""
        self._data: list[str] = []
        self._event: str | None = None
        self._id: str | None = None
        self._first = True
        self.incomplete_tail = False
        self.closed = False

    def feed(self, chunk: bytes) -> list[SseEvent]:
        try:
            text = self._utf8.decode(chunk)
        except UnicodeDecodeError as exc:
            raise MalformedSse(f"stream is not valid UTF-8: {exc}") from None
        if self._first and text:
            if text.startswith("\ufeff"):
                text = text[1:]
            self._first = False
        self._buf += text
        return self._drain(final=False)

    def close(self) -> list[SseEvent]:
        try:
            tail = self._utf8.decode(b"", final=True)
        except UnicodeDecodeError as exc:
            raise MalformedSse(f"stream ends inside a UTF-8 sequence: {exc}") from None
        self._buf += tail
        events = self._drain(final=True)
        if self._buf or self._data or self._event is not None:
            self.incomplete_tail = True
        self._buf = ""
        self._data = []
        self.closed = True
        return events

    def _drain(self, final: bool) -> list[SseEvent]:
        events: list[SseEvent] = []
        buf = self._buf
        pos = 0
        while True:
            cr = buf.find("\r", pos)
            lf = buf.find("\n", pos)
            if cr == -1 and lf == -1:
                break
            if cr != -1 and (lf == -1 or cr < lf):
                if cr + 1 == len(buf) and not final:
                    break  # a CR at the buffer end may be half of a CRLF
                end, nxt = cr, cr + 2 if buf.startswith("\n", cr + 1) else cr + 1
            else:
                end, nxt = lf, lf + 1
            ev = self._line(buf[pos:end])
            if ev is not None:
                events.append(ev)
            pos = nxt
        self._buf = buf[pos:]
        return events

    def _line(self, line: str) -> SseEvent | None:
        if line == "":
            if not self._data:
                self._event = None
                return None
            ev = _make_event("\n".join(self._data), self._event, self._id)
            self._data = []
            self._event = None
            return ev
        if line.startswith(":"):
            return None
        name, sep, value = line.partition(":")
        if sep and value.startswith(" "):
            value = value[1:]
        if name == "data":
            self._data.append(value)
        elif name == "event":
            self._event = value
        elif name == "id" and "\0" not in value:
            self._id = value
        return None


def sse_decode(stream: bytes | Iterable[bytes]) -> list[SseEvent]:
    """Decode a whole byte stream (or iterable of byte chunks)."""
    dec = SseDecoder()
    parts = [stream] if isinstance(stream, (bytes, bytearray)) else stream
    events: list[SseEvent] = []
    for part in parts:
        events.extend(dec.feed(bytes(part)))
    events.extend(dec.close())
    return events


def _wire_json(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def encode_event(payload: Any) -> bytes:
    data = payload if isinstance(payload, str) else _wire_json(payload)
    return "".join(f"data: {line}\n" for line in data.split("\n")).encode("utf-8") + b"\n"


def done_event() -> bytes:
    return encode_event(DONE)


def attach(chunk: Mapping[str, Any], att: Attestation | Mapping[str, Any] | None) -> dict[str, Any]:
    """Return ``chunk`` with ``att`` as its top-level ``attestation`` member."""
    out = dict(chunk)
    if att is not None:
        out[ATTESTATION_MEMBER] = att.to_json() if isinstance(att, Attestation) else dict(att)
    return out


def check_plan(n_chunks: int, plan: Mapping[int, Attestation | Mapping[str, Any]]) -> None:
    """Validate an attestation placement plan (1-based chunk indices)."""
    terminals = []
    checkpoints = []
    lineage_terminal = False
    for index, att in plan.items():
        if not isinstance(index, int) or not 1 <= index <= n_chunks:
            raise PlanInvalid(f"attestation index {index!r} outside 1..{n_chunks}")
        obj = att.to_json() if isinstance(att, Attestation) else att
        kind = obj.get("kind")
        if kind == TERMINAL:
            terminals.append(index)
            lineage_terminal = lineage_terminal or "origin_output" in obj or "output_transforms" in obj
        elif kind == CHECKPOINT:
            checkpoints.append(index)
        else:
            raise PlanInvalid(f"unknown attestation kind {kind!r} at chunk {index}")
    if len(terminals) > 1:
        raise PlanInvalid("a stream carries at most one terminal attestation")
    if terminals and terminals[0] != n_chunks:
        raise PlanInvalid(f"terminal attestation must ride the final chunk ({n_chunks}), not {terminals[0]}")
    if lineage_terminal and checkpoints:
        raise PlanInvalid("checkpoints cannot accompany a lineage-bearing terminal")
    if terminals and any(c > terminals[0] for c in checkpoints):
        raise PlanInvalid("checkpoint after the terminal")


def sse_encode(
    chunks: Sequence[Mapping[str, Any]],
    plan: Mapping[int, Attestation | Mapping[str, Any]] | None = None,
    *,
    done: bool = True,
) -> bytes:
    """One ``data:`` event per chunk, attestations embedded per ``plan``, then ``[DONE]``."""
    plan = plan or {}
    check_plan(len(chunks), plan)
    out = bytearray()
    for i, chunk in enumerate(chunks, start=1):
        if ATTESTATION_MEMBER in chunk:
            raise PlanInvalid(f"chunk {i} already carries an attestation member")
        out += encode_event(attach(chunk, plan.get(i)))
    if done:
        out += done_event()
    return bytes(out)


# -- issuer-side helpers -------------------------------------------------------------

@dataclass(frozen=True)
class IssuerRequestContext:
    """Request-side commitments an issuer binds into what it signs."""

    request_commit: Commitment
    effective_request_commit: Commitment | None = None
    request_transforms: tuple[RequestTransformReceipt, ...] = ()
    nonce: str | None = None
    required: bool = False


def issuer_request_context(
    request: Mapping[str, Any],
    request_transforms: Sequence[RequestTransformReceipt] = (),
) -> IssuerRequestContext | None:
    """Derive r (and e) for the request an issuer actually received.

    With inbound transform receipts the received request is the effective
    one; r is taken from the first receipt's input.  Returns ``None`` when
    the request did not activate attestation.
    """
    act = parse_activation(request)
    if not act.enabled:
        return None
    local = commit_request(dict(request), act.binding, act.nonce)
    if request_transforms:
        return IssuerRequestContext(request_transforms[0].in_request_commit, local,
                                    tuple(request_transforms), act.nonce, act.required)
    return IssuerRequestContext(local, None, (), act.nonce, act.required)


def attest_nonstream(
    body: Mapping[str, Any],
    key: SigningKey,
    ctx: IssuerRequestContext,
    *,
    origin_output: OriginOutputReceipt | None = None,
    output_transforms: Sequence[OutputTransformReceipt] = (),
    resolve: Resolver | None = None,
    clock=time.time,
) -> dict[str, Any]:
    """Return ``body`` with a signed non-stream terminal attestation attached."""
    if not isinstance(body, Mapping):
        raise NonCanonicalizable("only top-level JSON objects can be attested")
    clean, _ = strip_attestation(dict(body))
    att = issue_terminal(key, IssuanceContext(
        request_commit=ctx.request_commit,
        effective_request_commit=ctx.effective_request_commit,
        request_transforms=ctx.request_transforms,
        output_mode=OutputMode.NON_STREAM,
        output_commit=nonstream_output_commit(clean),
        origin_output=origin_output,
        output_transforms=output_transforms,
        nonce=ctx.nonce,
        profile=PROFILE,
        iat=int(clock()),
    ), resolve)
    return attach(clean, att)


def attest_error_object(error_body: Mapping[str, Any], key: SigningKey,
                        ctx: IssuerRequestContext | None, **kwargs) -> dict[str, Any]:
    """Attest an error object like any non-stream body; unactivated requests stay unattested."""
    if ctx is None:
        return dict(error_body)
    return attest_nonstream(error_body, key, ctx, **kwargs)


def attestation_failure_body(exc: AexError) -> dict[str, Any]:
    """Explicit protocol error returned when a required attestation cannot be issued."""
    return {
        "error": {
            "type": "attestation_error",
            "code": "attestation_unavailable",
            "message": f"attestation was required but could not be issued: {exc.message or exc.code}",
        }
    }


def require_or_passthrough(ctx: IssuerRequestContext | None, exc: AexError) -> None:
    """Raise :class:`AttestationRequired` when the client demanded attestation."""
    if ctx is not None and ctx.required:
        raise AttestationRequired(exc.message or exc.code) from exc


# -- verifier-side stream driver --------------------------------------------------

class SseStreamVerifier:
    """Couples :class:`SseDecoder` with a stream verification session."""

    def __init__(self, request: dict[str, Any], resolve: Resolver, config=None) -> None:
        from .verify import StreamVerifySession

        self.decoder = SseDecoder()
        self.session = StreamVerifySession(request, resolve, config)
        self.events: list[SseEvent] = []
        self.saw_done = False
        self.timeline: list[dict[str, Any]] = []

    def _handle(self, events: list[SseEvent]) -> list[tuple[SseEvent, Any]]:
        out = []
        for ev in events:
            self.events.append(ev)
            verdict = None
            if ev.is_done:
                self.saw_done = True
            elif self.saw_done:
                verdict = self.session.on_profile_violation("event after [DONE]")
            elif ev.is_chunk:
                verdict = self.session.on_chunk(ev.parsed)
            else:
                verdict = self.session.on_profile_violation(
                    f"SSE data payload is not a JSON object: {ev.data[:40]!r}")
            if verdict is not None:
                self.timeline.append({"event": len(self.events), "state": verdict.state.value})
            out.append((ev, verdict))
        return out

    def feed(self, data: bytes) -> list[tuple[SseEvent, Any]]:
        try:
            return self._handle(self.decoder.feed(data))
        except MalformedSse as exc:
            self.session.on_profile_violation(exc.message)
            return []

    def finish(self, transport_ok: bool = True):
        try:
            self._handle(self.decoder.close())
        except MalformedSse as exc:
            self.session.on_profile_violation(exc.message)
        clean = transport_ok and self.saw_done and not self.decoder.incomplete_tail
        verdict = self.session.finish(clean)
        self.timeline.append({"event": len(self.events), "state": verdict.state.value, "final": True})
        return verdict
