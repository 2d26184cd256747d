"""Verification engine: the non-stream pipeline and the streaming state machine.

All failures are reported as a :class:`Verdict` carrying one of eight states
plus structured diagnostics; nothing here raises for a bad response.  When
several failures coexist the strongest signal wins, in the order
``tampered > request_mismatch > key_unavailable > truncation > unattested``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

from .attestation import (
    CHECKPOINT,
    TERMINAL,
    Attestation,
    validate_structure,
    verify_attestation_signature,
)
from .binding import commit_request
from .commitments import Commitment
from .errors import (
    AexError,
    AlgUnsupported,
    InvalidActivation,
    KeyUnavailable,
    NonCanonicalizable,
    UntrustedIssuer,
)
from .jcs import strip_attestation
from .keys import VerifyingKey
from .output import OutputMode, chunk_hash, fold_hashes, nonstream_output_commit
from .receipts import verify_output_lineage, verify_request_chain

Resolver = Callable[[str, str], VerifyingKey]


class VerifierState(str, Enum):
    VERIFIED_COMPLETE = "verified_complete"
    VERIFIED_PREFIX = "verified_prefix"
    TRUNCATED_AFTER_VERIFIED_PREFIX = "truncated_after_verified_prefix"
    TRUNCATED_WITHOUT_TERMINAL = "truncated_without_terminal"
    UNATTESTED_OR_OUT_OF_SCOPE = "unattested_or_out_of_scope"
    REQUEST_MISMATCH = "request_mismatch"
    KEY_UNAVAILABLE = "key_unavailable"
    TAMPERED = "tampered"


_RANK = {
    VerifierState.TAMPERED: 6,
    VerifierState.REQUEST_MISMATCH: 5,
    VerifierState.KEY_UNAVAILABLE: 4,
    VerifierState.TRUNCATED_AFTER_VERIFIED_PREFIX: 3,
    VerifierState.TRUNCATED_WITHOUT_TERMINAL: 2,
    VerifierState.UNATTESTED_OR_OUT_OF_SCOPE: 1,
}


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    path: str | None = None

    def to_json(self) -> dict[str, Any]:
        out = {"code": self.code, "message": self.message}
        if self.path is not None:
            out["path"] = self.path
        return out


@dataclass
class Verdict:
    state: VerifierState
    diagnostics: list[Diagnostic] = field(default_factory=list)
    verified_prefix_count: int | None = None
    lineage_summary: list[dict[str, str]] | None = None

    @property
    def ok(self) -> bool:
        return self.state is VerifierState.VERIFIED_COMPLETE

    @property
    def codes(self) -> list[str]:
        return [d.code for d in self.diagnostics]

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "state": self.state.value,
            "diagnostics": [d.to_json() for d in self.diagnostics],
        }
        if self.verified_prefix_count is not None:
            out["verified_prefix_count"] = self.verified_prefix_count
        if self.lineage_summary is not None:
            out["lineage_summary"] = self.lineage_summary
        return out

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "Verdict":
        return cls(
            VerifierState(obj["state"]),
            [Diagnostic(d["code"], d["message"], d.get("path")) for d in obj.get("diagnostics", [])],
            obj.get("verified_prefix_count"),
            obj.get("lineage_summary"),
        )


@dataclass
class VerifierConfig:
    # Strict: a request without activation makes the exchange out of scope.
    require_activation: bool = True
    # Strict: SSE data payloads that are not JSON objects count as tampering.
    strict_profile: bool = True
    enforce_freshness: bool = False
    max_age: int | None = None
    clock: Callable[[], float] = time.time


_KEY_ERRORS = (UntrustedIssuer, KeyUnavailable, AlgUnsupported)


class _Findings:
    def __init__(self) -> None:
        self.items: list[tuple[VerifierState, Diagnostic]] = []

    def add(self, state: VerifierState, code: str, message: str, path: str | None = None) -> None:
        self.items.append((state, Diagnostic(code, message, path)))

    def add_error(self, exc: AexError, prefix: str | None = None, *, code: str | None = None) -> None:
        state = VerifierState.KEY_UNAVAILABLE if isinstance(exc, _KEY_ERRORS) else VerifierState.TAMPERED
        path = exc.path
        if prefix:
            path = f"{prefix}.{path}" if path else prefix
        self.add(state, code or exc.code, exc.message, path)

    def __bool__(self) -> bool:
        return bool(self.items)

    def worst(self) -> VerifierState | None:
        if not self.items:
            return None
        return max((s for s, _ in self.items), key=lambda s: _RANK.get(s, 0))

    @property
    def diagnostics(self) -> list[Diagnostic]:
        return [d for _, d in self.items]


@dataclass
class _RequestContext:
    request_commit: Commitment
    nonce: str | None
    required: bool


def _request_context(request: dict[str, Any], config: VerifierConfig,
                     findings: _Findings) -> _RequestContext | None:
    from .openai_profile import ActivationRequest, parse_activation

    try:
        act = parse_activation(request)
    except InvalidActivation as exc:
        findings.add(VerifierState.UNATTESTED_OR_OUT_OF_SCOPE, exc.code, exc.message, "request.attestation")
        return None
    if not act.enabled:
        if config.require_activation:
            findings.add(VerifierState.UNATTESTED_OR_OUT_OF_SCOPE, "not_requested",
                         "request did not activate attestation", "request.attestation")
            return None
        act = ActivationRequest(enabled=True)
    try:
        r = commit_request(request, act.binding, act.nonce)
    except NonCanonicalizable as exc:
        findings.add(VerifierState.UNATTESTED_OR_OUT_OF_SCOPE, exc.code,
                     f"request cannot be canonicalized: {exc.message}", "request")
        return None
    return _RequestContext(r, act.nonce, act.required)


def _missing_attestation(ctx: _RequestContext, findings: _Findings, what: str) -> None:
    if ctx.required:
        findings.add(VerifierState.UNATTESTED_OR_OUT_OF_SCOPE, "required_attestation_missing",
                     f"{what} carries no attestation although the request marked it required",
                     "attestation")
    else:
        findings.add(VerifierState.UNATTESTED_OR_OUT_OF_SCOPE, "attestation_missing",
                     f"{what} carries no attestation", "attestation")


def _parse_attestation(raw: Any, findings: _Findings, path: str) -> Attestation | None:
    try:
        att = Attestation.from_json(raw)
        validate_structure(att)
    except AexError as exc:
        findings.add_error(exc, path)
        return None
    return att


def _check_common(att: Attestation, ctx: _RequestContext, resolve: Resolver,
                  config: VerifierConfig, findings: _Findings, path: str) -> None:
    """Signature, trust, request commitment, nonce echo, freshness, request transforms."""
    try:
        key = resolve(att.iss, att.kid)
    except AexError as exc:
        findings.add_error(exc, path)
    else:
        try:
            verify_attestation_signature(att, key)
        except AexError as exc:
            findings.add_error(exc, path)

    if att.request_commit != ctx.request_commit:
        findings.add(VerifierState.REQUEST_MISMATCH, "request_commit_mismatch",
                     "attested request_commit differs from the locally reconstructed commitment",
                     f"{path}.request_commit")
    if att.nonce != ctx.nonce:
        findings.add(VerifierState.TAMPERED, "nonce_mismatch",
                     "attested nonce does not echo the request nonce", f"{path}.nonce")

    if config.enforce_freshness:
        now = config.clock()
        if att.exp is not None and now > att.exp:
            findings.add(VerifierState.TAMPERED, "expired", "attestation is past its exp", f"{path}.exp")
        elif config.max_age is not None and att.iat is not None and now - att.iat > config.max_age:
            findings.add(VerifierState.TAMPERED, "expired", "attestation iat is older than max_age",
                         f"{path}.iat")

    if att.request_transforms:
        try:
            verify_request_chain(att.request_transforms, att.request_commit,
                                 att.effective_request_commit, resolve)
        except AexError as exc:
            findings.add_error(exc, path)


def _check_lineage(att: Attestation, resolve: Resolver, findings: _Findings,
                   path: str) -> list[dict[str, str]] | None:
    if not att.has_lineage:
        return None
    try:
        return verify_output_lineage(
            att.origin_output, att.output_transforms or (), att.output_commit, att.output_mode,
            (att.request_commit, att.effective_request_commit), resolve,
        )
    except AexError as exc:
        code = "lineage_" + exc.code if isinstance(exc, _KEY_ERRORS) else None
        findings.add_error(exc, path, code=code)
        return None


def _verdict(findings: _Findings, default: VerifierState, **extra) -> Verdict:
    state = findings.worst() or default
    return Verdict(state, findings.diagnostics, **extra)


def verify_nonstream(
    request: dict[str, Any],
    response: dict[str, Any],
    resolve: Resolver,
    config: VerifierConfig | None = None,
) -> Verdict:
    """Verify a non-streaming response against the request the client sent.

    ``request`` must include its ``attestation`` activation member.
    ``resolve`` maps ``(iss, kid)`` to a trusted key (see
    :class:`aex.trust.KeyResolver`).
    """
    config = config or VerifierConfig()
    findings = _Findings()

    ctx = _request_context(request, config, findings)
    if ctx is None:
        return _verdict(findings, VerifierState.UNATTESTED_OR_OUT_OF_SCOPE)

    body, raw = strip_attestation(response)
    if raw is None or raw is False:
        _missing_attestation(ctx, findings, "response")
        return _verdict(findings, VerifierState.UNATTESTED_OR_OUT_OF_SCOPE)

    att = _parse_attestation(raw, findings, "attestation")
    if att is None:
        return _verdict(findings, VerifierState.TAMPERED)
    if att.kind != TERMINAL:
        findings.add(VerifierState.TAMPERED, "not_terminal",
                     "non-stream responses must carry a terminal attestation", "attestation.kind")
        return _verdict(findings, VerifierState.TAMPERED)

    try:
        local_output = nonstream_output_commit(body)
    except NonCanonicalizable as exc:
        findings.add(VerifierState.TAMPERED, exc.code, exc.message, "response")
        local_output = None
    if att.output_mode is not OutputMode.NON_STREAM:
        findings.add(VerifierState.TAMPERED, "output_mode_mismatch",
                     f"terminal output_mode is {att.output_mode.value}, expected non_stream",
                     "attestation.output_mode")

    _check_common(att, ctx, resolve, config, findings, "attestation")
    summary = _check_lineage(att, resolve, findings, "attestation")

    if local_output is not None and att.output_commit != local_output:
        findings.add(VerifierState.TAMPERED, "output_commit_mismatch",
                     "response body does not match the attested output_commit",
                     "attestation.output_commit")
    return _verdict(findings, VerifierState.VERIFIED_COMPLETE, lineage_summary=summary)


class StreamVerifySession:
    """Single-owner verifier for one stream of JSON chunk objects.

    Per-chunk hashes are logged as they arrive and the chain is folded lazily,
    because the effective-request anchor is only learned from a checkpoint or
    the terminal attestation.
    """

    def __init__(self, request: dict[str, Any], resolve: Resolver,
                 config: VerifierConfig | None = None) -> None:
        self.config = config or VerifierConfig()
        self.resolve = resolve
        self.findings = _Findings()
        self.hashes: list[bytes] = []
        self.checkpoints: list[dict[str, Any]] = []
        self.saw_checkpoint = False
        self.saw_any_attestation = False
        self.verified_prefix_count: int | None = None
        self.terminal: Attestation | None = None
        self.terminal_index: int | None = None
        self._terminal_raw_ok = True
        self._final: Verdict | None = None
        self.ctx = _request_context(request, self.config, self.findings)

    @property
    def count(self) -> int:
        return len(self.hashes)

    @property
    def out_of_scope(self) -> bool:
        return self.ctx is None

    def current(self) -> Verdict:
        """Interim verdict without ending the stream."""
        if self._final is not None:
            return self._final
        worst = self.findings.worst()
        if worst is not None:
            return Verdict(worst, self.findings.diagnostics)
        if self.verified_prefix_count is not None:
            return Verdict(VerifierState.VERIFIED_PREFIX, [], self.verified_prefix_count)
        return Verdict(VerifierState.TRUNCATED_WITHOUT_TERMINAL,
                       [Diagnostic("in_progress", "no proof verified yet")])

    def on_chunk(self, chunk: dict[str, Any]) -> Verdict | None:
        """Absorb one committed chunk; returns a verdict when the state changes."""
        if self.ctx is None:
            return None
        before = (self.findings.worst(), self.verified_prefix_count)
        index = self.count + 1
        if self.terminal_index is not None:
            self.findings.add(VerifierState.TAMPERED, "chunk_after_terminal",
                              "terminal attestation was not on the final JSON chunk", f"chunks[{index}]")
        body, raw = strip_attestation(chunk)
        try:
            self.hashes.append(chunk_hash(index, body))
        except NonCanonicalizable as exc:
            self.findings.add(VerifierState.TAMPERED, exc.code, exc.message, f"chunks[{index}]")
            self.hashes.append(b"\x00" * 32)
        if raw is not None and raw is not False:
            self.saw_any_attestation = True
            self._on_attestation(raw, index)
        after = (self.findings.worst(), self.verified_prefix_count)
        return self.current() if after != before else None

    def on_profile_violation(self, message: str) -> Verdict | None:
        if self.config.strict_profile:
            self.findings.add(VerifierState.TAMPERED, "profile_violation", message, "stream")
            return self.current()
        return None

    def _on_attestation(self, raw: Any, index: int) -> None:
        path = f"chunks[{index}].attestation"
        kind = raw.get("kind") if isinstance(raw, dict) else None
        if kind == CHECKPOINT:
            self.saw_checkpoint = True
        att = _parse_attestation(raw, self.findings, path)
        if att is None:
            if kind == TERMINAL:
                self.terminal_index = index
                self._terminal_raw_ok = False
            return
        if att.kind == CHECKPOINT:
            self._check_checkpoint(att, index, path)
        else:
            self.terminal = att
            self.terminal_index = index

    def _check_checkpoint(self, att: Attestation, index: int, path: str) -> None:
        local = _Findings()
        _check_common(att, self.ctx, self.resolve, self.config, local, path)
        if att.chunk_count != index:
            local.add(VerifierState.TAMPERED, "chunk_count_mismatch",
                      f"checkpoint claims {att.chunk_count} chunks, {index} received", f"{path}.chunk_count")
        else:
            prefix = fold_hashes(att.request_commit, att.effective_request_commit, self.hashes[:index])
            if prefix.commitment != att.prefix_commit:
                local.add(VerifierState.TAMPERED, "prefix_commit_mismatch",
                          "received prefix does not match the checkpoint", f"{path}.prefix_commit")
        self.checkpoints.append({"index": index, "ok": not local})
        if local:
            self.findings.items.extend(local.items)
        else:
            self.verified_prefix_count = index

    def finish(self, ended_cleanly: bool = True) -> Verdict:
        if self._final is not None:
            return self._final
        self._final = self._finish(ended_cleanly)
        return self._final

    def _finish(self, ended_cleanly: bool) -> Verdict:
        f = self.findings
        if self.ctx is None:
            return _verdict(f, VerifierState.UNATTESTED_OR_OUT_OF_SCOPE)

        att = self.terminal
        if att is None:
            if self.terminal_index is not None:
                # A terminal was present but unusable (already recorded as tampered).
                return _verdict(f, VerifierState.TAMPERED)
            if self.verified_prefix_count is not None:
                f.add(VerifierState.TRUNCATED_AFTER_VERIFIED_PREFIX, "terminal_missing",
                      f"stream ended without a terminal attestation after a verified prefix of "
                      f"{self.verified_prefix_count} chunks", "stream")
                return _verdict(f, VerifierState.TRUNCATED_AFTER_VERIFIED_PREFIX,
                                verified_prefix_count=self.verified_prefix_count)
            if ended_cleanly and not self.saw_any_attestation:
                _missing_attestation(self.ctx, f, "stream")
                return _verdict(f, VerifierState.UNATTESTED_OR_OUT_OF_SCOPE)
            f.add(VerifierState.TRUNCATED_WITHOUT_TERMINAL, "terminal_missing",
                  f"stream ended after {self.count} chunks without a valid terminal attestation", "stream")
            return _verdict(f, VerifierState.TRUNCATED_WITHOUT_TERMINAL)

        path = f"chunks[{self.terminal_index}].attestation"
        lineage_mode = att.has_lineage
        try:
            validate_structure(att, stream_saw_checkpoint=self.saw_checkpoint)
        except AexError as exc:
            code = "checkpoint_lineage_mixing" if lineage_mode and self.saw_checkpoint else None
            f.add_error(exc, path, code=code)
        if att.output_mode is not OutputMode.STREAM:
            f.add(VerifierState.TAMPERED, "output_mode_mismatch",
                  f"terminal output_mode is {att.output_mode.value}, expected stream", f"{path}.output_mode")
        _check_common(att, self.ctx, self.resolve, self.config, f, path)
        summary = _check_lineage(att, self.resolve, f, path)

        if att.chunk_count != self.count:
            f.add(VerifierState.TAMPERED, "chunk_count_mismatch",
                  f"terminal claims {att.chunk_count} chunks, {self.count} received", f"{path}.chunk_count")
        chain = fold_hashes(att.request_commit, att.effective_request_commit, self.hashes)
        if chain.commitment != att.output_commit:
            f.add(VerifierState.TAMPERED, "output_commit_mismatch",
                  "delivered chunk sequence does not match the attested output_commit",
                  f"{path}.output_commit")

        # Lineage mode never exposes a verified prefix.
        prefix = None if lineage_mode else self.verified_prefix_count
        worst = f.worst()
        if worst is None:
            return Verdict(VerifierState.VERIFIED_COMPLETE, [], None, summary)
        return Verdict(worst, f.diagnostics, prefix if worst is not VerifierState.TAMPERED else None, summary)


def stream_session_start(request: dict[str, Any], resolve: Resolver,
                         config: VerifierConfig | None = None) -> StreamVerifySession:
    return StreamVerifySession(request, resolve, config)


def stream_on_chunk(session: StreamVerifySession, chunk: dict[str, Any]) -> Verdict | None:
    return session.on_chunk(chunk)


def stream_finish(session: StreamVerifySession, ended_cleanly: bool = True) -> Verdict:
    return session.finish(ended_cleanly)
