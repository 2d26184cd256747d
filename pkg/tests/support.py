"""Shared builders for the test suite: fixed keys, resolvers and attested exchanges."""

from __future__ import annotations

from typing import Any, Sequence

from aex.attestation import StreamAttester
from aex.keys import SigningKey, jwks_document
from aex.openai_profile import attest_nonstream, issuer_request_context, sse_encode
from aex.trust import IssuerTrustPolicy, JwksCache, KeyResolver, StaticJwksFetcher

ISS = "https://edge.test"
OTHER = "https://other.test"
KEY = SigningKey.from_label(ISS, "edge-1", "tests:edge")
OTHER_KEY = SigningKey.from_label(OTHER, "other-1", "tests:other")

CHAT = {"model": "m", "messages": [{"role": "user", "content": "hello"}]}


def resolver(*keys: SigningKey, trusted: Sequence[str] | None = None, cache: JwksCache | None = None):
    keys = keys or (KEY, OTHER_KEY)
    docs: dict[str, list] = {}
    for k in keys:
        docs.setdefault(k.iss, []).append(k.verifying_key)
    fetch = StaticJwksFetcher({iss: jwks_document(vks) for iss, vks in docs.items()})
    policy = IssuerTrustPolicy(allowlist=frozenset(trusted if trusted is not None else docs))
    return KeyResolver(policy, cache or JwksCache(), fetch)


def request(nonce: str | None = "n-1", stream: bool = False, **extra) -> dict[str, Any]:
    req: dict[str, Any] = {**CHAT, **extra}
    if stream:
        req["stream"] = True
    if "attestation" not in extra:
        req["attestation"] = {"required": True, "nonce": nonce} if nonce else True
    return req


def chunks(n: int, prefix: str = "w") -> list[dict[str, Any]]:
    out = [{"id": "c", "choices": [{"index": 0, "delta": {"content": f"{prefix}{i}"}}]} for i in range(1, n + 1)]
    return out


def attested_body(req: dict[str, Any], body: dict[str, Any] | None = None, key: SigningKey = KEY):
    body = body if body is not None else {"id": "x", "choices": [{"index": 0, "message": {"content": "ok"}}]}
    return attest_nonstream(body, key, issuer_request_context(req), clock=lambda: 1767225600)


def attested_stream(req: dict[str, Any], items: list[dict[str, Any]], checkpoints: Sequence[int] = (),
                    key: SigningKey = KEY, terminal: bool = True) -> tuple[list[dict[str, Any]], dict[int, Any]]:
    """Return (chunks with attestations attached, plan) for a source stream."""
    ctx = issuer_request_context(req)
    att = StreamAttester(key, ctx.request_commit, ctx.effective_request_commit, nonce=ctx.nonce,
                         clock=lambda: 1767225600)
    plan: dict[int, Any] = {}
    for i, c in enumerate(items, start=1):
        att.absorb(c)
        if i in checkpoints:
            plan[i] = att.checkpoint()
    if terminal:
        plan[len(items)] = att.terminal()
    out = [dict(c) for c in items]
    for i, a in plan.items():
        out[i - 1]["attestation"] = a.to_json()
    return out, plan


def sse_bytes(req, items, checkpoints=(), key=KEY, terminal=True, done=True) -> bytes:
    ctx = issuer_request_context(req)
    att = StreamAttester(key, ctx.request_commit, None, nonce=ctx.nonce, clock=lambda: 1767225600)
    plan = {}
    for i, c in enumerate(items, start=1):
        att.absorb(c)
        if i in checkpoints:
            plan[i] = att.checkpoint()
    if terminal:
        plan[len(items)] = att.terminal()
    return sse_encode(items, plan, done=done)
