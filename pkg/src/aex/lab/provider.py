"""Provider simulator: the source issuer at the end of the lab chain."""

from __future__ import annotations

import dataclasses
import json
import time
from typing import Any, Iterator

from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse, Response, StreamingResponse

from ..attestation import StreamAttester
from ..binding import BindingDescriptor, commit_request
from ..errors import AexError
from ..jcs import parse
from ..keys import SigningKey
from ..openai_profile import (
    PROFILE,
    IssuerRequestContext,
    attach,
    attest_error_object,
    attest_nonstream,
    attestation_failure_body,
    done_event,
    encode_event,
    issuer_request_context,
)
from ..output import OutputMode, nonstream_output_commit, stream_output_commit
from ..receipts import OriginOutputReceipt, verify_request_chain
from ..trust import KeyResolver
from .common import (
    HDR_EFFECTIVE,
    HDR_OUTPUT_LINEAGE,
    HDR_REQUEST_TRANSFORMS,
    JWKS_PATH,
    SSE_TYPE,
    Fault,
    Flow,
    IssuerIdentity,
    LabConfig,
    b64_json,
    decode_request_transforms,
    encode_receipts,
    jwks_response_body,
    read_flow,
)
from .simulator import simulate_completion, simulate_error, simulate_stream


def json_response(body: Any, status: int = 200, headers: dict[str, str] | None = None) -> Response:
    data = json.dumps(body, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    return Response(data, status_code=status, media_type="application/json", headers=headers)


def error_response(status: int, message: str, code: str = "lab_error") -> Response:
    return json_response({"error": {"message": message, "type": "invalid_request_error", "code": code}}, status)


def sse_response(events: list[bytes], delays: list[float], headers: dict[str, str]) -> StreamingResponse:
    def gen() -> Iterator[bytes]:
        for event, delay in zip(events, delays):
            if delay:
                time.sleep(delay)
            yield event

    return StreamingResponse(gen(), media_type=SSE_TYPE, headers=headers)


def add_jwks_routes(app: FastAPI, identity: IssuerIdentity, config: LabConfig, prefix: str = "") -> None:
    body = jwks_response_body(identity.published)

    @app.get(prefix + JWKS_PATH)
    def jwks() -> JSONResponse:
        return JSONResponse(body, headers={"cache-control": f"public, max-age={config.jwks_max_age}"})


class Provider:
    def __init__(self, identity: IssuerIdentity, rogue: IssuerIdentity, hidden_key: SigningKey,
                 config: LabConfig, resolver: KeyResolver) -> None:
        self.identity = identity
        self.rogue = rogue
        self.hidden_key = hidden_key
        self.config = config
        self.resolver = resolver

    def _key(self, fault: Fault) -> SigningKey:
        if fault is Fault.UNTRUSTED_ISSUER:
            return self.rogue.key
        if fault is Fault.UNKNOWN_KID:
            return self.hidden_key
        return self.identity.key

    def handle(self, raw: bytes, headers: dict[str, str]) -> Response:
        try:
            request = parse(raw)
            if not isinstance(request, dict):
                raise ValueError("request body must be a JSON object")
            flow, fault = read_flow(headers)
            receipts = decode_request_transforms(headers.get(HDR_REQUEST_TRANSFORMS))
            ctx = issuer_request_context(request, receipts)
        except (ValueError, AexError) as exc:
            return error_response(400, str(exc))

        if ctx is not None and receipts:
            try:
                verify_request_chain(receipts, ctx.request_commit, ctx.effective_request_commit, self.resolver)
            except AexError as exc:
                if ctx.required:
                    return json_response(attestation_failure_body(exc), 502)
                ctx = None

        out_headers: dict[str, str] = {}
        if receipts:
            out_headers[HDR_EFFECTIVE] = b64_json(request)
        if ctx is None:
            seed = commit_request(request, BindingDescriptor.full(), None)
        else:
            seed = ctx.effective_request_commit or ctx.request_commit
            if fault is Fault.WRONG_NONCE_ECHO:
                ctx = dataclasses.replace(ctx, nonce="forged-" + (ctx.nonce or "nonce"))
        key = self._key(fault)

        try:
            if flow is Flow.ERROR_ATTEST:
                body = attest_error_object(simulate_error(seed), key, ctx, resolve=self.resolver)
                return json_response(body, 400, out_headers)
            if flow is Flow.NONSTREAM_LINEAGE:
                return self._origin_stream(seed, request, ctx, key, out_headers)
            if flow is Flow.STREAM_LINEAGE:
                return self._origin_object(seed, request, ctx, key, out_headers)
            if request.get("stream") is True:
                return self._attested_stream(seed, request, ctx, key, out_headers)
            body = simulate_completion(seed, request)
            if ctx is not None:
                body = attest_nonstream(body, key, ctx, resolve=self.resolver)
            return json_response(body, 200, out_headers)
        except AexError as exc:
            if ctx is not None and ctx.required:
                return json_response(attestation_failure_body(exc), 502)
            raise

    def _origin_receipt(self, ctx: IssuerRequestContext, key: SigningKey, mode: OutputMode,
                        commit) -> OriginOutputReceipt:
        return OriginOutputReceipt(
            profile=PROFILE, iss=key.iss, request_commit=ctx.request_commit,
            effective_request_commit=ctx.effective_request_commit,
            output_mode=mode, output_commit=commit,
        ).signed(key)

    def _origin_stream(self, seed, request, ctx, key, headers) -> Response:
        chunks = simulate_stream(seed, request, self.config.content_chunks)
        if ctx is not None:
            commit, _ = stream_output_commit(ctx.request_commit, ctx.effective_request_commit, chunks)
            receipt = self._origin_receipt(ctx, key, OutputMode.STREAM, commit)
            headers[HDR_OUTPUT_LINEAGE] = encode_receipts([receipt])
        events = [encode_event(c) for c in chunks] + [done_event()]
        return sse_response(events, [0.0] * len(events), headers)

    def _origin_object(self, seed, request, ctx, key, headers) -> Response:
        body = simulate_completion(seed, request)
        if ctx is not None:
            receipt = self._origin_receipt(ctx, key, OutputMode.NON_STREAM, nonstream_output_commit(body))
            headers[HDR_OUTPUT_LINEAGE] = encode_receipts([receipt])
        return json_response(body, 200, headers)

    def _attested_stream(self, seed, request, ctx, key, headers) -> Response:
        from ..openai_profile import parse_activation

        cfg = self.config
        chunks = simulate_stream(seed, request, cfg.content_chunks)
        plan: dict[int, Any] = {}
        if ctx is not None and parse_activation(request).include_stream_attestation:
            attester = StreamAttester(key, ctx.request_commit, ctx.effective_request_commit,
                                      nonce=ctx.nonce, request_transforms=ctx.request_transforms)
            for i, chunk in enumerate(chunks, start=1):
                attester.absorb(chunk)
                if i == cfg.checkpoint_after:
                    plan[i] = attester.checkpoint()
            plan[len(chunks)] = attester.terminal(resolve=self.resolver)
        events = [encode_event(attach(c, plan.get(i))) for i, c in enumerate(chunks, start=1)]
        events.append(done_event())
        delay = cfg.delay_ms / 1000.0
        delays = [delay if i > cfg.checkpoint_after else 0.0 for i in range(1, len(chunks) + 1)] + [0.0]
        return sse_response(events, delays, headers)


def create_provider_app(provider: Provider) -> FastAPI:
    app = FastAPI(title="aex lab provider")
    add_jwks_routes(app, provider.identity, provider.config)
    rogue_prefix = provider.rogue.iss[len(provider.identity.iss):]
    add_jwks_routes(app, provider.rogue, provider.config, prefix=rogue_prefix)

    @app.get("/healthz")
    def healthz() -> dict[str, str]:
        return {"status": "ok", "role": "provider", "iss": provider.identity.iss}

    @app.post("/v1/chat/completions")
    async def chat(request: Request) -> Response:
        raw = await request.body()
        return await run_in_threadpool(provider.handle, raw, dict(request.headers))

    return app
