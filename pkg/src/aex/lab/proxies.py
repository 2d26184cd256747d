"""Trusted proxies A and B.

Proxy A sits next to the gateway.  It normalizes requests in the
transform-chain flow and performs the output transforms of the lineage flows
(buffer-and-collapse, repackage-as-stream).  Proxy B injects defaults in the
transform-chain flow and is where data-path faults are injected.
"""

from __future__ import annotations

import json
from typing import Any, Iterator

import httpx
from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import Response, StreamingResponse

from ..attestation import StreamAttester, issue_checkpoint
from ..binding import commit_request
from ..errors import AexError
from ..jcs import ATTESTATION_MEMBER, parse, strip_attestation
from ..openai_profile import (
    SseDecoder,
    attach,
    attest_nonstream,
    attestation_failure_body,
    done_event,
    encode_event,
    issuer_request_context,
    parse_activation,
    sse_decode,
)
from ..output import OutputMode, nonstream_output_commit, stream_output_commit
from ..receipts import OriginOutputReceipt, OutputTransformReceipt, RequestTransformReceipt
from ..trust import KeyResolver
from .common import (
    FAULT_SITE,
    HDR_FAULT,
    HDR_FLOW,
    HDR_OUTPUT_LINEAGE,
    HDR_REQUEST_TRANSFORMS,
    HDR_RUN,
    RELAYED_HEADERS,
    SSE_TYPE,
    Fault,
    Flow,
    IssuerIdentity,
    LabConfig,
    decode_request_transforms,
    encode_receipts,
    read_flow,
)
from .provider import add_jwks_routes, error_response, json_response, sse_response
from .transforms import (
    COLLAPSE_POLICY,
    INJECT_DEFAULTS_POLICY,
    INJECTED_TOOLS,
    NORMALIZE_POLICY,
    REPACKAGE_POLICY,
    collapse_stream,
    inject_defaults,
    mutate_json,
    normalize_request,
    repackage_as_stream,
)


def _relayed(upstream: httpx.Response, skip: tuple[str, ...] = ()) -> dict[str, str]:
    return {h: upstream.headers[h] for h in RELAYED_HEADERS
            if h in upstream.headers and h != "content-type" and h not in skip}


def _is_sse(upstream: httpx.Response) -> bool:
    return upstream.headers.get("content-type", "").startswith(SSE_TYPE)


def _origin_from(upstream: httpx.Response) -> OriginOutputReceipt | None:
    raw = upstream.headers.get(HDR_OUTPUT_LINEAGE)
    if not raw:
        return None
    items = parse(raw)
    return OriginOutputReceipt.from_json(items[0]) if items else None


class Proxy:
    def __init__(self, role: str, identity: IssuerIdentity, upstream: str, config: LabConfig,
                 resolver: KeyResolver, client: httpx.Client | None = None) -> None:
        if role not in ("proxy_a", "proxy_b"):
            raise ValueError(f"unknown proxy role {role!r}")
        self.role = role
        self.identity = identity
        self.upstream = upstream.rstrip("/") + "/v1/chat/completions"
        self.config = config
        self.resolver = resolver
        self.client = client or httpx.Client(timeout=30.0)

    @property
    def key(self):
        return self.identity.key

    # -- request path --------------------------------------------------------

    def _rewrite(self, request: dict[str, Any], flow: Flow, fault: Fault,
                 receipts: list[RequestTransformReceipt]) -> dict[str, Any]:
        if flow is Flow.TRANSFORM_CHAIN:
            rewrite, policy = ((normalize_request, NORMALIZE_POLICY) if self.role == "proxy_a"
                               else (inject_defaults, INJECT_DEFAULTS_POLICY))
            new = rewrite(request)
            act = parse_activation(request)
            if act.enabled:
                receipt = RequestTransformReceipt(
                    iss=self.key.iss,
                    in_request_commit=commit_request(request, act.binding, act.nonce),
                    out_request_commit=commit_request(new, act.binding, act.nonce),
                    policy=policy,
                ).signed(self.key)
                receipts.append(receipt)
            request = new
        if fault is Fault.INJECT_BOUND_FIELD and self.role == "proxy_b":
            request = {**request, "tools": INJECTED_TOOLS}  # silent, no receipt
        return request

    def _send(self, request: dict[str, Any], flow: Flow, fault: Fault, run_id: str,
              receipts: list[RequestTransformReceipt]) -> httpx.Response:
        headers = {HDR_FLOW: flow.value, HDR_FAULT: fault.value, HDR_RUN: run_id,
                   "content-type": "application/json"}
        if receipts:
            headers[HDR_REQUEST_TRANSFORMS] = encode_receipts(receipts)
        body = json.dumps(request, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
        req = self.client.build_request("POST", self.upstream, content=body, headers=headers)
        return self.client.send(req, stream=True)

    def handle(self, raw: bytes, headers: dict[str, str]) -> Response:
        try:
            request = parse(raw)
            if not isinstance(request, dict):
                raise ValueError("request body must be a JSON object")
            flow, fault = read_flow(headers)
            receipts = decode_request_transforms(headers.get(HDR_REQUEST_TRANSFORMS))
            original = request
            request = self._rewrite(request, flow, fault, receipts)
        except (ValueError, AexError) as exc:
            return error_response(400, str(exc))
        run_id = headers.get(HDR_RUN, "")
        try:
            upstream = self._send(request, flow, fault, run_id, receipts)
        except httpx.HTTPError as exc:
            return error_response(502, f"{self.role} upstream unavailable: {exc}", "topology_unavailable")

        if self.role == "proxy_a" and flow is Flow.NONSTREAM_LINEAGE:
            return self._collapse(upstream, original)
        if self.role == "proxy_a" and flow is Flow.STREAM_LINEAGE:
            return self._repackage(upstream, original, fault)
        if FAULT_SITE.get(fault) == "proxy_b" and self.role == "proxy_b" and fault is not Fault.INJECT_BOUND_FIELD:
            return self._faulty(upstream, request, flow, fault, run_id, receipts)
        return self._passthrough(upstream)

    # -- response path -------------------------------------------------------

    def _passthrough(self, upstream: httpx.Response) -> Response:
        headers = _relayed(upstream)
        if _is_sse(upstream):
            def gen() -> Iterator[bytes]:
                try:
                    yield from upstream.iter_raw()
                finally:
                    upstream.close()

            return StreamingResponse(gen(), status_code=upstream.status_code, media_type=SSE_TYPE,
                                     headers=headers)
        content = upstream.read()
        upstream.close()
        return Response(content, status_code=upstream.status_code,
                        media_type=upstream.headers.get("content-type"), headers=headers)

    def _collapse(self, upstream: httpx.Response, request: dict[str, Any]) -> Response:
        """stream -> non_stream under ``buffer-and-collapse/v1``."""
        try:
            data = upstream.read()
        finally:
            upstream.close()
        headers = _relayed(upstream, skip=(HDR_OUTPUT_LINEAGE,))
        if not _is_sse(upstream):
            return Response(data, status_code=upstream.status_code,
                            media_type=upstream.headers.get("content-type"), headers=headers)
        chunks = [ev.parsed for ev in sse_decode(data) if ev.is_chunk]
        collapsed = collapse_stream(chunks)
        ctx = issuer_request_context(request)
        origin = _origin_from(upstream)
        if ctx is None or origin is None:
            return json_response(collapsed, 200, headers)
        try:
            received, _ = stream_output_commit(origin.request_commit, origin.effective_request_commit, chunks)
            if received != origin.output_commit:
                raise AexError("upstream stream does not match its origin_output receipt")
            transform = OutputTransformReceipt(
                iss=self.key.iss, request_commit=ctx.request_commit,
                effective_request_commit=ctx.effective_request_commit,
                in_output_mode=OutputMode.STREAM, in_output_commit=origin.output_commit,
                out_output_mode=OutputMode.NON_STREAM, out_output_commit=nonstream_output_commit(collapsed),
                policy=COLLAPSE_POLICY,
            ).signed(self.key)
            body = attest_nonstream(collapsed, self.key, ctx, origin_output=origin,
                                    output_transforms=[transform], resolve=self.resolver)
        except AexError as exc:
            if ctx.required:
                return json_response(attestation_failure_body(exc), 502)
            body = collapsed
        return json_response(body, 200, headers)

    def _repackage(self, upstream: httpx.Response, request: dict[str, Any], fault: Fault) -> Response:
        """non_stream -> stream under ``repackage-as-stream/v1``."""
        try:
            data = upstream.read()
        finally:
            upstream.close()
        headers = _relayed(upstream, skip=(HDR_OUTPUT_LINEAGE,))
        if upstream.status_code != 200 or _is_sse(upstream):
            return Response(data, status_code=upstream.status_code,
                            media_type=upstream.headers.get("content-type"), headers=headers)
        cfg = self.config
        body, _ = strip_attestation(parse(data))
        chunks = repackage_as_stream(body, cfg.content_chunks)
        ctx = issuer_request_context(request)
        origin = _origin_from(upstream)
        plan: dict[int, Any] = {}
        if ctx is not None and origin is not None:
            try:
                if nonstream_output_commit(body) != origin.output_commit:
                    raise AexError("upstream body does not match its origin_output receipt")
                attester = StreamAttester(self.key, ctx.request_commit, ctx.effective_request_commit,
                                          nonce=ctx.nonce, lineage_mode=True)
                for i, chunk in enumerate(chunks, start=1):
                    attester.absorb(chunk)
                    if fault is Fault.MIX_CHECKPOINT_WITH_LINEAGE and i == cfg.checkpoint_after:
                        # Deliberately illegal: a prefix checkpoint inside a lineage stream.
                        plan[i] = issue_checkpoint(self.key, attester.chain, nonce=ctx.nonce)
                commit = attester.chain.commitment
                transform = OutputTransformReceipt(
                    iss=self.key.iss, request_commit=ctx.request_commit,
                    effective_request_commit=ctx.effective_request_commit,
                    in_output_mode=OutputMode.NON_STREAM, in_output_commit=origin.output_commit,
                    out_output_mode=OutputMode.STREAM, out_output_commit=commit,
                    policy=REPACKAGE_POLICY,
                ).signed(self.key)
                plan[len(chunks)] = attester.terminal(origin_output=origin, output_transforms=[transform],
                                                      resolve=self.resolver)
            except AexError as exc:
                if ctx.required:
                    return json_response(attestation_failure_body(exc), 502)
                plan = {}
        events = [encode_event(attach(c, plan.get(i))) for i, c in enumerate(chunks, start=1)]
        events.append(done_event())
        delay = cfg.delay_ms / 1000.0
        delays = [delay if i > cfg.checkpoint_after else 0.0 for i in range(1, len(chunks) + 1)] + [0.0]
        return sse_response(events, delays, headers)

    # -- fault injection (proxy B) ----------------------------------------------

    def _swap_source(self, request: dict[str, Any], flow: Flow, run_id: str,
                     receipts: list[RequestTransformReceipt]) -> Any:
        """Fetch the same request with another nonce; returns its attestation object."""
        act = request.get(ATTESTATION_MEMBER)
        member = dict(act) if isinstance(act, dict) else {}
        member["nonce"] = "swap-" + str(member.get("nonce", "run"))
        other = self._send({**request, ATTESTATION_MEMBER: member}, flow, Fault.NONE, run_id + "-swap", receipts)
        try:
            data = other.read()
        finally:
            other.close()
        if _is_sse(other):
            for ev in sse_decode(data):
                att = ev.parsed.get(ATTESTATION_MEMBER) if ev.is_chunk else None
                if isinstance(att, dict) and att.get("kind") == "terminal":
                    return att
            return None
        return parse(data).get(ATTESTATION_MEMBER)

    def _faulty(self, upstream: httpx.Response, request: dict[str, Any], flow: Flow, fault: Fault,
                run_id: str, receipts: list[RequestTransformReceipt]) -> Response:
        headers = _relayed(upstream)
        swapped = None
        if fault is Fault.SWAP_ATTESTATION:
            swapped = self._swap_source(request, flow, run_id, receipts)

        if not _is_sse(upstream):
            try:
                data = upstream.read()
            finally:
                upstream.close()
            body = parse(data)
            if fault is Fault.MUTATE_CHUNK:
                body = mutate_json(body)
            elif fault is Fault.SWAP_ATTESTATION and swapped is not None:
                body = {**body, ATTESTATION_MEMBER: swapped}
            return json_response(body, upstream.status_code, headers)

        cfg = self.config
        target = cfg.content_chunks  # last content chunk, after the checkpoint

        def gen() -> Iterator[bytes]:
            decoder = SseDecoder()
            index = 0
            held: bytes | None = None
            try:
                for raw in upstream.iter_raw():
                    for ev in decoder.feed(raw):
                        if not ev.is_chunk:
                            yield encode_event(ev.data)
                            continue
                        index += 1
                        if fault is Fault.TRUNCATE_NO_CHECKPOINT and index >= cfg.checkpoint_after:
                            return
                        chunk = ev.parsed
                        if fault is Fault.MUTATE_CHUNK and index == target:
                            chunk = mutate_json(chunk)
                        elif fault is Fault.DROP_CHUNK and index == target:
                            continue
                        elif fault is Fault.REORDER_CHUNKS and index == 1:
                            held = encode_event(chunk)
                            continue
                        elif fault is Fault.STRIP_TERMINAL:
                            att = chunk.get(ATTESTATION_MEMBER)
                            if isinstance(att, dict) and att.get("kind") == "terminal":
                                chunk = {k: v for k, v in chunk.items() if k != ATTESTATION_MEMBER}
                        elif fault is Fault.SWAP_ATTESTATION and swapped is not None:
                            att = chunk.get(ATTESTATION_MEMBER)
                            if isinstance(att, dict) and att.get("kind") == "terminal":
                                chunk = {**chunk, ATTESTATION_MEMBER: swapped}
                        yield encode_event(chunk)
                        if held is not None and index == 2:
                            yield held
                            held = None
                        if fault is Fault.TRUNCATE_AFTER_CHECKPOINT and index == cfg.checkpoint_after + 1:
                            return
            finally:
                upstream.close()

        return StreamingResponse(gen(), status_code=upstream.status_code, media_type=SSE_TYPE, headers=headers)


def create_proxy_app(proxy: Proxy) -> FastAPI:
    app = FastAPI(title=f"aex lab {proxy.role}")
    add_jwks_routes(app, proxy.identity, proxy.config)

    @app.get("/healthz")
    def healthz() -> dict[str, str]:
        return {"status": "ok", "role": proxy.role, "iss": proxy.identity.iss}

    @app.post("/v1/chat/completions")
    async def chat(request: Request) -> Response:
        raw = await request.body()
        return await run_in_threadpool(proxy.handle, raw, dict(request.headers))

    return app
