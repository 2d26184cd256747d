"""Gateway: the verifier in front of the lab chain.

It forwards client requests to proxy A, verifies the returned body or SSE
stream against the request the client sent, relays the bytes unchanged and
stores a per-run trace.  The JWKS cache is scoped to one run so fetch counts
per scenario are observable.
"""

from __future__ import annotations

import time
import uuid
from typing import Any, Iterator

import httpx
from fastapi import FastAPI, HTTPException, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import Response, StreamingResponse

from ..jcs import ATTESTATION_MEMBER, jcs_serialize, parse
from ..openai_profile import SseStreamVerifier
from ..trust import IssuerTrustPolicy, JwksCache, KeyResolver, httpx_fetcher
from ..verify import VerifierConfig
from .common import HDR_EFFECTIVE, HDR_FAULT, HDR_FLOW, HDR_RUN, HDR_VERDICT, SSE_TYPE, unb64_json
from .provider import error_response
from .trace import RecordingFetcher, RunTrace, TraceStore, config_to_json, verify_response_text


def _receipt_count(att: Any) -> int:
    if not isinstance(att, dict):
        return 0
    n = len(att.get("request_transforms") or ()) + len(att.get("output_transforms") or ())
    return n


def _attestation_bytes(obj: Any) -> int:
    att = obj.get(ATTESTATION_MEMBER) if isinstance(obj, dict) else None
    if not isinstance(att, dict):
        return 0
    try:
        return len(jcs_serialize(att))
    except ValueError:
        return 0


class Gateway:
    def __init__(self, upstream: str, policy: IssuerTrustPolicy, store: TraceStore,
                 config: VerifierConfig | None = None, client: httpx.Client | None = None) -> None:
        self.upstream = upstream.rstrip("/") + "/v1/chat/completions"
        self.policy = policy
        self.store = store
        self.config = config or VerifierConfig()
        self.client = client or httpx.Client(timeout=30.0)

    def _resolver(self) -> tuple[KeyResolver, RecordingFetcher, JwksCache]:
        recorder = RecordingFetcher(httpx_fetcher(self.client))
        cache = JwksCache()
        return KeyResolver(self.policy, cache, recorder), recorder, cache

    def handle(self, raw: bytes, headers: dict[str, str]) -> Response:
        t_start = time.perf_counter()
        try:
            request = parse(raw)
            if not isinstance(request, dict):
                raise ValueError("request body must be a JSON object")
        except ValueError as exc:
            return error_response(400, str(exc))
        run_id = headers.get(HDR_RUN) or uuid.uuid4().hex
        fwd = {h: headers[h] for h in (HDR_FLOW, HDR_FAULT) if h in headers}
        fwd[HDR_RUN] = run_id
        fwd["content-type"] = "application/json"
        try:
            upstream = self.client.send(
                self.client.build_request("POST", self.upstream, content=raw, headers=fwd), stream=True)
        except httpx.HTTPError as exc:
            return error_response(502, f"gateway upstream unavailable: {exc}", "topology_unavailable")

        resolver, recorder, cache = self._resolver()
        trace = RunTrace(
            run_id=run_id,
            flow=headers.get(HDR_FLOW, "non-stream"),
            fault=headers.get(HDR_FAULT, "none"),
            request_text=raw.decode("utf-8"),
            request=request,
            stream=upstream.headers.get("content-type", "").startswith(SSE_TYPE),
            status=upstream.status_code,
            trust_policy=self.policy.to_json(),
            verifier_config=config_to_json(self.config),
        )
        if HDR_EFFECTIVE in upstream.headers:
            try:
                trace.effective_request = unb64_json(upstream.headers[HDR_EFFECTIVE])
            except ValueError:
                trace.effective_request = None
        out_headers = {HDR_RUN: run_id}

        def finalize(verdict, verify_s: float, first_byte_s: float | None) -> None:
            trace.verdict = verdict.to_json()
            trace.jwks_fetch_count = cache.fetch_count
            trace.jwks_fetches = recorder.records
            trace.timings = {
                "gateway_verification_ms": verify_s * 1000.0,
                "gateway_total_ms": (time.perf_counter() - t_start) * 1000.0,
            }
            if first_byte_s is not None:
                trace.timings["upstream_first_byte_ms"] = first_byte_s * 1000.0
            trace.sizes["request_bytes"] = len(raw)
            trace.sizes["response_bytes"] = len(trace.response_text.encode("utf-8"))
            self.store.put(trace)

        if not trace.stream:
            data = upstream.read()
            upstream.close()
            first_byte = time.perf_counter() - t_start
            trace.response_text = data.decode("utf-8", "replace")
            t0 = time.perf_counter()
            verdict = verify_response_text(request, trace.response_text, resolver, self.config)
            verify_s = time.perf_counter() - t0
            try:
                body = parse(trace.response_text)
            except ValueError:
                body = None
            trace.receipt_count = _receipt_count(body.get(ATTESTATION_MEMBER) if isinstance(body, dict) else None)
            trace.sizes["attestation_bytes"] = _attestation_bytes(body)
            trace.states = [{"event": 0, "state": verdict.state.value, "final": True}]
            finalize(verdict, verify_s, first_byte)
            out_headers[HDR_VERDICT] = verdict.state.value
            return Response(data, status_code=upstream.status_code,
                            media_type=upstream.headers.get("content-type"), headers=out_headers)

        verifier = SseStreamVerifier(request, resolver, self.config)

        def gen() -> Iterator[bytes]:
            parts: list[bytes] = []
            verify_s = 0.0
            first_byte = None
            transport_ok = True
            try:
                for part in upstream.iter_raw():
                    if first_byte is None:
                        first_byte = time.perf_counter() - t_start
                    parts.append(part)
                    t0 = time.perf_counter()
                    verifier.feed(part)
                    verify_s += time.perf_counter() - t0
                    yield part
            except httpx.HTTPError:
                transport_ok = False
            finally:
                upstream.close()
                t0 = time.perf_counter()
                verdict = verifier.finish(transport_ok)
                verify_s += time.perf_counter() - t0
                session = verifier.session
                trace.response_text = b"".join(parts).decode("utf-8", "replace")
                trace.transport_ok = transport_ok
                trace.events = [ev.data for ev in verifier.events]
                trace.chunk_hashes = [h.hex() for h in session.hashes]
                trace.checkpoints = list(session.checkpoints)
                trace.states = list(verifier.timeline)
                att_sizes = sum(_attestation_bytes(ev.parsed) for ev in verifier.events if ev.is_chunk)
                trace.sizes["attestation_bytes"] = att_sizes
                terminal = session.terminal
                trace.receipt_count = _receipt_count(terminal.to_json() if terminal else None)
                finalize(verdict, verify_s, first_byte)

        return StreamingResponse(gen(), status_code=upstream.status_code, media_type=SSE_TYPE,
                                 headers=out_headers)


def create_gateway_app(gateway: Gateway) -> FastAPI:
    app = FastAPI(title="aex lab gateway")

    @app.get("/healthz")
    def healthz() -> dict[str, str]:
        return {"status": "ok", "role": "gateway"}

    @app.get("/v1/runs/{run_id}")
    def get_run(run_id: str) -> dict[str, Any]:
        trace = gateway.store.get(run_id)
        if trace is None:
            raise HTTPException(404, f"no run {run_id}")
        return trace.to_json()

    @app.post("/v1/chat/completions")
    async def chat(request: Request) -> Response:
        raw = await request.body()
        return await run_in_threadpool(gateway.handle, raw, dict(request.headers))

    return app
