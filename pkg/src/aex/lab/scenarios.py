"""Scenario registry and the client-side driver that runs scenarios through the gateway."""

from __future__ import annotations

import json
import secrets
import statistics
import time
import uuid
from dataclasses import dataclass
from typing import Any, Iterable

import httpx

from ..errors import ScenarioConfigInvalid, TopologyUnavailable
from ..verify import VerifierState
from .common import Fault, Flow, check_fault_applies, lab_headers
from .trace import RunTrace

S = VerifierState


@dataclass(frozen=True)
class Scenario:
    name: str
    flow: Flow
    expected: VerifierState
    fault: Fault = Fault.NONE
    # required | include-tools | shorthand | off
    activation: str = "required"
    description: str = ""

    def __post_init__(self) -> None:
        check_fault_applies(self.flow, self.fault)
        if self.activation not in ("required", "include-tools", "shorthand", "off"):
            raise ScenarioConfigInvalid(f"unknown activation variant {self.activation!r}")


_ALL = [
    # Success paths benchmarked in the timing table.
    Scenario("nonstream-success", Flow.NON_STREAM, S.VERIFIED_COMPLETE,
             description="provider attests a chat.completion directly"),
    Scenario("stream-checkpoint-success", Flow.STREAM_PREFIX, S.VERIFIED_COMPLETE,
             description="source stream with a checkpoint after chunk 2 and a terminal on the last chunk"),
    Scenario("transform-chain-success", Flow.TRANSFORM_CHAIN, S.VERIFIED_COMPLETE,
             description="proxy A normalizes, proxy B injects defaults, both sign request receipts"),
    Scenario("nonstream-lineage-success", Flow.NONSTREAM_LINEAGE, S.VERIFIED_COMPLETE,
             description="provider streams, proxy A buffers and collapses into one object"),
    Scenario("stream-lineage-success", Flow.STREAM_LINEAGE, S.VERIFIED_COMPLETE,
             description="provider returns an object, proxy A repackages it as a stream"),
    # Further positive paths.
    Scenario("error-attest-success", Flow.ERROR_ATTEST, S.VERIFIED_COMPLETE,
             description="provider error object carries a non-stream terminal"),
    Scenario("nonstream-include-binding-success", Flow.NON_STREAM, S.VERIFIED_COMPLETE,
             activation="include-tools", description="top_level_include binding with tools absent"),
    Scenario("stream-shorthand-success", Flow.STREAM_PREFIX, S.VERIFIED_COMPLETE, activation="shorthand",
             description='"attestation": true activation on a stream'),
    # Negative paths.
    Scenario("nonstream-unattested", Flow.NON_STREAM, S.UNATTESTED_OR_OUT_OF_SCOPE, activation="off",
             description="client never asked for attestation"),
    Scenario("nonstream-mutate", Flow.NON_STREAM, S.TAMPERED, Fault.MUTATE_CHUNK,
             description="proxy B flips one character of the body"),
    Scenario("stream-mutate-chunk", Flow.STREAM_PREFIX, S.TAMPERED, Fault.MUTATE_CHUNK,
             description="proxy B flips one character of chunk 3"),
    Scenario("stream-drop-chunk", Flow.STREAM_PREFIX, S.TAMPERED, Fault.DROP_CHUNK,
             description="proxy B drops chunk 3"),
    Scenario("stream-reorder-chunks", Flow.STREAM_PREFIX, S.TAMPERED, Fault.REORDER_CHUNKS,
             description="proxy B swaps chunks 1 and 2"),
    Scenario("stream-truncate-after-checkpoint", Flow.STREAM_PREFIX, S.TRUNCATED_AFTER_VERIFIED_PREFIX,
             Fault.TRUNCATE_AFTER_CHECKPOINT, description="proxy B cuts the stream after chunk 3"),
    Scenario("stream-truncate-no-checkpoint", Flow.STREAM_PREFIX, S.TRUNCATED_WITHOUT_TERMINAL,
             Fault.TRUNCATE_NO_CHECKPOINT, description="proxy B cuts the stream before the checkpoint"),
    Scenario("stream-strip-terminal", Flow.STREAM_PREFIX, S.TRUNCATED_AFTER_VERIFIED_PREFIX,
             Fault.STRIP_TERMINAL, description="proxy B removes the terminal attestation"),
    Scenario("nonstream-swap-attestation", Flow.NON_STREAM, S.TAMPERED, Fault.SWAP_ATTESTATION,
             description="proxy B grafts the attestation of a run with another nonce"),
    Scenario("stream-swap-attestation", Flow.STREAM_PREFIX, S.TAMPERED, Fault.SWAP_ATTESTATION,
             description="proxy B grafts the terminal of a run with another nonce"),
    Scenario("nonstream-inject-bound-field", Flow.NON_STREAM, S.REQUEST_MISMATCH, Fault.INJECT_BOUND_FIELD,
             activation="include-tools", description="proxy B silently adds the absent bound field tools"),
    Scenario("nonstream-untrusted-issuer", Flow.NON_STREAM, S.KEY_UNAVAILABLE, Fault.UNTRUSTED_ISSUER,
             description="provider signs as an issuer outside the allowlist"),
    Scenario("nonstream-unknown-kid", Flow.NON_STREAM, S.KEY_UNAVAILABLE, Fault.UNKNOWN_KID,
             description="provider signs with a key it never published"),
    Scenario("stream-lineage-mix-checkpoint", Flow.STREAM_LINEAGE, S.TAMPERED,
             Fault.MIX_CHECKPOINT_WITH_LINEAGE, description="proxy A adds a checkpoint to a lineage stream"),
    Scenario("nonstream-wrong-nonce-echo", Flow.NON_STREAM, S.TAMPERED, Fault.WRONG_NONCE_ECHO,
             description="provider echoes a different nonce"),
]

SCENARIOS: dict[str, Scenario] = {s.name: s for s in _ALL}

BENCH_SCENARIOS = (
    "nonstream-success",
    "stream-checkpoint-success",
    "transform-chain-success",
    "nonstream-lineage-success",
    "stream-lineage-success",
)


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise ScenarioConfigInvalid(f"unknown scenario {name!r}; known: {', '.join(SCENARIOS)}") from None


def build_request(scenario: Scenario, nonce: str | None = None) -> dict[str, Any]:
    nonce = nonce or secrets.token_urlsafe(12)
    request: dict[str, Any] = {
        "model": "lab-model",
        "messages": [
            {"role": "system", "content": "Answer in one sentence."},
            {"role": "user", "content": "Summarize this document."},
        ],
        "stream": scenario.flow.client_streams,
    }
    if scenario.flow is Flow.TRANSFORM_CHAIN:
        request["max_tokens"] = 64
    if scenario.activation == "shorthand":
        request["attestation"] = True
    elif scenario.activation == "required":
        request["attestation"] = {"required": True, "nonce": nonce}
    elif scenario.activation == "include-tools":
        request["attestation"] = {
            "required": True,
            "nonce": nonce,
            "request_binding": {"mode": "top_level_include", "fields": ["messages", "model", "tools"]},
        }
    return request


@dataclass
class RunResult:
    scenario: Scenario
    run_id: str
    status: int
    client_ms: float
    first_chunk_ms: float | None
    trace: RunTrace

    @property
    def state(self) -> str:
        return self.trace.state

    @property
    def matches(self) -> bool:
        return self.state == self.scenario.expected.value


def _fetch_trace(client: httpx.Client, gateway: str, run_id: str) -> RunTrace:
    for _ in range(50):
        resp = client.get(f"{gateway}/v1/runs/{run_id}")
        if resp.status_code == 200:
            return RunTrace.from_json(resp.json())
        time.sleep(0.01)
    raise TopologyUnavailable(f"gateway never stored run {run_id}")


def run_once(gateway: str, scenario: Scenario, client: httpx.Client) -> RunResult:
    run_id = uuid.uuid4().hex
    body = json.dumps(build_request(scenario), separators=(",", ":")).encode("utf-8")
    headers = {**lab_headers(scenario.flow, scenario.fault, run_id), "content-type": "application/json"}
    url = f"{gateway}/v1/chat/completions"
    first = None
    t0 = time.perf_counter()
    try:
        if scenario.flow.client_streams:
            with client.stream("POST", url, content=body, headers=headers) as resp:
                for part in resp.iter_raw():
                    if first is None and part:
                        first = time.perf_counter() - t0
                status = resp.status_code
        else:
            resp = client.post(url, content=body, headers=headers)
            status = resp.status_code
    except httpx.HTTPError as exc:
        raise TopologyUnavailable(f"gateway request failed: {exc}") from None
    elapsed = time.perf_counter() - t0
    trace = _fetch_trace(client, gateway, run_id)
    return RunResult(scenario, run_id, status, elapsed * 1000.0,
                     None if first is None else first * 1000.0, trace)


def run_scenario(topology_or_url, scenario: Scenario | str, repeat: int = 1, warmup: int = 0,
                 client: httpx.Client | None = None) -> list[RunResult]:
    """Run ``warmup`` discarded runs, then ``repeat`` measured runs, sequentially."""
    if isinstance(scenario, str):
        scenario = get_scenario(scenario)
    if repeat < 1 or warmup < 0:
        raise ScenarioConfigInvalid("repeat must be >= 1 and warmup >= 0")
    gateway = topology_or_url if isinstance(topology_or_url, str) else topology_or_url.gateway_url
    own = client is None
    client = client or httpx.Client(timeout=30.0)
    try:
        for _ in range(warmup):
            run_once(gateway, scenario, client)
        return [run_once(gateway, scenario, client) for _ in range(repeat)]
    finally:
        if own:
            client.close()


def _median(values: Iterable[float | None]) -> float | None:
    vals = [v for v in values if v is not None]
    return statistics.median(vals) if vals else None


def summarize(results: list[RunResult]) -> dict[str, Any]:
    scenario = results[0].scenario
    verified = sum(r.state == S.VERIFIED_COMPLETE.value for r in results)
    return {
        "scenario": scenario.name,
        "expected": scenario.expected.value,
        "runs": len(results),
        "verified_complete": verified,
        "label": f"{verified}/{len(results)} verified",
        "expected_matches": sum(r.matches for r in results),
        "http_status": sorted({r.status for r in results}),
        "states": sorted({r.state for r in results}),
        "median_client_completion_ms": _median(r.client_ms for r in results),
        "median_first_chunk_ms": _median(r.first_chunk_ms for r in results) if scenario.flow.client_streams else None,
        "median_gateway_verification_ms": _median(r.trace.timings.get("gateway_verification_ms")
                                                  for r in results),
        "jwks_fetches": sorted({r.trace.jwks_fetch_count for r in results}),
        "receipts": sorted({r.trace.receipt_count for r in results}),
    }
