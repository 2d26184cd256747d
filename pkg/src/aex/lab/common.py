"""Shared lab vocabulary: flows, faults, control headers and configuration."""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

from ..errors import ScenarioConfigInvalid
from ..jcs import parse
from ..keys import SigningKey, jwks_document
from ..receipts import RequestTransformReceipt

HDR_FLOW = "x-aex-lab-flow"
HDR_FAULT = "x-aex-lab-fault"
HDR_RUN = "x-aex-lab-run-id"
HDR_EFFECTIVE = "x-aex-lab-effective-request"
HDR_REQUEST_TRANSFORMS = "x-aex-request-transforms"
HDR_OUTPUT_LINEAGE = "x-aex-output-lineage"
HDR_VERDICT = "x-aex-verdict"

SSE_TYPE = "text/event-stream"
JWKS_PATH = "/.well-known/aex-keys.json"
RUNS_DIR_ENV = "AEX_RUNS_DIR"

# Response headers each hop relays downstream unchanged.
RELAYED_HEADERS = ("content-type", HDR_OUTPUT_LINEAGE, HDR_EFFECTIVE)


class Flow(str, Enum):
    NON_STREAM = "non-stream"
    STREAM_PREFIX = "stream-prefix"
    TRANSFORM_CHAIN = "transform-chain"
    NONSTREAM_LINEAGE = "nonstream-lineage"
    STREAM_LINEAGE = "stream-lineage"
    ERROR_ATTEST = "error-attest"

    @property
    def client_streams(self) -> bool:
        return self in (Flow.STREAM_PREFIX, Flow.STREAM_LINEAGE)


class Fault(str, Enum):
    NONE = "none"
    MUTATE_CHUNK = "mutate_chunk"
    DROP_CHUNK = "drop_chunk"
    REORDER_CHUNKS = "reorder_chunks"
    TRUNCATE_AFTER_CHECKPOINT = "truncate_after_checkpoint"
    TRUNCATE_NO_CHECKPOINT = "truncate_no_checkpoint"
    STRIP_TERMINAL = "strip_terminal"
    SWAP_ATTESTATION = "swap_attestation"
    INJECT_BOUND_FIELD = "inject_bound_field"
    UNTRUSTED_ISSUER = "untrusted_issuer"
    UNKNOWN_KID = "unknown_kid"
    MIX_CHECKPOINT_WITH_LINEAGE = "mix_checkpoint_with_lineage"
    WRONG_NONCE_ECHO = "wrong_nonce_echo"


# Hop that injects each fault.
FAULT_SITE: dict[Fault, str] = {
    Fault.MUTATE_CHUNK: "proxy_b",
    Fault.DROP_CHUNK: "proxy_b",
    Fault.REORDER_CHUNKS: "proxy_b",
    Fault.TRUNCATE_AFTER_CHECKPOINT: "proxy_b",
    Fault.TRUNCATE_NO_CHECKPOINT: "proxy_b",
    Fault.STRIP_TERMINAL: "proxy_b",
    Fault.SWAP_ATTESTATION: "proxy_b",
    Fault.INJECT_BOUND_FIELD: "proxy_b",
    Fault.UNTRUSTED_ISSUER: "provider",
    Fault.UNKNOWN_KID: "provider",
    Fault.WRONG_NONCE_ECHO: "provider",
    Fault.MIX_CHECKPOINT_WITH_LINEAGE: "proxy_a",
}

_STREAM_ONLY = {
    Fault.DROP_CHUNK, Fault.REORDER_CHUNKS, Fault.TRUNCATE_AFTER_CHECKPOINT,
    Fault.TRUNCATE_NO_CHECKPOINT, Fault.STRIP_TERMINAL,
}


def check_fault_applies(flow: Flow, fault: Fault) -> None:
    if fault in _STREAM_ONLY and flow is not Flow.STREAM_PREFIX:
        raise ScenarioConfigInvalid(f"fault {fault.value} needs the stream-prefix flow, not {flow.value}")
    if fault is Fault.MIX_CHECKPOINT_WITH_LINEAGE and flow is not Flow.STREAM_LINEAGE:
        raise ScenarioConfigInvalid("mix_checkpoint_with_lineage needs the stream-lineage flow")


def lab_headers(flow: Flow, fault: Fault, run_id: str) -> dict[str, str]:
    return {HDR_FLOW: flow.value, HDR_FAULT: fault.value, HDR_RUN: run_id}


def read_flow(headers: Mapping[str, str]) -> tuple[Flow, Fault]:
    try:
        flow = Flow(headers.get(HDR_FLOW, Flow.NON_STREAM.value))
        fault = Fault(headers.get(HDR_FAULT, Fault.NONE.value))
    except ValueError as exc:
        raise ScenarioConfigInvalid(str(exc)) from None
    return flow, fault


def b64_json(obj: Any) -> str:
    raw = json.dumps(obj, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    return base64.urlsafe_b64encode(raw).rstrip(b"=").decode("ascii")


def unb64_json(text: str) -> Any:
    return parse(base64.urlsafe_b64decode(text + "=" * (-len(text) % 4)))


def encode_receipts(receipts) -> str:
    return json.dumps([r.to_json() for r in receipts], separators=(",", ":"))


def decode_request_transforms(value: str | None) -> list[RequestTransformReceipt]:
    if not value:
        return []
    return [RequestTransformReceipt.from_json(r) for r in parse(value)]


def jwks_response_body(keys: list[SigningKey]) -> dict[str, Any]:
    return jwks_document(k.verifying_key for k in keys)


@dataclass
class LabConfig:
    host: str = "127.0.0.1"
    gateway_port: int = 0
    proxy_a_port: int = 0
    proxy_b_port: int = 0
    provider_port: int = 0
    runs_dir: str | None = None
    delay_ms: int = 120
    content_chunks: int = 3
    checkpoint_after: int = 2
    key_seed: str | None = None
    jwks_max_age: int = 300
    keep_traces_in_memory: int = 1000

    def __post_init__(self) -> None:
        if self.content_chunks < 2:
            raise ScenarioConfigInvalid("streams need at least two content chunks")
        if not 1 <= self.checkpoint_after <= self.content_chunks:
            raise ScenarioConfigInvalid("checkpoint_after must fall inside the content chunks")
        if self.delay_ms < 0:
            raise ScenarioConfigInvalid("delay_ms must be non-negative")

    @property
    def stream_chunks(self) -> int:
        # Content chunks plus the final finish/usage chunk that carries the terminal.
        return self.content_chunks + 1

    @property
    def runs_path(self) -> Path | None:
        return Path(self.runs_dir) if self.runs_dir else None

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "LabConfig":
        known = {f.name for f in fields(cls)}
        extra = set(obj) - known
        if extra:
            raise ScenarioConfigInvalid(f"unknown lab config keys {sorted(extra)}")
        return cls(**obj)

    def to_json(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class IssuerIdentity:
    """One lab issuer: URL plus its published and unpublished keys."""

    iss: str
    key: SigningKey
    extra_published: list[SigningKey] = field(default_factory=list)

    @property
    def published(self) -> list[SigningKey]:
        return [self.key, *self.extra_published]


def make_key(iss: str, kid: str, seed: str | None, label: str) -> SigningKey:
    if seed is None:
        return SigningKey.generate(iss, kid)
    return SigningKey.from_label(iss, kid, f"{seed}:{label}")
