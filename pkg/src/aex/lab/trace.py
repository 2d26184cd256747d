"""Per-run traces: recording, persistence and offline replay."""

from __future__ import annotations

import json
import os
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from ..jcs import parse
from ..trust import FetchResult, Fetcher, IssuerTrustPolicy, JwksCache, KeyResolver
from ..verify import Verdict, VerifierConfig, verify_nonstream


class RecordingFetcher:
    """Wraps a fetch capability and keeps every JWKS response for replay."""

    def __init__(self, inner: Fetcher) -> None:
        self.inner = inner
        self.records: list[dict[str, Any]] = []
        self._lock = threading.Lock()

    def __call__(self, url: str) -> FetchResult:
        try:
            result = self.inner(url)
        except Exception as exc:
            with self._lock:
                self.records.append({"url": url, "error": str(exc)})
            raise
        with self._lock:
            self.records.append({"url": url, "status": result.status, "headers": dict(result.headers),
                                 "body": result.body.decode("utf-8", "replace")})
        return result


class ReplayFetcher:
    """Serves recorded JWKS responses in order per URL; never touches the network."""

    def __init__(self, records: list[dict[str, Any]]) -> None:
        self._queues: dict[str, list[dict[str, Any]]] = {}
        for rec in records:
            self._queues.setdefault(rec["url"], []).append(rec)

    def __call__(self, url: str) -> FetchResult:
        from ..errors import KeyUnavailable

        queue = self._queues.get(url)
        if not queue:
            raise KeyUnavailable(f"no recorded JWKS response for {url}")
        rec = queue.pop(0) if len(queue) > 1 else queue[0]
        if "error" in rec:
            raise KeyUnavailable(rec["error"])
        return FetchResult(rec["status"], rec["headers"], rec["body"].encode("utf-8"))


def config_to_json(config: VerifierConfig) -> dict[str, Any]:
    return {"require_activation": config.require_activation, "strict_profile": config.strict_profile,
            "enforce_freshness": config.enforce_freshness, "max_age": config.max_age}


def config_from_json(obj: dict[str, Any]) -> VerifierConfig:
    return VerifierConfig(**obj)


@dataclass
class RunTrace:
    run_id: str
    flow: str
    fault: str
    request_text: str
    request: Any = None
    effective_request: Any = None
    stream: bool = False
    status: int = 0
    response_text: str = ""
    transport_ok: bool = True
    events: list[str] = field(default_factory=list)
    chunk_hashes: list[str] = field(default_factory=list)
    checkpoints: list[dict[str, Any]] = field(default_factory=list)
    states: list[dict[str, Any]] = field(default_factory=list)
    verdict: dict[str, Any] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    sizes: dict[str, int] = field(default_factory=dict)
    jwks_fetch_count: int = 0
    jwks_fetches: list[dict[str, Any]] = field(default_factory=list)
    receipt_count: int = 0
    trust_policy: dict[str, Any] = field(default_factory=dict)
    verifier_config: dict[str, Any] = field(default_factory=dict)

    @property
    def state(self) -> str:
        return self.verdict.get("state", "")

    def to_json(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "RunTrace":
        return cls(**obj)


class TraceStore:
    """Keeps recent traces in memory and writes one JSON file per run when a directory is set."""

    def __init__(self, runs_dir: str | os.PathLike | None = None, keep: int = 1000) -> None:
        self.runs_dir = Path(runs_dir) if runs_dir else None
        if self.runs_dir is not None:
            self.runs_dir.mkdir(parents=True, exist_ok=True)
        self.keep = keep
        self._traces: dict[str, RunTrace] = {}
        self._lock = threading.Lock()

    def put(self, trace: RunTrace) -> None:
        with self._lock:
            self._traces[trace.run_id] = trace
            while len(self._traces) > self.keep:
                self._traces.pop(next(iter(self._traces)))
        if self.runs_dir is not None:
            save_trace(trace, self.runs_dir)

    def get(self, run_id: str) -> RunTrace | None:
        with self._lock:
            trace = self._traces.get(run_id)
        if trace is None and self.runs_dir is not None:
            path = self.runs_dir / f"{run_id}.json"
            if path.is_file():
                trace = load_trace(path)
        return trace


def save_trace(trace: RunTrace, runs_dir: str | os.PathLike) -> Path:
    path = Path(runs_dir) / f"{trace.run_id}.json"
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(trace.to_json(), ensure_ascii=False, indent=1), encoding="utf-8")
    tmp.replace(path)
    return path


def load_trace(path: str | os.PathLike) -> RunTrace:
    return RunTrace.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def replay_trace(trace: RunTrace) -> Verdict:
    """Re-verify a persisted run offline, using the recorded JWKS responses."""
    from ..openai_profile import SseStreamVerifier

    policy = IssuerTrustPolicy.from_json(trace.trust_policy)
    resolver = KeyResolver(policy, JwksCache(), ReplayFetcher(trace.jwks_fetches))
    config = config_from_json(trace.verifier_config)
    request = parse(trace.request_text)
    if trace.stream:
        verifier = SseStreamVerifier(request, resolver, config)
        verifier.feed(trace.response_text.encode("utf-8"))
        return verifier.finish(trace.transport_ok)
    return verify_response_text(request, trace.response_text, resolver, config)


def verify_response_text(request: dict[str, Any], text: str, resolver, config: VerifierConfig) -> Verdict:
    """Non-stream verification of a raw body; unparseable bodies are tampered."""
    from ..verify import Diagnostic, VerifierState

    try:
        response = parse(text)
        if not isinstance(response, dict):
            raise ValueError("response body is not a JSON object")
    except ValueError as exc:
        return Verdict(VerifierState.TAMPERED, [Diagnostic("response_unparseable", str(exc), "response")])
    return verify_nonstream(request, response, resolver, config)
